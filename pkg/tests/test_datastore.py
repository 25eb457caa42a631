import json

import numpy as np
import pytest

from moescale.datastore import (
    ExperimentRecord,
    GridSpec,
    deduplicate,
    format_tags,
    generate_campaign,
    ingest,
    ingest_text,
    parse_tags,
)
from moescale.errors import DomainError, SchemaError
from moescale.laws import FactorPoint, eval_joint_loss

HEADER = "N,D,Na,G,S,loss,id,tags\n"


class TestTags:
    def test_parse(self):
        assert parse_tags("tier=fit;sweep=ND") == {"tier": "fit", "sweep": "ND"}
        assert parse_tags(None) == {}
        assert parse_tags(float("nan")) == {}

    def test_format(self):
        assert format_tags({"tier": "fit", "seed": "3"}) == "tier=fit;seed=3"


class TestGenerateCampaign:
    def test_layout(self, campaign):
        assert len(campaign) == 446
        tiers = [r.tags["tier"] for r in campaign.records]
        assert tiers.count("fit") == 268
        assert tiers.count("gsweep") == 90
        assert tiers.count("validation") == 88
        assert len({r.id for r in campaign.records}) == 446

    def test_sweeps(self, campaign):
        sizes = {sweep: len(campaign.select(tier="fit", sweep=sweep)) for sweep in ("ND", "Na", "S", "random")}
        assert sizes == {"ND": 60, "Na": 64, "S": 64, "random": 80}

    def test_noiseless_losses_follow_the_law(self, campaign, constants):
        for record in campaign.records[::37]:
            assert record.loss == eval_joint_loss(constants, record.point)

    def test_reproducible(self, constants):
        first = generate_campaign(constants, sigma=0.01, seed=5)
        second = generate_campaign(constants, sigma=0.01, seed=5)
        assert [r.loss for r in first.records] == [r.loss for r in second.records]
        other = generate_campaign(constants, sigma=0.01, seed=6)
        assert [r.loss for r in first.records] != [r.loss for r in other.records]

    def test_noise_level(self, constants, campaign):
        noisy = generate_campaign(constants, sigma=0.01, seed=5)
        clean = {r.id: r.loss for r in generate_campaign(constants, sigma=0.0, seed=5).records}
        deltas = np.array([r.loss - clean[r.id] for r in noisy.records])
        assert 0.008 < deltas.std() < 0.012

    def test_validation_tier_lies_in_validation_range(self, campaign):
        validation = campaign.select(tier="validation")
        N = np.array([r.point.N for r in validation.records])
        assert N.min() >= 2.4e9 * (1 - 1e-12) and N.max() <= 9e9 * (1 + 1e-12)

    def test_provenance(self, campaign, constants):
        provenance = campaign.provenance.to_dict()
        assert provenance["kind"] == "synthetic"
        assert provenance["constants"] == constants.to_dict()
        assert provenance["seed"] == 0

    def test_negative_sigma(self, constants):
        with pytest.raises(DomainError):
            generate_campaign(constants, sigma=-0.1)

    def test_invalid_grid(self):
        with pytest.raises(DomainError):
            GridSpec(S=(0.0, 1.0))

    def test_extrapolating_grid_is_reported(self):
        assert GridSpec(N=(133e6, 20e9)).extrapolations() == ["N"]


class TestIngest:
    def test_csv_round_trip_is_exact(self, campaign, tmp_path):
        path = tmp_path / "campaign.csv"
        campaign.to_csv(path)
        loaded = ingest(path)
        assert [r.id for r in loaded.records] == [r.id for r in campaign.records]
        assert [r.loss for r in loaded.records] == [r.loss for r in campaign.records]
        assert [r.point for r in loaded.records] == [r.point for r in campaign.records]
        assert loaded.records[0].tags == campaign.records[0].tags

    def test_json_round_trip(self, campaign, tmp_path):
        path = tmp_path / "campaign.json"
        campaign.to_json(path)
        loaded = ingest(path)
        assert len(loaded) == len(campaign)
        assert loaded.records[-1].tags["tier"] == "validation"
        assert json.loads(path.read_text())["provenance"]["kind"] == "synthetic"

    def test_json_list_of_records(self, tmp_path):
        path = tmp_path / "records.json"
        path.write_text(json.dumps([{"N": 1e9, "D": 2e10, "Na": 2e8, "G": 8, "S": 0.125, "loss": 2.9}]))
        loaded = ingest(path)
        assert len(loaded) == 1
        assert loaded.records[0].id == "r0000"

    def test_invalid_rows_are_rejected(self):
        text = HEADER + "1e9,2e10,2e8,8,0.125,2.9,a,\n1e9,2e10,2e9,8,0.125,2.9,b,\n1e9,2e10,2e8,8,1.5,2.9,c,\n"
        loaded = ingest_text(text)
        assert [r.id for r in loaded.records] == ["a"]
        assert [r.row for r in loaded.rejected] == [1, 2]
        assert loaded.rejected[0].precondition == "Na <= N"

    def test_non_positive_loss(self):
        loaded = ingest_text(HEADER + "1e9,2e10,2e8,8,0.125,2.9,a,\n1e9,3e10,2e8,8,0.125,-1,b,\n")
        assert loaded.rejected[0].precondition == "loss > 0"

    def test_all_rows_invalid(self):
        with pytest.raises(DomainError):
            ingest_text(HEADER + "1e9,2e10,2e9,8,0.125,2.9,a,\n")

    def test_missing_column(self):
        with pytest.raises(SchemaError) as info:
            ingest_text("N,D,Na,G,loss\n1e9,2e10,2e8,8,2.9\n")
        assert info.value.column == "S"

    def test_duplicate_points_are_averaged(self):
        text = HEADER + "1e9,2e10,2e8,8,0.125,3.0,a,seed=1\n1e9,2e10,2e8,8,0.125,3.2,b,seed=2\n"
        loaded = ingest_text(text)
        assert len(loaded) == 1
        assert loaded.records[0].loss == pytest.approx(3.1)
        assert loaded.records[0].tags["count"] == "2"

    def test_duplicate_ids_are_rejected(self):
        text = HEADER + "1e9,2e10,2e8,8,0.125,3.0,a,\n1e9,3e10,2e8,8,0.125,3.2,a,\n"
        loaded = ingest_text(text)
        assert len(loaded) == 1
        assert len(loaded.rejected) == 1

    def test_unit_sanity_warning(self):
        loaded = ingest_text(HEADER + "1000,2e10,200,8,0.125,3.0,a,\n")
        assert loaded.warnings

    def test_unknown_format(self):
        with pytest.raises(DomainError):
            ingest_text(HEADER, fmt="xml")


class TestCampaign:
    def test_ranges(self, campaign):
        lo, hi = campaign.ranges["G"]
        assert (lo, hi) == (1.0, 20.0)

    def test_dedupe_keeps_distinct_points(self):
        a = ExperimentRecord(id="a", point=FactorPoint(N=1e9, D=2e10, Na=2e8, G=8, S=0.125), loss=3.0)
        b = ExperimentRecord(id="b", point=FactorPoint(N=1e9, D=3e10, Na=2e8, G=8, S=0.125), loss=2.9)
        assert deduplicate([a, b]) == [a, b]

    def test_loss_must_be_positive(self):
        with pytest.raises(DomainError):
            ExperimentRecord(id="a", point=FactorPoint(N=1e9, D=2e10, Na=2e8, G=8, S=0.125), loss=0.0)
