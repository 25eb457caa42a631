import json

import pytest

from moescale.cli import cli

PREDICT = ["predict", "--N", "1e9", "--D", "2e10", "--Na", "2e8", "--G", "6.78", "--S", "0.3148"]


def _json(result, exit_code=0):
    """Decode the JSON document in the output; log lines on stderr may surround it."""
    assert result.exit_code == exit_code, result.output
    text = result.output
    start = min(i for i in (text.find("{"), text.find("[")) if i >= 0)
    return json.JSONDecoder().raw_decode(text[start:])[0]


class TestPredict:
    def test_json(self, runner, registry_dir):
        data = _json(runner.invoke(cli, PREDICT + ["--output", "json"]))
        assert data["loss"] == pytest.approx(2.84065, abs=1e-4)
        assert data["point"]["Na"] == 2e8

    def test_human(self, runner, registry_dir):
        result = runner.invoke(cli, PREDICT)
        assert result.exit_code == 0
        assert "Predicted loss:" in result.output

    def test_suffixed_counts_and_gradient(self, runner, registry_dir):
        args = ["predict", "--N", "1B", "--D", "20B", "--Na", "200M", "--G", "4", "--S", "0.5", "--gradient"]
        data = _json(runner.invoke(cli, args + ["--output", "json"]))
        assert data["point"]["N"] == 1e9
        assert data["gradient"]["dD"] < 0

    def test_csv(self, runner, registry_dir):
        result = runner.invoke(cli, PREDICT + ["--output", "csv"])
        assert result.output.splitlines()[0] == "N,D,Na,G,S,loss"

    def test_domain_error_exits_1(self, runner, registry_dir):
        args = ["predict", "--N", "1e9", "--D", "2e10", "--Na", "2e9", "--G", "8", "--S", "0.2"]
        result = runner.invoke(cli, args)
        assert result.exit_code == 1
        assert "DomainError" in result.output

    def test_domain_error_as_json(self, runner, registry_dir):
        args = ["predict", "--N", "1e9", "--D", "2e10", "--Na", "2e9", "--G", "8", "--S", "0.2", "--output", "json"]
        result = runner.invoke(cli, args)
        diagnostic = _json(result, exit_code=1)
        assert diagnostic["error"] == "DomainError"
        assert diagnostic["precondition"] == "Na <= N"

    def test_usage_error_exits_2(self, runner, registry_dir):
        result = runner.invoke(cli, ["predict", "--D", "2e10"])
        assert result.exit_code == 2

    def test_bad_count(self, runner, registry_dir):
        result = runner.invoke(cli, ["predict", "--N", "lots", "--D", "2e10", "--Na", "2e8", "--G", "8", "--S", "0.2"])
        assert result.exit_code == 2


class TestOptimal:
    def test_G(self, runner, registry_dir):
        result = runner.invoke(cli, ["optimal", "--what", "G"])
        assert result.exit_code == 0
        assert "G_opt = 6.778" in result.output

    def test_report_json(self, runner, registry_dir):
        data = _json(runner.invoke(cli, ["optimal", "--N", "21e9", "--output", "json"]))
        assert data["G_opt"] == pytest.approx(6.77784, rel=1e-5)
        assert data["ratio_theoretical"] == pytest.approx(0.4292, abs=1e-4)
        assert data["ratio_efficiency"] == pytest.approx(0.22)

    def test_ratio_needs_N(self, runner, registry_dir):
        assert runner.invoke(cli, ["optimal", "--what", "ratio"]).exit_code == 2

    def test_range(self, runner, registry_dir):
        data = _json(runner.invoke(cli, ["range", "--N", "21e9", "--Na", "3.6e9", "--output", "json"]))
        assert data["G"]["lo"] == pytest.approx(5.081, abs=1e-3)
        assert data["S"]["hi"] == pytest.approx(0.4467, abs=1e-4)

    def test_frontier(self, runner, registry_dir):
        data = _json(runner.invoke(cli, ["frontier", "--output", "json"]))
        assert len(data["points"]) == 41
        assert data["C0"] == pytest.approx(1.87302, abs=1e-5)
        assert data["summary"]["exponent"] == pytest.approx(-0.1586, rel=0.05)


class TestReport:
    def test_markdown(self, runner, registry_dir):
        result = runner.invoke(cli, ["report", "--kind", "table4", "--output", "markdown"])
        assert result.exit_code == 0
        lines = result.output.splitlines()
        assert len(lines) == 11
        assert "22.00% (4.6B)" in lines[2]

    def test_custom_model_csv(self, runner, registry_dir):
        args = ["report", "--kind", "table3", "--model", "mine:3B:30B", "--thresholds", "0.002", "--output", "csv"]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0
        lines = result.output.splitlines()
        assert lines[0].startswith("model,N,Na,G_opt")
        assert lines[1].startswith("mine,")

    def test_bad_model(self, runner, registry_dir):
        result = runner.invoke(cli, ["report", "--kind", "table3", "--model", "mine"])
        assert result.exit_code == 1


class TestArchitecture:
    def test_preset(self, runner, registry_dir):
        data = _json(runner.invoke(cli, ["arch", "--preset", "247M", "--output", "json"]))
        assert data["counts"]["N"] == 246_153_216
        assert data["counts"]["Na"] == 47_972_352

    def test_uv_scaling(self, runner, registry_dir):
        data = _json(runner.invoke(cli, ["arch", "--preset", "2.4B-G20", "--u", "0.5", "--output", "json"]))
        assert data["spec"]["d_expert"] == 112
        assert data["spec"]["n_e"] == 260

    def test_fields(self, runner, registry_dir):
        args = ["arch", "--layers", "2", "--d-hidden", "64", "--d-head", "16", "--n-h", "4",
                "--d-expert", "32", "--n-e", "8", "--n-k", "2", "--n-s", "1", "--output", "json"]
        data = _json(runner.invoke(cli, args))
        assert data["counts"]["G"] == 3

    def test_sweep_csv(self, runner, registry_dir, tmp_path):
        out = tmp_path / "plan.csv"
        args = ["sweep", "--preset", "2.4B-G20", "--target", "Na", "--levels", "303e6,819e6", "--out", str(out),
                "--output", "csv"]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0
        assert len(result.output.splitlines()) == 3
        assert out.read_text() == result.output

    def test_unrealizable_sweep(self, runner, registry_dir):
        result = runner.invoke(cli, ["sweep", "--preset", "2.4B-G20", "--target", "S", "--levels", "0.33"])
        assert result.exit_code == 1
        assert "UnrealizableLevelError" in result.output


class TestCampaignAndFit:
    @pytest.fixture
    def campaign_file(self, runner, registry_dir, tmp_path):
        path = tmp_path / "campaign.csv"
        result = runner.invoke(cli, ["campaign", "--out", str(path)])
        assert result.exit_code == 0
        return path

    def test_campaign_file(self, campaign_file):
        lines = campaign_file.read_text().splitlines()
        assert lines[0] == "N,D,Na,G,S,loss,id,tags"
        assert len(lines) == 447

    def test_fit_save_and_reuse(self, runner, registry_dir, campaign_file, tmp_path):
        residuals = tmp_path / "residuals.csv"
        args = ["fit", "--input", str(campaign_file), "--starts", "8", "--save", "refit",
                "--residuals", str(residuals), "--output", "json"]
        data = _json(runner.invoke(cli, args))
        assert data["metrics"]["mean_abs_error"] < 1e-6
        assert len(residuals.read_text().splitlines()) == 447

        fit_json = tmp_path / "fit.json"
        fit_json.write_text(json.dumps(data))
        from_file = _json(runner.invoke(cli, PREDICT + ["--constants", str(fit_json), "--output", "json"]))
        from_label = _json(runner.invoke(cli, PREDICT + ["--constants", "refit", "--output", "json"]))
        assert from_file["loss"] == pytest.approx(2.84065, abs=1e-4)
        assert from_label["loss"] == from_file["loss"]

        listing = _json(runner.invoke(cli, ["registry", "list", "--output", "json"]))
        assert [entry["label"] for entry in listing] == ["paper-table-5", "refit"]

    def test_fit_sub_law(self, runner, registry_dir, campaign_file):
        data = _json(runner.invoke(cli, ["fit", "--from-json", str(campaign_file), "--law", "G-only",
                                         "--starts", "4", "--output", "json"]))
        assert data["law"] == "G-only"
        assert set(data["constants"]) == {"e", "f", "tau"}

    def test_save_needs_joint_law(self, runner, registry_dir, campaign_file):
        args = ["fit", "--input", str(campaign_file), "--law", "G-only", "--starts", "4", "--save", "x"]
        assert runner.invoke(cli, args).exit_code == 2


class TestRegistry:
    def test_builtin_cannot_be_removed(self, runner, registry_dir):
        result = runner.invoke(cli, ["registry", "remove", "paper-table-5"])
        assert result.exit_code == 1
        assert "ImmutableEntryError" in result.output

    def test_save_show_remove(self, runner, registry_dir, tmp_path, constants):
        source = tmp_path / "constants.json"
        source.write_text(json.dumps(constants.replace(e=0.2).to_dict()))
        assert runner.invoke(cli, ["registry", "save", "mine", "--from", str(source)]).exit_code == 0
        data = _json(runner.invoke(cli, ["registry", "show", "mine", "--output", "json"]))
        assert data["constants"]["e"] == 0.2
        assert runner.invoke(cli, ["registry", "remove", "mine"]).exit_code == 0
        result = runner.invoke(cli, ["registry", "show", "mine"])
        assert result.exit_code == 1
        assert "Constants 'mine' not found" in result.output

    def test_registry_dir_flag(self, runner, tmp_path, constants):
        source = tmp_path / "constants.json"
        source.write_text(json.dumps(constants.to_dict()))
        target = tmp_path / "elsewhere"
        args = ["--registry-dir", str(target), "registry", "save", "mine", "--from", str(source)]
        assert runner.invoke(cli, args).exit_code == 0
        assert (target / "mine.json").exists()


class TestCurve:
    def test_csv_by_default(self, runner, registry_dir):
        result = runner.invoke(cli, ["curve", "--target", "G-marginal", "--grid", "2,4,6.8"])
        assert result.exit_code == 0
        lines = result.output.splitlines()
        assert lines[0] == "G,loss,error"
        assert len(lines) == 4

    def test_human_output_without_finite_points(self, runner, registry_dir):
        result = runner.invoke(cli, ["curve", "--target", "S-marginal", "--grid", "1.0", "--output", "human"])
        assert result.exit_code == 1
        assert "DomainError" in result.output
