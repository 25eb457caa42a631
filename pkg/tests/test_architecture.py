import numpy as np
import pytest

from moescale.architecture import (
    DRIFT_TOLERANCE,
    PRESETS,
    ArchitectureSpec,
    count_params,
    derive_uv_scaling,
    plan_sweep,
    round_half_away,
)
from moescale.errors import DomainError, UnrealizableLevelError


class TestCountParams:
    @pytest.mark.parametrize(
        "name, N, Na",
        [
            ("247M", 246_153_216, 47_972_352),
            ("496M", 495_452_160, 99_090_432),
            ("907M", 906_756_096, 180_092_928),
            ("2.4B", 2_401_894_400, 475_136_000),
            ("3.96B", 3_963_617_280, 792_723_456),
        ],
    )
    def test_presets(self, name, N, Na):
        counts = count_params(PRESETS[name])
        assert counts.N == N
        assert counts.Na == Na
        assert counts.G == 5
        assert counts.S == pytest.approx(0.2)

    def test_fine_grained_base_matches_dense_expert_layout(self):
        base = count_params(PRESETS["2.4B-G20"])
        assert base.N == count_params(PRESETS["2.4B"]).N
        assert base.Na == count_params(PRESETS["2.4B"]).Na
        assert (base.G, base.S) == (20, 0.2)

    @pytest.mark.parametrize("name", ["layers", "d_hidden", "d_head", "n_h", "d_expert", "n_e", "n_k", "n_s"])
    def test_monotone_in_each_field(self, name):
        base = PRESETS["247M"]
        before = count_params(base)
        after = count_params(base.replace(**{name: getattr(base, name) + 1}))
        assert after.N >= before.N and after.Na >= before.Na
        assert (after.N, after.Na) != (before.N, before.Na)

    def test_dense_limit(self):
        spec = ArchitectureSpec(layers=4, d_hidden=256, d_head=32, n_h=8, d_expert=512, n_e=2, n_k=2, n_s=0)
        counts = count_params(spec)
        assert counts.N == counts.Na
        assert counts.S == 0.0

    def test_to_point(self):
        point = count_params(PRESETS["247M"]).to_point(2e10)
        assert point.D == 2e10
        assert point.Na == 47_972_352


class TestArchitectureSpec:
    def test_rejects_more_activated_than_routed(self):
        with pytest.raises(DomainError):
            ArchitectureSpec(layers=2, d_hidden=64, d_head=16, n_h=4, d_expert=32, n_e=4, n_k=8)

    def test_rejects_fractional_fields(self):
        with pytest.raises(DomainError):
            ArchitectureSpec(layers=2, d_hidden=64.5, d_head=16, n_h=4, d_expert=32, n_e=8, n_k=2)

    def test_integral_floats_are_coerced(self):
        spec = ArchitectureSpec(layers=2.0, d_hidden=64, d_head=16, n_h=4, d_expert=32, n_e=8, n_k=2)
        assert spec.layers == 2 and isinstance(spec.layers, int)

    def test_dict_round_trip(self):
        spec = PRESETS["907M"]
        assert ArchitectureSpec.from_dict(spec.to_dict()) == spec

    def test_from_dict_unknown_field(self):
        data = PRESETS["907M"].to_dict()
        data["experts"] = 3
        with pytest.raises(DomainError):
            ArchitectureSpec.from_dict(data)

    def test_round_half_away(self):
        assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, 2.4)] == [1, 2, 3, -1, 2]


class TestUVScaling:
    @pytest.mark.parametrize("u, d_expert, n_e", [(0.5, 112, 260), (1.0, 224, 128), (2, 448, 62), (4, 896, 29), (6, 1344, 18)])
    def test_expert_counts(self, u, d_expert, n_e):
        spec = derive_uv_scaling(PRESETS["2.4B-G20"], u)
        assert (spec.d_expert, spec.n_e) == (d_expert, n_e)

    def test_total_size_preserved(self):
        base = count_params(PRESETS["2.4B-G20"])
        for u in (0.5, 2, 4, 6):
            counts = count_params(derive_uv_scaling(PRESETS["2.4B-G20"], u))
            assert counts.N == pytest.approx(base.N, rel=0.01)
            assert counts.G == base.G

    def test_rejects_non_positive_scale(self):
        with pytest.raises(DomainError):
            derive_uv_scaling(PRESETS["2.4B-G20"], 0)


class TestPlanSweep:
    def test_activated_size_levels(self):
        base = PRESETS["2.4B-G20"]
        plan = plan_sweep(base, "Na", [303e6, 476e6, 819e6, 1507e6, 2196e6])
        assert [spec.d_expert for spec in plan.specs] == [112, 224, 448, 896, 1344]
        assert [spec.n_e for spec in plan.specs] == [260, 128, 62, 29, 18]
        base_N = count_params(base).N
        assert all(counts.N == base_N for counts in plan.realized)
        for level, counts in zip(plan.levels, plan.realized):
            assert counts.Na == pytest.approx(level, rel=0.01)

    def test_G_sweep_shrinks_experts(self):
        plan = plan_sweep(PRESETS["2.4B-G20"], "G", [5, 10, 20])
        assert [spec.d_expert for spec in plan.specs] == [896, 448, 224]
        assert [spec.n_s for spec in plan.specs] == [1, 2, 4]
        base = count_params(PRESETS["2.4B-G20"])
        for counts in plan.realized:
            assert counts.N == base.N
            assert counts.Na == base.Na
            assert counts.S == pytest.approx(0.2)

    def test_G_level_without_integral_shared_count(self):
        with pytest.raises(UnrealizableLevelError) as info:
            plan_sweep(PRESETS["2.4B-G20"], "G", [3])
        assert info.value.level == 3

    def test_S_sweep_trades_shared_for_routed(self):
        plan = plan_sweep(PRESETS["2.4B-G20"], "S", [0.0, 0.1, 0.5])
        assert [(spec.n_s, spec.n_k) for spec in plan.specs] == [(0, 20), (2, 18), (10, 10)]
        base = count_params(PRESETS["2.4B-G20"])
        assert all(counts.N == base.N and counts.G == 20 for counts in plan.realized)

    def test_S_level_must_be_realisable(self):
        with pytest.raises(UnrealizableLevelError):
            plan_sweep(PRESETS["2.4B-G20"], "S", [0.33])

    def test_N_sweep_adds_routed_experts(self):
        plan = plan_sweep(PRESETS["2.4B-G20"], "N", [3e9])
        counts = plan.realized[0]
        assert counts.N == pytest.approx(3e9, rel=0.01)
        assert counts.Na == count_params(PRESETS["2.4B-G20"]).Na

    def test_D_sweep_keeps_spec(self):
        plan = plan_sweep(PRESETS["247M"], "D", [1e10, 2e10])
        assert plan.specs == [PRESETS["247M"], PRESETS["247M"]]

    def test_unknown_target(self):
        with pytest.raises(DomainError):
            plan_sweep(PRESETS["247M"], "L", [1])

    def test_extrapolation_flag(self):
        plan = plan_sweep(PRESETS["2.4B-G20"], "N", [3e9, 12e9])
        assert plan.extrapolated == [False, True]

    def test_csv_export(self, tmp_path):
        plan = plan_sweep(PRESETS["2.4B-G20"], "G", [5, 10])
        path = tmp_path / "plan.csv"
        text = plan.to_csv(path)
        header = text.splitlines()[0].split(",")
        assert header[0] == "level"
        assert {"d_expert", "n_e", "N", "Na", "G", "S", "extrapolated"} <= set(header)
        assert len(text.splitlines()) == 3
        assert path.read_text() == text

    def test_S_sweep_on_smallest_preset(self):
        plan = plan_sweep(PRESETS["247M"], "S", [0.0, 0.2, 0.4])
        assert [spec.n_s for spec in plan.specs] == [0, 1, 2]
        assert [spec.n_k for spec in plan.specs] == [5, 4, 3]
        base = count_params(PRESETS["247M"])
        for counts in plan.realized:
            assert (counts.N, counts.Na, counts.G) == (base.N, base.Na, base.G)


def _random_base(rng):
    n_s = int(rng.integers(0, 3))
    n_k = int(rng.integers(1, 9))
    # n_e - n_s even and at least 2 n_k keeps halving and doubling expert widths exact
    n_e = n_s + 2 * int(rng.integers(n_k, 65))
    return ArchitectureSpec(
        layers=int(rng.integers(2, 25)),
        d_hidden=64 * int(rng.integers(4, 25)),
        d_head=64,
        n_h=int(rng.integers(4, 25)),
        d_expert=2 * int(rng.integers(32, 513)),
        n_e=n_e,
        n_k=n_k,
        n_s=n_s,
    )


@pytest.mark.parametrize("seed", range(5))
class TestRandomSweeps:
    def _levels(self, base, target):
        counts = count_params(base)
        if target == "G":
            return [counts.G, 2 * counts.G]
        if target == "S":
            return [j / base.G for j in range(base.G)]
        if target == "Na":
            return [count_params(derive_uv_scaling(base, u)).Na for u in (0.5, 2.0)]
        return [1.5 * counts.N, 3 * counts.N]

    @pytest.mark.parametrize("target", ["G", "S", "Na", "N"])
    def test_non_target_drift_below_tolerance(self, seed, target):
        rng = np.random.default_rng(seed)
        for _ in range(10):
            base = _random_base(rng)
            plan = plan_sweep(base, target, self._levels(base, target))
            for drift in plan.drift:
                assert all(value < DRIFT_TOLERANCE for name, value in drift.items() if name != target)
            if target != "N":
                for level, counts in zip(plan.levels, plan.realized):
                    assert getattr(counts, target) == pytest.approx(level, rel=1e-9, abs=1e-12)
