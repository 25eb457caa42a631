"""Concrete MoE architectures, their law factors and controlled-variable sweeps."""

import logging
import math
import numbers
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Sequence, Union

import pandas as pd

from .errors import DomainError, UnrealizableLevelError
from .laws import FACTORS, STUDY_RANGES, VALIDATION_RANGES, FactorPoint

logger = logging.getLogger(__name__)

DRIFT_TOLERANCE = 0.01


def round_half_away(x: float) -> int:
    """Round to the nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class ArchitectureSpec:
    """MoE hyperparameters: depth, widths and expert counts."""

    layers: int
    d_hidden: int
    d_head: int
    n_h: int
    d_expert: int
    n_e: int
    n_k: int
    n_s: int = 0

    def __post_init__(self):
        """Validate integrality and the expert-count constraints."""
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, numbers.Integral) and not isinstance(value, bool):
                object.__setattr__(self, f.name, int(value))
            elif isinstance(value, numbers.Real) and float(value).is_integer():
                object.__setattr__(self, f.name, int(value))
            else:
                raise DomainError(f"{f.name} must be an integer, got {value!r}", f"{f.name} integral")
        for name in ("layers", "d_hidden", "d_head", "n_h", "d_expert", "n_e", "n_k"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}", f"{name} >= 1")
        if self.n_s < 0:
            raise DomainError(f"n_s must be non-negative, got {self.n_s}", "n_s >= 0")
        if self.n_k > self.n_e:
            raise DomainError(
                f"Cannot activate {self.n_k} of {self.n_e} routed experts", "n_k <= n_e"
            )

    @property
    def G(self) -> int:
        """Activated experts per token, routed plus shared."""
        return self.n_k + self.n_s

    @property
    def S(self) -> float:
        """Share of the activated experts that are shared."""
        return self.n_s / self.G

    def to_dict(self) -> Dict[str, int]:
        """Field name to value."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, int]) -> "ArchitectureSpec":
        """Build from a field mapping; ``n_s`` may be omitted."""
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise DomainError(f"Unknown architecture field(s) {sorted(unknown)}", "known fields only")
        missing = names - set(data) - {"n_s"}
        if missing:
            raise DomainError(f"Missing architecture field(s) {sorted(missing)}", "all fields supplied")
        return cls(**{name: data[name] for name in data})

    def replace(self, **changes: int) -> "ArchitectureSpec":
        """Copy with some fields changed; the copy is validated again."""
        return replace(self, **changes)


@dataclass(frozen=True)
class ParamCount:
    """Law factors realised by an architecture."""

    N: float
    Na: float
    G: float
    S: float

    def to_point(self, D: float) -> FactorPoint:
        """Factor point at ``D`` training tokens."""
        return FactorPoint(N=self.N, D=D, Na=self.Na, G=self.G, S=self.S)

    def to_dict(self) -> Dict[str, float]:
        """Factor name to value."""
        return asdict(self)


def count_params(spec: ArchitectureSpec) -> ParamCount:
    """Total and activated parameter counts, embeddings excluded.

    Attention contributes 4 d_head n_h d_hidden per layer; each expert is a
    gated FFN with 3 d_expert d_hidden weights.
    """
    attention = 4 * spec.d_head * spec.n_h
    per_layer = spec.d_hidden * spec.layers
    Na = (attention + 3 * spec.G * spec.d_expert) * per_layer
    N = (attention + 3 * spec.d_expert * (spec.n_s + spec.n_e)) * per_layer
    return ParamCount(N=float(N), Na=float(Na), G=float(spec.G), S=spec.S)


# Table 1 configurations plus the fine-grained base used for activated-size sweeps
PRESETS: Dict[str, ArchitectureSpec] = {
    "247M": ArchitectureSpec(layers=12, d_hidden=512, d_head=64, n_h=8, d_expert=384, n_e=32, n_k=4, n_s=1),
    "496M": ArchitectureSpec(layers=12, d_hidden=768, d_head=64, n_h=12, d_expert=512, n_e=32, n_k=4, n_s=1),
    "907M": ArchitectureSpec(layers=12, d_hidden=1024, d_head=64, n_h=16, d_expert=704, n_e=32, n_k=4, n_s=1),
    "2.4B": ArchitectureSpec(layers=20, d_hidden=1280, d_head=64, n_h=20, d_expert=896, n_e=32, n_k=4, n_s=1),
    "3.96B": ArchitectureSpec(layers=24, d_hidden=1536, d_head=64, n_h=24, d_expert=1024, n_e=32, n_k=4, n_s=1),
    "2.4B-G20": ArchitectureSpec(layers=20, d_hidden=1280, d_head=64, n_h=20, d_expert=224, n_e=128, n_k=16, n_s=4),
}


def derive_uv_scaling(base: ArchitectureSpec, u: float) -> ArchitectureSpec:
    """Scale expert width by ``u`` and the routed-expert count by v at (nearly) fixed N.

    v = ((1 - u) S G + n_e) / (u n_e), which keeps d_expert (n_s + n_e) constant.
    """
    if not (u > 0 and math.isfinite(u)):
        raise DomainError(f"Expert-dim scale u must be positive, got {u}", "u > 0")
    v = ((1 - u) * base.n_s + base.n_e) / (u * base.n_e)
    if v <= 0:
        raise DomainError(f"Scale u={u:g} leaves no routed experts (v={v:.4g})", "v > 0")
    d_expert = round_half_away(base.d_expert * u)
    n_e = round_half_away(base.n_e * v)
    if d_expert < 1:
        raise DomainError(f"Scale u={u:g} rounds d_expert to {d_expert}", "d_expert >= 1")
    if n_e < base.n_k:
        raise DomainError(
            f"Scale u={u:g} leaves {n_e} routed experts for {base.n_k} activated", "n_e * v >= n_k"
        )
    return base.replace(d_expert=d_expert, n_e=n_e)


def _sweep_G(base: ArchitectureSpec, level: float) -> ArchitectureSpec:
    if not float(level).is_integer() or level < 1:
        raise UnrealizableLevelError(level, "G is a positive integer")
    G = int(level)
    n_s_exact = base.S * G
    n_s = round_half_away(n_s_exact)
    if abs(n_s - n_s_exact) > 1e-9:
        raise UnrealizableLevelError(level, f"n_s = S*G = {n_s_exact:g} is integral")
    # expert widths shrink as counts grow so G*d_expert and d_expert*(n_s+n_e) hold
    d_expert = round_half_away(base.G * base.d_expert / G)
    if d_expert < 1:
        raise UnrealizableLevelError(level, "d_expert >= 1")
    n_e = round_half_away(base.d_expert * (base.n_s + base.n_e) / d_expert) - n_s
    n_k = G - n_s
    if n_k < 1 or n_e < n_k:
        raise UnrealizableLevelError(level, "1 <= n_k <= n_e")
    return base.replace(d_expert=d_expert, n_e=n_e, n_k=n_k, n_s=n_s)


def _sweep_S(base: ArchitectureSpec, level: float) -> ArchitectureSpec:
    if not (0 <= level < 1):
        raise UnrealizableLevelError(level, "0 <= S < 1")
    n_s_exact = level * base.G
    n_s = round_half_away(n_s_exact)
    if abs(n_s - n_s_exact) > 1e-9:
        raise UnrealizableLevelError(level, f"n_s = S*G = {n_s_exact:g} is integral")
    n_k = base.G - n_s
    n_e = base.n_e + (base.n_s - n_s)
    if n_k < 1 or n_e < n_k:
        raise UnrealizableLevelError(level, "1 <= n_k <= n_e")
    return base.replace(n_s=n_s, n_k=n_k, n_e=n_e)


def _snap_width(total: int, width: float) -> int:
    """Divisor of ``total`` nearest to ``width`` within 5%, else ``width`` rounded."""
    best = None
    for i in range(1, math.isqrt(total) + 1):
        if total % i:
            continue
        for d in (i, total // i):
            if abs(d - width) <= 0.05 * width and (best is None or abs(d - width) < abs(best - width)):
                best = d
    return best if best is not None else round_half_away(width)


def _sweep_Na(base: ArchitectureSpec, level: float) -> ArchitectureSpec:
    attention = 4 * base.d_head * base.n_h
    u = (level / (base.d_hidden * base.layers) - attention) / (3 * base.G * base.d_expert)
    if u <= 0:
        raise UnrealizableLevelError(level, "Na exceeds the attention-only size")
    # widths dividing d_expert * (n_s + n_e) keep N exact
    d_expert = _snap_width(base.d_expert * (base.n_s + base.n_e), base.d_expert * u)
    if d_expert < 1:
        raise UnrealizableLevelError(level, "d_expert >= 1")
    try:
        # the realised width fixes u exactly
        return derive_uv_scaling(base, d_expert / base.d_expert)
    except DomainError as e:
        raise UnrealizableLevelError(level, e.precondition or str(e)) from e


def _sweep_N(base: ArchitectureSpec, level: float) -> ArchitectureSpec:
    attention = 4 * base.d_head * base.n_h
    experts = (level / (base.d_hidden * base.layers) - attention) / (3 * base.d_expert)
    n_e = round_half_away(experts - base.n_s)
    if n_e < base.n_k:
        raise UnrealizableLevelError(level, "n_e >= n_k at fixed Na")
    return base.replace(n_e=n_e)


_SWEEPS: Dict[str, Callable[[ArchitectureSpec, float], ArchitectureSpec]] = {
    "G": _sweep_G,
    "S": _sweep_S,
    "Na": _sweep_Na,
    "N": _sweep_N,
    "D": lambda base, level: base,
}


def _relative_drift(actual: float, reference: float) -> float:
    if reference == 0:
        return abs(actual)
    return abs(actual - reference) / abs(reference)


def _is_extrapolated(target: str, level: float) -> bool:
    lo, hi = STUDY_RANGES[target]
    if target in VALIDATION_RANGES:
        lo, hi = min(lo, VALIDATION_RANGES[target][0]), max(hi, VALIDATION_RANGES[target][1])
    return not (lo <= level <= hi)


@dataclass
class SweepPlan:
    """Specs realising each level of one factor with the other factors held."""

    target: str
    base: ArchitectureSpec
    levels: List[float]
    specs: List[ArchitectureSpec] = field(default_factory=list)
    realized: List[ParamCount] = field(default_factory=list)
    drift: List[Dict[str, float]] = field(default_factory=list)
    extrapolated: List[bool] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """One row per level: the level, every spec field and the realised factors."""
        rows = []
        for level, spec, counts, flag in zip(self.levels, self.specs, self.realized, self.extrapolated):
            row = {"level": level}
            row.update(spec.to_dict())
            row.update(counts.to_dict())
            row["extrapolated"] = flag
            rows.append(row)
        columns = ["level"] + [f.name for f in fields(ArchitectureSpec)] + ["N", "Na", "G", "S", "extrapolated"]
        return pd.DataFrame(rows, columns=columns)

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """Write the plan as CSV; returns the text."""
        text = self.to_frame().to_csv(index=False, float_format="%.17g")
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> Dict:
        """Plan as a JSON-ready dict, drift included."""
        return {
            "target": self.target,
            "base": self.base.to_dict(),
            "levels": list(self.levels),
            "specs": [spec.to_dict() for spec in self.specs],
            "realized": [counts.to_dict() for counts in self.realized],
            "drift": self.drift,
            "extrapolated": self.extrapolated,
        }


def plan_sweep(base: ArchitectureSpec, target: str, levels: Sequence[float]) -> SweepPlan:
    """Realise each level of ``target`` as an architecture derived from ``base``.

    Raises UnrealizableLevelError naming the constraint for the first level that
    cannot be met, including non-target factors drifting by 1% or more.
    """
    if target not in _SWEEPS:
        raise DomainError(f"Unknown sweep target '{target}', expected one of {list(FACTORS)}", "target in G, S, Na, N, D")
    realize = _SWEEPS[target]
    base_counts = count_params(base)
    plan = SweepPlan(target=target, base=base, levels=[float(level) for level in levels])
    for level in plan.levels:
        if target == "D" and not level > 0:
            raise UnrealizableLevelError(level, "D > 0")
        spec = realize(base, level)
        counts = count_params(spec)
        drift = {}
        for name in ("N", "Na", "G", "S"):
            if name == target:
                drift[name] = _relative_drift(getattr(counts, name), level)
                continue
            drift[name] = _relative_drift(getattr(counts, name), getattr(base_counts, name))
            if drift[name] >= DRIFT_TOLERANCE:
                raise UnrealizableLevelError(
                    level, f"non-target factor {name} drifts {100 * drift[name]:.2f}% (limit 1%)"
                )
        extrapolated = _is_extrapolated(target, level)
        if extrapolated:
            logger.warning(f"Sweep level {target}={level:g} lies outside the study range")
        if target in drift and drift[target] >= DRIFT_TOLERANCE:
            logger.warning(f"Level {target}={level:g} realised as {getattr(counts, target):g}")
        plan.specs.append(spec)
        plan.realized.append(counts)
        plan.drift.append(drift)
        plan.extrapolated.append(extrapolated)
    logger.info(f"Planned {target} sweep with {len(plan.levels)} level(s)")
    return plan
