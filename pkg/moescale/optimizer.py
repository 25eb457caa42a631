"""Optimal MoE configurations derived from a set of scaling constants."""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import DomainError, NoRootError
from .laws import (
    FactorPoint,
    ScalingConstants,
    _check_factors,
    eval_joint_loss,
    eval_joint_loss_array,
    size_bracket,
    structure_bracket,
)

logger = logging.getLogger(__name__)

DEFAULT_D = 1e11
DEFAULT_THRESHOLD = 0.001
DEFAULT_FRONTIER_BUDGETS = tuple(np.geomspace(1e18, 1e22, 41))
ROOT_RTOL = 1e-12


def _check_size(name: str, value: float):
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive, got {value}", f"{name} > 0")


def _check_threshold(threshold: float, allow_zero: bool = False):
    if math.isnan(threshold) or threshold < 0 or (threshold == 0 and not allow_zero):
        raise DomainError(f"Threshold must be positive, got {threshold}", "threshold > 0")


def optimal_G(constants: ScalingConstants) -> float:
    """Vertex of eG + f/G."""
    if constants.e <= 0 or constants.f <= 0:
        raise DomainError("Optimal G needs e > 0 and f > 0", "e, f > 0")
    return math.sqrt(constants.f / constants.e)


def optimal_S(constants: ScalingConstants) -> float:
    """Vertex of mS^2 + nS; may fall outside [0, 1), see ``clamp_S``."""
    if constants.m <= 0:
        raise DomainError("Optimal S needs m > 0", "m > 0")
    S = -constants.n / (2 * constants.m)
    if not (0 <= S < 1):
        logger.warning(f"Optimal S={S:g} lies outside [0, 1)")
    return S


def clamp_S(S: float) -> float:
    """Clip S into [0, 1)."""
    return min(max(S, 0.0), math.nextafter(1.0, 0.0))


def _structure_at(constants: ScalingConstants, G: Optional[float], S: Optional[float]):
    G = optimal_G(constants) if G is None else G
    S = clamp_S(optimal_S(constants)) if S is None else S
    if G < 1 or not (0 <= S < 1):
        raise DomainError(f"Invalid structure G={G}, S={S}", "G >= 1 and 0 <= S < 1")
    return G, S, structure_bracket(constants, G, S)


def theoretical_ratio(
    constants: ScalingConstants, N: float, G: Optional[float] = None, S: Optional[float] = None
) -> float:
    """Activation ratio Na/N minimising loss at fixed N, G and S.

    G and S default to their optima. Ratios above 1 are returned as is and
    logged as extrapolations.
    """
    _check_size("N", N)
    G, S, const = _structure_at(constants, G, S)
    if const <= 0:
        raise DomainError(f"Structure bracket is {const:g} at G={G}, S={S}", "eG + f/G + mS^2 + nS > 0")
    c = constants
    if c.h <= 0:
        raise DomainError("Optimal ratio needs h > 0", "h > 0")
    ratio = (c.alpha * (c.k * const + c.c) / (c.h * N**c.alpha * const)) ** (1 / (c.alpha + 1))
    if ratio > 1:
        logger.warning(f"Theoretical ratio {ratio:.4f} exceeds 1 at N={N:g} (law extrapolation)")
    return float(ratio)


def efficiency_aware_ratio(
    constants: ScalingConstants,
    N: float,
    G: Optional[float] = None,
    S: Optional[float] = None,
    threshold: float = DEFAULT_THRESHOLD,
    max_steps: int = 100,
    D: float = DEFAULT_D,
) -> Optional[float]:
    """Walk Na up a grid of 1% of N; return the first ratio whose gain drops below ``threshold``.

    The returned ratio is the post-step grid point. Returns None when the walk
    reaches ``max_steps`` grid points (or Na = N) without the gain dropping.
    """
    _check_size("N", N)
    _check_size("D", D)
    _check_threshold(threshold)
    if max_steps < 2:
        raise DomainError(f"max_steps must be at least 2, got {max_steps}", "max_steps >= 2")
    G, S, _ = _structure_at(constants, G, S)
    last = min(int(max_steps), 100)
    grid = np.arange(1, last + 1)
    losses = eval_joint_loss_array(constants, N, D, N * (grid / 100), G, S)
    for j in range(1, last):
        if losses[j - 1] - losses[j] < threshold:
            return int(grid[j]) / 100
    logger.warning(f"No efficiency-aware ratio below threshold {threshold:g} within {last} steps at N={N:g}")
    return None


@dataclass(frozen=True)
class PracticalRange:
    """Closed interval around an optimum where the loss gap stays within a threshold."""

    lo: float
    hi: float
    clipped: bool = False

    def to_dict(self) -> Dict:
        """Endpoints and the clip flag."""
        return asdict(self)


def practical_range_G(constants: ScalingConstants, N: float, Na: float, threshold: float) -> PracticalRange:
    """Roots of eG + f/G = 2 sqrt(ef) + threshold/B."""
    _check_size("N", N)
    _check_size("Na", Na)
    if Na > N:
        raise DomainError("Activated size Na must not exceed total size N", "Na <= N")
    _check_threshold(threshold, allow_zero=True)
    G_opt = optimal_G(constants)
    e, f = constants.e, constants.f
    q = threshold / size_bracket(constants, N, Na)
    root = math.sqrt(e * f)
    disc = q * (4 * root + q)
    if disc < 0:
        raise DomainError(f"Negative discriminant {disc:g}", "discriminant >= 0")
    hi = (2 * root + q + math.sqrt(disc)) / (2 * e)
    lo = f / (e * hi)
    if threshold == 0:
        lo = hi = G_opt
    clipped = lo < 1
    if clipped:
        logger.warning(f"Lower G endpoint {lo:.4f} clipped to 1")
        lo = 1.0
    return PracticalRange(lo=lo, hi=hi, clipped=clipped)


def practical_range_S(constants: ScalingConstants, N: float, Na: float, threshold: float) -> PracticalRange:
    """S_opt +/- sqrt(threshold / (B m)), clipped to [0, 1)."""
    _check_size("N", N)
    _check_size("Na", Na)
    if Na > N:
        raise DomainError("Activated size Na must not exceed total size N", "Na <= N")
    _check_threshold(threshold, allow_zero=True)
    S_opt = optimal_S(constants)
    half = math.sqrt(threshold / (size_bracket(constants, N, Na) * constants.m))
    lo, hi = S_opt - half, S_opt + half
    clipped = lo < 0 or hi >= 1
    if clipped:
        logger.warning(f"S range [{lo:.4f}, {hi:.4f}] clipped to [0, 1)")
    return PracticalRange(lo=clamp_S(lo), hi=clamp_S(hi), clipped=clipped)


def loss_gap_at(
    constants: ScalingConstants,
    N: float,
    Na: float,
    factor: str,
    value: float,
    D: float = DEFAULT_D,
    G: Optional[float] = None,
    S: Optional[float] = None,
) -> float:
    """Loss at ``factor=value`` minus loss at that factor's optimum, others fixed."""
    G, S, _ = _structure_at(constants, G, S)
    base = FactorPoint(N=N, D=D, Na=Na, G=G, S=S)
    if factor == "G":
        optimum, moved = base.replace(G=optimal_G(constants)), base.replace(G=value)
    elif factor == "S":
        optimum, moved = base.replace(S=clamp_S(optimal_S(constants))), base.replace(S=value)
    else:
        raise DomainError(f"Loss gap is defined for G or S, not {factor}", "factor in G, S")
    return eval_joint_loss(constants, moved) - eval_joint_loss(constants, optimum)


@dataclass(frozen=True)
class FrontierPoint:
    """Optimal split of one compute budget C = D Na between tokens and activated size."""

    C: float
    Na_star: float
    D_star: float
    L_star: float
    error: Optional[str] = None

    def to_dict(self) -> Dict:
        """Point fields as a dict."""
        return asdict(self)


@dataclass(frozen=True)
class FrontierSummary:
    """Power-law fit L*(C) ~ offset + coefficient * C^exponent."""

    offset: float
    coefficient: float
    exponent: float
    rmse: float

    def predict(self, C):
        """Summary value at budget(s) ``C``."""
        return self.offset + self.coefficient * np.asarray(C, dtype=float) ** self.exponent

    def to_dict(self) -> Dict:
        """Coefficients and fit error."""
        return asdict(self)


@dataclass
class Frontier:
    N: float
    G: float
    S: float
    const: float
    C0: float
    points: List[FrontierPoint] = field(default_factory=list)
    summary: Optional[FrontierSummary] = None

    def to_dict(self) -> Dict:
        """Settings, points and summary."""
        return {
            "N": self.N,
            "G": self.G,
            "S": self.S,
            "const": self.const,
            "C0": self.C0,
            "points": [point.to_dict() for point in self.points],
            "summary": self.summary.to_dict() if self.summary else None,
        }


def stationarity_residual(constants: ScalingConstants, N: float, const: float, C: float, Na: float) -> float:
    """Right side minus left side of the Na stationarity condition at budget C."""
    c = constants
    rhs = c.alpha * (const * c.k + c.c) * Na ** (-c.alpha - 1) - const * c.h / N
    lhs = c.b * c.beta * Na ** (c.beta - 1) / C**c.beta
    return rhs - lhs


def _solve_stationary_na(constants: ScalingConstants, N: float, const: float, C: float) -> float:
    F = lambda Na: stationarity_residual(constants, N, const, C, Na)  # noqa: E731
    hi = N
    if F(hi) > 0:
        # loss still falls at Na = N
        raise NoRootError(C)
    lo = 1e-6 * N
    while F(lo) <= 0:
        lo /= 10
        if lo < 1e-300:
            raise NoRootError(C)
    return optimize.bisect(F, lo, hi, xtol=1e-300, rtol=ROOT_RTOL, maxiter=500)


def frontier_point(constants: ScalingConstants, N: float, G: float, S: float, C: float) -> FrontierPoint:
    """Na*, D* and the closed-form minimal loss L* for one budget."""
    _check_size("C", C)
    _check_factors({"N": N, "G": G, "S": S})
    c = constants
    const = structure_bracket(c, G, S)
    Na = _solve_stationary_na(c, N, const, C)
    C0 = (const + c.a) / N**c.alpha + c.eps
    L_star = (
        C0
        + (const * c.k + c.c) * (c.alpha + c.beta) / c.beta * Na**-c.alpha
        + const * c.h * (c.beta - 1) / (N * c.beta) * Na
    )
    return FrontierPoint(C=float(C), Na_star=float(Na), D_star=float(C / Na), L_star=float(L_star))


def fit_frontier_summary(C: Sequence[float], L: Sequence[float]) -> FrontierSummary:
    """Fit offset + coefficient * C^exponent by variable projection.

    For a fixed exponent the offset and coefficient solve a linear least-squares
    problem; the exponent is then found by bounded scalar minimisation.
    """
    C = np.asarray(C, dtype=float)
    L = np.asarray(L, dtype=float)
    if C.size < 3:
        raise DomainError(f"Summary fit needs at least 3 frontier points, got {C.size}", "3 valid points")

    def project(p):
        X = np.column_stack([np.ones_like(C), C**p])
        coef, *_ = np.linalg.lstsq(X, L, rcond=None)
        return coef, float(np.sum((X @ coef - L) ** 2))

    grid = np.linspace(-1.5, -0.005, 300)
    sse = np.array([project(p)[1] for p in grid])
    best = int(np.argmin(sse))
    lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda p: project(p)[1], bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    p = float(res.x) if res.fun <= sse[best] else float(grid[best])
    (offset, coefficient), value = project(p)
    return FrontierSummary(
        offset=float(offset), coefficient=float(coefficient), exponent=p, rmse=math.sqrt(value / C.size)
    )


def compute_optimal_frontier(
    constants: ScalingConstants,
    N: float,
    G: float,
    S: float,
    budgets: Sequence[float] = DEFAULT_FRONTIER_BUDGETS,
) -> Frontier:
    """Compute-optimal loss for each budget at fixed N, G and S, with a power-law summary.

    Budgets without a stationary root get a flagged point; the rest still count.
    """
    _check_size("N", N)
    if G < 1 or not (0 <= S < 1):
        raise DomainError(f"Invalid structure G={G}, S={S}", "G >= 1 and 0 <= S < 1")
    c = constants
    const = structure_bracket(c, G, S)
    frontier = Frontier(N=N, G=G, S=S, const=const, C0=(const + c.a) / N**c.alpha + c.eps)
    for C in budgets:
        try:
            frontier.points.append(frontier_point(c, N, G, S, C))
        except NoRootError as e:
            logger.warning(str(e))
            nan = float("nan")
            frontier.points.append(FrontierPoint(C=float(C), Na_star=nan, D_star=nan, L_star=nan, error=str(e)))
    valid = [point for point in frontier.points if point.error is None]
    if len(valid) >= 3:
        frontier.summary = fit_frontier_summary([p.C for p in valid], [p.L_star for p in valid])
    else:
        logger.warning(f"Only {len(valid)} frontier point(s) solved; no summary fit")
    return frontier


@dataclass
class OptimaReport:
    """Optimal structure and activation ratios for one total size."""

    G_opt: float
    S_opt: float
    N: float
    G: float
    S: float
    const: float
    ratio_theoretical: float
    ratio_efficiency: Optional[float]
    threshold: float
    S_opt_clamped: bool = False
    extrapolated: bool = False

    def to_dict(self) -> Dict:
        """Report fields as a dict."""
        return asdict(self)


def optima_report(
    constants: ScalingConstants,
    N: float,
    threshold: float = DEFAULT_THRESHOLD,
    G: Optional[float] = None,
    S: Optional[float] = None,
    D: float = DEFAULT_D,
) -> OptimaReport:
    """Collect G_opt, S_opt and both activation ratios at N."""
    G_opt = optimal_G(constants)
    S_opt = optimal_S(constants)
    G_used, S_used, const = _structure_at(constants, G, S)
    ratio_t = theoretical_ratio(constants, N, G_used, S_used)
    ratio_e = efficiency_aware_ratio(constants, N, G_used, S_used, threshold=threshold, D=D)
    return OptimaReport(
        G_opt=G_opt,
        S_opt=S_opt,
        N=N,
        G=G_used,
        S=S_used,
        const=const,
        ratio_theoretical=ratio_t,
        ratio_efficiency=ratio_e,
        threshold=threshold,
        S_opt_clamped=not (0 <= S_opt < 1),
        extrapolated=ratio_t > 1,
    )
