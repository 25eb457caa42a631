"""Fit scaling laws to experiment records.

Every fit is a bounded multi-start nonlinear least-squares problem solved with
``scipy.optimize.least_squares`` (trust-region reflective) using analytic
Jacobians. Positive parameters are optimised in log space. Start 0 is always
the reference constants, then caller-supplied initial points, then log-uniform
random draws from ``numpy.random.default_rng(seed)``.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import least_squares

from .datastore import Campaign, ExperimentRecord, deduplicate
from .errors import DegenerateRecordsError, DomainError, InsufficientRecordsError
from .laws import (
    BASELINE_PARAMS,
    FORM_FACTORS,
    FORM_PARAMS,
    PUBLISHED_CONSTANTS,
    BaselineId,
    BaselineParams,
    LawForm,
    ScalingConstants,
    SubLawParams,
    baseline_values_and_jacobian,
    law_values_and_jacobian,
    sparsity_of,
)

logger = logging.getLogger(__name__)

OBJECTIVES = ("huber", "squared-error")
Bounds = Tuple[float, float]
Model = Callable[[Mapping[str, float], Mapping[str, np.ndarray], bool], Tuple[np.ndarray, Dict[str, np.ndarray]]]

# parameters that carry no sign constraint are fitted on a linear scale
_LINEAR_BOUNDS: Dict[str, Bounds] = {"n": (-100.0, 0.0), "tau": (-10.0, 10.0), "psi": (-10.0, 10.0), "iota": (-10.0, 10.0)}
_EXPONENT_BOUNDS: Bounds = (0.05, 1.5)
_WEIGHT_BOUNDS: Bounds = (1e-6, 1e6)
_EPS_BOUNDS: Bounds = (0.1, 5.0)

_SUB_LAW_REFERENCE: Dict[LawForm, Dict[str, float]] = {
    LawForm.NA_ONLY: {"c": 31.0958, "gamma": 0.2383, "h": 1e-12, "iota": 2.0},
    LawForm.G_ONLY: {"e": 0.1577, "f": 7.2446, "tau": 2.5},
    LawForm.S_ONLY: {"m": 5.1395, "n": -3.2363, "psi": 2.5},
}

_BASELINE_REFERENCE: Dict[BaselineId, Dict[str, float]] = {
    BaselineId.FINE_GRAINED: {"c": 1.8182, "g": 10.0, "gamma": 0.5, "a": 38.051, "alpha": 0.2383, "b": 27129.0488, "beta": 0.4694},
    BaselineId.SPARSITY: {
        "a": 38.051, "alpha": 0.2383, "b": 27129.0488, "beta": 0.4694, "c": 0.1,
        "lam": 0.5, "d": 1.0, "delta": 0.5, "gamma": 0.1, "e_offset": 1.8182,
    },
}


@dataclass
class FitOptions:
    """Objective, multi-start and solver settings shared by every fit."""

    objective: str = "huber"
    huber_delta: float = 0.01
    starts: int = 16
    max_iterations: int = 500
    bounds: Dict[str, Bounds] = field(default_factory=dict)
    tolerance: float = 1e-12
    seed: int = 0
    holdout: bool = False
    workers: int = 1
    initial: List[Dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        """Validate options."""
        if self.objective not in OBJECTIVES:
            raise DomainError(f"Unknown objective '{self.objective}', expected one of {OBJECTIVES}", "objective known")
        if not self.huber_delta > 0:
            raise DomainError(f"Huber delta must be positive, got {self.huber_delta}", "huber_delta > 0")
        if self.starts < 1:
            raise DomainError(f"starts must be at least 1, got {self.starts}", "starts >= 1")
        if self.max_iterations < 1:
            raise DomainError(f"max_iterations must be positive, got {self.max_iterations}", "max_iterations >= 1")
        if not self.tolerance > 0:
            raise DomainError(f"Tolerance must be positive, got {self.tolerance}", "tolerance > 0")
        if self.workers < 1:
            raise DomainError(f"workers must be at least 1, got {self.workers}", "workers >= 1")
        for name, (lo, hi) in self.bounds.items():
            if not lo <= hi:
                raise DomainError(f"Bounds for {name} are empty: [{lo}, {hi}]", f"{name} lo <= hi")

    def replace(self, **changes) -> "FitOptions":
        """Copy with some options changed; the copy is validated again."""
        return replace(self, **changes)


def default_bounds(name: str, law: str) -> Bounds:
    """Default search interval for parameter ``name`` of law ``law``."""
    if name in _LINEAR_BOUNDS:
        return _LINEAR_BOUNDS[name]
    if law == LawForm.NA_ONLY.value and name == "h":
        return (1e-16, 1e-3)
    if law in (b.value for b in BaselineId):
        if name in ("gamma", "lam", "delta"):
            return (1e-3, 3.0)
        if (law, name) in ((BaselineId.FINE_GRAINED.value, "c"), (BaselineId.SPARSITY.value, "e_offset")):
            return _EPS_BOUNDS
    if name in ("alpha", "beta", "gamma"):
        return _EXPONENT_BOUNDS
    if name == "eps":
        return _EPS_BOUNDS
    return _WEIGHT_BOUNDS


def objective_value(residuals: np.ndarray, options: FitOptions) -> float:
    """The minimised objective, 0.5 sum rho for Huber or 0.5 sum r^2."""
    r = np.asarray(residuals, dtype=float)
    if options.objective == "squared-error":
        return float(0.5 * np.sum(r**2))
    delta = options.huber_delta
    z = (r / delta) ** 2
    rho = np.where(z <= 1, z, 2 * np.sqrt(z) - 1)
    return float(0.5 * delta**2 * np.sum(rho))


@dataclass
class FitResult:
    """Best fit over all starts with per-record residuals (predicted - observed)."""

    law: str
    params: Dict[str, float]
    record_ids: List[str]
    observed: np.ndarray
    predicted: np.ndarray
    residuals: np.ndarray
    mean_abs_error: float
    objective: float
    converged: bool
    start_index: int
    start_objectives: List[float] = field(default_factory=list)
    pinned: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    holdout_ids: List[str] = field(default_factory=list)
    holdout_observed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    holdout_predicted: np.ndarray = field(default_factory=lambda: np.zeros(0))
    holdout_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    holdout_mae: Optional[float] = None
    nfev: int = 0

    @property
    def constants(self) -> Optional[ScalingConstants]:
        """Fitted joint-law constants (joint fits only)."""
        if self.law != LawForm.JOINT.value:
            return None
        return ScalingConstants(**self.params)

    def sub_law_params(self) -> Union[SubLawParams, BaselineParams]:
        """The fitted coefficients as a sub-law or baseline parameter set."""
        if self.law in (b.value for b in BaselineId):
            return BaselineParams(baseline_id=self.law, params=self.params)
        return SubLawParams(law_form=self.law, params=self.params)

    def to_dict(self) -> Dict:
        """Constants, fit metrics, warnings and per-record residuals."""
        params = self.constants.to_dict() if self.constants is not None else dict(self.params)
        return {
            "law": self.law,
            "constants": params,
            "metrics": {
                "mean_abs_error": self.mean_abs_error,
                "objective": self.objective,
                "holdout_mae": self.holdout_mae,
                "converged": self.converged,
                "start_index": self.start_index,
                "starts": len(self.start_objectives),
                "nfev": self.nfev,
            },
            "pinned": dict(self.pinned),
            "warnings": list(self.warnings),
            "record_ids": list(self.record_ids),
            "residuals": [float(r) for r in self.residuals],
        }

    def to_frame(self) -> pd.DataFrame:
        """(record id, observed, predicted, residual, split) rows."""
        frame = pd.DataFrame(
            {
                "id": self.record_ids,
                "observed": self.observed,
                "predicted": self.predicted,
                "residual": self.residuals,
                "split": "fit",
            }
        )
        if self.holdout_ids:
            held = pd.DataFrame(
                {
                    "id": self.holdout_ids,
                    "observed": self.holdout_observed,
                    "predicted": self.holdout_predicted,
                    "residual": self.holdout_residuals,
                    "split": "holdout",
                }
            )
            frame = pd.concat([frame, held], ignore_index=True)
        return frame

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """Write the residual table as CSV; returns the text."""
        text = self.to_frame().to_csv(index=False)
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class _Problem:
    """One bounded least-squares problem over named parameters."""

    law: str
    names: Tuple[str, ...]
    model: Model
    X: Dict[str, np.ndarray]
    y: np.ndarray
    reference: Dict[str, float]
    pinned: Dict[str, float]
    bounds: Dict[str, Bounds]

    @property
    def free(self) -> List[str]:
        """Parameters left free, in law order."""
        return [name for name in self.names if name not in self.pinned]

    def is_log(self, name: str) -> bool:
        """Positive parameters are searched in log space."""
        return self.bounds[name][0] > 0

    def full_params(self, theta: np.ndarray) -> Dict[str, float]:
        params = dict(self.pinned)
        for name, value in zip(self.free, theta):
            params[name] = float(math.exp(value)) if self.is_log(name) else float(value)
        return {name: params[name] for name in self.names}

    def to_theta(self, params: Mapping[str, float]) -> np.ndarray:
        theta = []
        for name in self.free:
            lo, hi = self.bounds[name]
            value = min(max(float(params.get(name, self.reference[name])), lo), hi)
            theta.append(math.log(value) if self.is_log(name) else value)
        return np.array(theta)

    def theta_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = [math.log(self.bounds[n][0]) if self.is_log(n) else self.bounds[n][0] for n in self.free]
        hi = [math.log(self.bounds[n][1]) if self.is_log(n) else self.bounds[n][1] for n in self.free]
        return np.array(lo), np.array(hi)

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        pred, _ = self.model(self.full_params(theta), self.X, False)
        return pred - self.y

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        params = self.full_params(theta)
        _, jac = self.model(params, self.X, True)
        columns = []
        for name in self.free:
            column = np.broadcast_to(jac[name], self.y.shape)
            columns.append(column * params[name] if self.is_log(name) else column)
        return np.column_stack(columns) if columns else np.zeros((self.y.size, 0))


@dataclass
class _StartOutcome:
    index: int
    theta: np.ndarray
    objective: float
    converged: bool
    nfev: int


def _resolve_bounds(names: Sequence[str], law: str, options: FitOptions) -> Dict[str, Bounds]:
    unknown = set(options.bounds) - set(names)
    if unknown:
        logger.debug(f"Ignoring bounds for parameters not in {law}: {sorted(unknown)}")
    bounds = {}
    for name in names:
        lo, hi = options.bounds.get(name, default_bounds(name, law))
        default_lo = default_bounds(name, law)[0]
        if default_lo > 0 and lo <= 0:
            raise DomainError(f"Bounds for {name} must stay positive, got [{lo}, {hi}]", f"{name} > 0")
        bounds[name] = (float(lo), float(hi))
    return bounds


def _start_points(problem: _Problem, options: FitOptions) -> List[np.ndarray]:
    """Reference, caller initials, then random draws up to ``options.starts``."""
    starts = [problem.to_theta(problem.reference)]
    starts.extend(problem.to_theta(initial) for initial in options.initial)
    lo, hi = problem.theta_bounds()
    rng = np.random.default_rng(options.seed)
    for _ in range(max(options.starts - len(starts), 0)):
        starts.append(lo + (hi - lo) * rng.random(lo.size))
    return starts


def _run_start(problem: _Problem, options: FitOptions, index: int, theta0: np.ndarray) -> _StartOutcome:
    if theta0.size == 0:
        return _StartOutcome(index, theta0, objective_value(problem.residuals(theta0), options), True, 1)
    lo, hi = problem.theta_bounds()
    try:
        res = least_squares(
            problem.residuals,
            theta0,
            jac=problem.jacobian,
            bounds=(lo, hi),
            method="trf",
            loss="huber" if options.objective == "huber" else "linear",
            f_scale=options.huber_delta if options.objective == "huber" else 1.0,
            max_nfev=options.max_iterations,
            ftol=options.tolerance,
            xtol=options.tolerance,
            gtol=options.tolerance,
        )
    except (ValueError, FloatingPointError) as e:
        logger.debug(f"Start {index} of {problem.law} failed: {e}")
        return _StartOutcome(index, theta0, math.inf, False, 0)
    objective = objective_value(problem.residuals(res.x), options)
    if not math.isfinite(objective):
        objective = math.inf
    return _StartOutcome(index, res.x, objective, res.status > 0, res.nfev)


def _solve(problem: _Problem, options: FitOptions) -> List[_StartOutcome]:
    starts = _start_points(problem, options)
    if options.workers == 1:
        return [_run_start(problem, options, i, theta) for i, theta in enumerate(starts)]
    outcomes = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=options.workers) as executor:
        futures = {executor.submit(_run_start, problem, options, i, theta): i for i, theta in enumerate(starts)}
        for future in concurrent.futures.as_completed(futures):
            outcomes.append(future.result())
    return sorted(outcomes, key=lambda outcome: outcome.index)


def _split(records: Sequence[ExperimentRecord], options: FitOptions):
    records = deduplicate(records)
    if not options.holdout:
        return records, []
    train = [r for r in records if r.tags.get("tier") != "validation"]
    held = [r for r in records if r.tags.get("tier") == "validation"]
    return train, held


def _arrays(records: Sequence[ExperimentRecord], factors: Sequence[str]) -> Dict[str, np.ndarray]:
    return {name: np.array([getattr(r.point, name) for r in records], dtype=float) for name in factors}


def _fit(
    problem: _Problem,
    records: Sequence[ExperimentRecord],
    held: Sequence[ExperimentRecord],
    held_X: Dict[str, np.ndarray],
    options: FitOptions,
    warnings: List[str],
) -> FitResult:
    n_free = len(problem.free)
    if len(records) < 2 * n_free:
        raise InsufficientRecordsError(problem.law, len(records), n_free)
    outcomes = _solve(problem, options)
    best = min(outcomes, key=lambda outcome: (outcome.objective, outcome.index))
    if not math.isfinite(best.objective):
        raise DomainError(f"Every start of the {problem.law} fit failed", "finite objective")
    params = problem.full_params(best.theta)
    predicted, _ = problem.model(params, problem.X, False)
    predicted = np.broadcast_to(predicted, problem.y.shape).astype(float)
    residuals = predicted - problem.y
    if not best.converged:
        message = f"{problem.law} fit did not converge within {options.max_iterations} evaluations; best iterate returned"
        warnings.append(message)
        logger.warning(message)
    result = FitResult(
        law=problem.law,
        params=params,
        record_ids=[r.id for r in records],
        observed=problem.y.copy(),
        predicted=predicted,
        residuals=residuals,
        mean_abs_error=float(np.mean(np.abs(residuals))),
        objective=objective_value(residuals, options),
        converged=best.converged,
        start_index=best.index,
        start_objectives=[outcome.objective for outcome in outcomes],
        pinned=dict(problem.pinned),
        warnings=warnings,
        nfev=best.nfev,
    )
    if held:
        held_pred, _ = problem.model(params, held_X, False)
        result.holdout_ids = [r.id for r in held]
        result.holdout_observed = np.array([r.loss for r in held], dtype=float)
        result.holdout_predicted = np.broadcast_to(held_pred, (len(held),)).astype(float)
        result.holdout_residuals = result.holdout_predicted - result.holdout_observed
        result.holdout_mae = float(np.mean(np.abs(result.holdout_residuals)))
    logger.info(
        f"Fitted {problem.law} on {len(records)} record(s): objective {result.objective:.6g}, "
        f"MAE {result.mean_abs_error:.6g}, best start {best.index} of {len(outcomes)}"
    )
    return result


def _pin(problem_names, names: Sequence[str], reference: Mapping[str, float], bounds: Mapping[str, Bounds]) -> Dict[str, float]:
    return {n: min(max(reference[n], bounds[n][0]), bounds[n][1]) for n in names if n in problem_names}


def _fixed_by_bounds(names: Sequence[str], bounds: Mapping[str, Bounds]) -> Dict[str, float]:
    return {n: bounds[n][0] for n in names if bounds[n][0] == bounds[n][1]}


def _sub_law_reference(form: LawForm) -> Dict[str, float]:
    if form in _SUB_LAW_REFERENCE:
        return dict(_SUB_LAW_REFERENCE[form])
    return {name: PUBLISHED_CONSTANTS.as_params()[name] for name in FORM_PARAMS[form]}


def fit_sub_law(form: Union[LawForm, str], records: Sequence[ExperimentRecord], options: Optional[FitOptions] = None) -> FitResult:
    """Fit one intermediate law form.

    Raises DegenerateRecordsError when a factor the form reads does not vary.
    """
    options = options or FitOptions()
    form = LawForm(form)
    if form is LawForm.JOINT:
        return fit_joint(records, options)
    train, held = _split(records, options)
    factors = FORM_FACTORS[form]
    X = _arrays(train, factors)
    for name in factors:
        if X[name].size and np.ptp(X[name]) == 0:
            raise DegenerateRecordsError(form.value, name)
    names = FORM_PARAMS[form]
    bounds = _resolve_bounds(names, form.value, options)
    problem = _Problem(
        law=form.value,
        names=names,
        model=lambda p, X_, jac: law_values_and_jacobian(form, p, X_, jac),
        X=X,
        y=np.array([r.loss for r in train], dtype=float),
        reference=_sub_law_reference(form),
        pinned=_fixed_by_bounds(names, bounds),
        bounds=bounds,
    )
    return _fit(problem, train, held, _arrays(held, factors), options, [])


# factor -> joint parameters it alone identifies
_IDENTIFIED_BY = {
    "G": ("e", "f"),
    "S": ("m", "n"),
    "Na": ("k", "c", "h"),
    "D": ("b", "beta"),
    "N": ("a",),
}


def _bracket_min_on_hull(params: Mapping[str, float], X: Mapping[str, np.ndarray]) -> float:
    G = np.linspace(X["G"].min(), X["G"].max(), 200)
    S = np.linspace(X["S"].min(), X["S"].max(), 200)
    GG, SS = np.meshgrid(G, S)
    A = params["e"] * GG + params["f"] / GG + params["m"] * SS**2 + params["n"] * SS
    on_records = params["e"] * X["G"] + params["f"] / X["G"] + params["m"] * X["S"] ** 2 + params["n"] * X["S"]
    return float(min(A.min(), on_records.min()))


def fit_joint(
    records: Sequence[ExperimentRecord],
    options: Optional[FitOptions] = None,
    reference: ScalingConstants = PUBLISHED_CONSTANTS,
) -> FitResult:
    """Fit all twelve constants of the joint law.

    Factors with fewer than three distinct values pin the parameters they alone
    identify at the reference values; a warning names them.
    """
    options = options or FitOptions(starts=8)
    if options.starts < 8:
        raise DomainError(f"Joint fits need at least 8 starts, got {options.starts}", "starts >= 8")
    train, held = _split(records, options)
    X = _arrays(train, FORM_FACTORS[LawForm.JOINT])
    names = FORM_PARAMS[LawForm.JOINT]
    bounds = _resolve_bounds(names, LawForm.JOINT.value, options)
    ref = reference.as_params()
    warnings: List[str] = []
    pinned = _fixed_by_bounds(names, bounds)
    for factor, params in _IDENTIFIED_BY.items():
        if X[factor].size and np.unique(X[factor]).size < 3:
            pin = _pin(names, params, ref, bounds)
            pinned.update({k: v for k, v in pin.items() if k not in pinned})
            message = f"Factor {factor} takes fewer than 3 values; pinned {', '.join(params)} to reference values"
            warnings.append(message)
            logger.warning(message)
    problem = _Problem(
        law=LawForm.JOINT.value,
        names=names,
        model=lambda p, X_, jac: law_values_and_jacobian(LawForm.JOINT, p, X_, jac),
        X=X,
        y=np.array([r.loss for r in train], dtype=float),
        reference=ref,
        pinned=pinned,
        bounds=bounds,
    )
    result = _fit(problem, train, held, _arrays(held, FORM_FACTORS[LawForm.JOINT]), options, warnings)
    if X["G"].size and _bracket_min_on_hull(result.params, X) <= 0:
        message = "Fitted bracket eG + f/G + mS^2 + nS is non-positive on the record hull"
        result.warnings.append(message)
        logger.warning(message)
    return result


def _baseline_arrays(baseline: BaselineId, records: Sequence[ExperimentRecord]) -> Dict[str, np.ndarray]:
    if baseline is BaselineId.FINE_GRAINED:
        return _arrays(records, ("Na", "D", "G"))
    X = _arrays(records, ("N", "D", "Na"))
    X["sparsity"] = sparsity_of(X["N"], X["Na"])
    return X


def fit_baseline(
    baseline_id: Union[BaselineId, str], records: Sequence[ExperimentRecord], options: Optional[FitOptions] = None
) -> FitResult:
    """Fit a baseline law on the same records as the joint law."""
    options = options or FitOptions()
    baseline = BaselineId(baseline_id)
    train, held = _split(records, options)
    X = _baseline_arrays(baseline, train)
    size = "Na" if baseline is BaselineId.FINE_GRAINED else "N"
    for name in (size, "D"):
        if X[name].size and np.ptp(X[name]) == 0:
            raise DegenerateRecordsError(baseline.value, name)
    names = BASELINE_PARAMS[baseline]
    bounds = _resolve_bounds(names, baseline.value, options)
    reference = dict(_BASELINE_REFERENCE[baseline])
    warnings: List[str] = []
    pinned = _fixed_by_bounds(names, bounds)
    factor, unidentified = ("G", ("g", "gamma")) if baseline is BaselineId.FINE_GRAINED else ("sparsity", ("lam", "delta"))
    if X[factor].size and np.ptp(X[factor]) == 0:
        pinned.update(_pin(names, unidentified, reference, bounds))
        message = f"{factor} is constant; {', '.join(unidentified)} are unidentifiable and pinned"
        warnings.append(message)
        logger.warning(message)
    problem = _Problem(
        law=baseline.value,
        names=names,
        model=lambda p, X_, jac: baseline_values_and_jacobian(baseline, p, X_, jac),
        X=X,
        y=np.array([r.loss for r in train], dtype=float),
        reference=reference,
        pinned=pinned,
        bounds=bounds,
    )
    return _fit(problem, train, held, _baseline_arrays(baseline, held), options, warnings)


# ---------------------------------------------------------------------------
# Staged pipeline
# ---------------------------------------------------------------------------

def _close(x: float, y: float, rtol: float = 0.01) -> bool:
    return abs(x - y) <= rtol * max(abs(x), abs(y))


def controlled_subsets(records: Sequence[ExperimentRecord], fixed: Sequence[str]) -> List[List[ExperimentRecord]]:
    """Group records whose ``fixed`` factors agree within 1% of each group's first record."""
    groups: List[List[ExperimentRecord]] = []
    for record in records:
        for group in groups:
            anchor = group[0].point
            if all(_close(getattr(record.point, f), getattr(anchor, f)) for f in fixed):
                group.append(record)
                break
        else:
            groups.append([record])
    return groups


# stage form -> (factors held fixed, factors that must vary with their minimum distinct counts)
_STAGES: Tuple[Tuple[LawForm, Tuple[str, ...], Dict[str, int]], ...] = (
    (LawForm.ND, ("Na", "G", "S"), {"N": 3, "D": 3}),
    (LawForm.NDNA, ("G", "S"), {"N": 2, "D": 2, "Na": 3}),
    (LawForm.NDNAG, ("S",), {"N": 2, "D": 2, "Na": 2, "G": 3}),
    (LawForm.S_ONLY, ("N", "D", "Na", "G"), {"S": 3}),
)


def _stage_subset(records: Sequence[ExperimentRecord], fixed, varying: Mapping[str, int]) -> List[ExperimentRecord]:
    best: List[ExperimentRecord] = []
    for group in controlled_subsets(records, fixed):
        distinct = {f: len({getattr(r.point, f) for r in group}) for f in varying}
        if all(distinct[f] >= n for f, n in varying.items()) and len(group) > len(best):
            best = group
    return best


@dataclass
class StagedFit:
    """Per-stage fits, the joint fit they initialise and its constants."""

    stages: Dict[str, FitResult]
    skipped: List[str]
    joint: FitResult
    initial: Dict[str, float]
    warnings: List[str] = field(default_factory=list)

    @property
    def constants(self) -> ScalingConstants:
        """Constants of the seeded joint fit."""
        return self.joint.constants

    def to_dict(self) -> Dict:
        """Stage fits, the initial point and the joint fit."""
        return {
            "stages": {name: result.to_dict() for name, result in self.stages.items()},
            "skipped": list(self.skipped),
            "initial": dict(self.initial),
            "joint": self.joint.to_dict(),
            "constants": self.constants.to_dict(),
            "warnings": list(self.warnings),
        }


def staged_fit_pipeline(
    records: Sequence[ExperimentRecord],
    options: Optional[FitOptions] = None,
    reference: ScalingConstants = PUBLISHED_CONSTANTS,
) -> StagedFit:
    """Fit the marginal laws on their controlled sweeps, then the joint law.

    Stages run ND, NDNa, NDNaG and S-only in order, each seeded from the
    previous one. The S-only quadratic scales with the size bracket, so its
    coefficients are divided by that bracket before joining the initial point.
    """
    options = options or FitOptions(starts=8)
    train, _ = _split(records, options)
    stage_options = options.replace(holdout=False, initial=[], starts=min(options.starts, 8))
    initial = reference.as_params()
    stages: Dict[str, FitResult] = {}
    skipped: List[str] = []
    warnings: List[str] = []
    for form, fixed, varying in _STAGES:
        subset = _stage_subset(train, fixed, varying)
        if not subset:
            skipped.append(form.value)
            message = f"No controlled subset for stage {form.value}; stage skipped"
            warnings.append(message)
            logger.warning(message)
            continue
        seed = {k: initial[k] for k in FORM_PARAMS[form] if k in initial}
        try:
            result = fit_sub_law(form, subset, stage_options.replace(initial=[seed] if seed else []))
        except (DegenerateRecordsError, InsufficientRecordsError, DomainError) as e:
            skipped.append(form.value)
            message = f"Stage {form.value} skipped: {e}"
            warnings.append(message)
            logger.warning(message)
            continue
        stages[form.value] = result
        if form is LawForm.S_ONLY:
            point = subset[0].point
            c = ScalingConstants(**initial)
            B = point.N ** -c.alpha + c.k * point.Na ** -c.alpha + c.h * point.Na / point.N
            initial["m"] = result.params["m"] / B
            initial["n"] = result.params["n"] / B
        else:
            initial.update({k: v for k, v in result.params.items() if k in initial})
    bounds = _resolve_bounds(FORM_PARAMS[LawForm.JOINT], LawForm.JOINT.value, options)
    initial = {k: min(max(v, bounds[k][0]), bounds[k][1]) for k, v in initial.items()}
    joint = fit_joint(records, options.replace(initial=list(options.initial) + [initial]), reference=reference)
    logger.info(f"Staged pipeline finished: {len(stages)} stage(s) fitted, {len(skipped)} skipped")
    return StagedFit(stages=stages, skipped=skipped, joint=joint, initial=initial, warnings=warnings)


def fit_campaign(campaign: Campaign, law: str = "joint", options: Optional[FitOptions] = None) -> FitResult:
    """Fit ``law`` (a form, a baseline id or ``staged``) to a campaign."""
    if law == "staged":
        return staged_fit_pipeline(campaign.records, options).joint
    if law in (b.value for b in BaselineId):
        return fit_baseline(law, campaign.records, options)
    return fit_sub_law(law, campaign.records, options)
