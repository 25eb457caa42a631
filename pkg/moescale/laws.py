"""Scaling-law constants and pure evaluators for the joint MoE loss law.

The joint law predicts validation loss from total size ``N``, data size ``D``,
activated size ``Na``, activated expert count ``G`` and shared-expert ratio ``S``::

    L = (eG + f/G + mS^2 + nS) * (N^-a + k Na^-a + h Na/N)
        + a N^-alpha + b D^-beta + c Na^-alpha + eps

All sizes are raw parameter and token counts. Every function here is pure.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

FACTORS = ("N", "D", "Na", "G", "S")
# Factor ranges covered by the fitting experiments; outside them the law extrapolates.
STUDY_RANGES: Dict[str, Tuple[float, float]] = {
    "N": (133e6, 3.4e9),
    "D": (10e9, 50e9),
    "Na": (30e6, 2.2e9),
    "G": (1.0, 20.0),
    "S": (0.0, 0.7),
}
VALIDATION_RANGES: Dict[str, Tuple[float, float]] = {"N": (2.4e9, 9e9), "D": (10e9, 100e9)}
CONSTANT_NAMES = ("e", "f", "m", "n", "k", "h", "a", "alpha", "b", "beta", "c", "eps")
# eps is serialised under its table name
_JSON_KEYS = {name: ("epsilon" if name == "eps" else name) for name in CONSTANT_NAMES}
_SIGNED = {"n"}
_EXPONENTS = {"alpha", "beta"}


@dataclass(frozen=True)
class ScalingConstants:
    """The twelve fitted hyperparameters of the joint law.

    Defaults are the published fit. Weights may be zero so that degenerate
    laws (for instance an irreducible-loss-only law) can be expressed; the
    exponents and ``eps`` must be strictly positive and only ``n`` may be negative.
    """

    e: float = 0.1577
    f: float = 7.2446
    m: float = 5.1395
    n: float = -3.2363
    k: float = 0.0013
    h: float = 0.0450
    a: float = 38.0510
    alpha: float = 0.2383
    b: float = 27129.0488
    beta: float = 0.4694
    c: float = 31.0958
    eps: float = 1.8182

    def __post_init__(self):
        """Validate constant signs."""
        for name in CONSTANT_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"Constant {name} must be finite, got {value}", f"{name} finite")
            if name in _SIGNED:
                continue
            if name in _EXPONENTS or name == "eps":
                if value <= 0:
                    raise DomainError(f"Constant {name} must be positive, got {value}", f"{name} > 0")
            elif value < 0:
                raise DomainError(f"Constant {name} must be non-negative, got {value}", f"{name} >= 0")

    def to_dict(self) -> Dict[str, float]:
        """Convert to the flat 12-key JSON object."""
        return {_JSON_KEYS[name]: float(getattr(self, name)) for name in CONSTANT_NAMES}

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "ScalingConstants":
        """Build from the flat 12-key JSON object."""
        expected = set(_JSON_KEYS.values())
        missing = expected - set(data)
        extra = set(data) - expected
        if missing or extra:
            raise DomainError(
                f"Constants object must have exactly the keys {sorted(expected)}; "
                f"missing {sorted(missing)}, unexpected {sorted(extra)}",
                "12 constant keys",
            )
        return cls(**{name: float(data[_JSON_KEYS[name]]) for name in CONSTANT_NAMES})

    def replace(self, **changes: float) -> "ScalingConstants":
        """Copy with some constants changed; the copy is validated again."""
        return replace(self, **changes)

    def as_params(self) -> Dict[str, float]:
        """Parameter mapping keyed by attribute name."""
        return {name: float(getattr(self, name)) for name in CONSTANT_NAMES}


PUBLISHED_CONSTANTS = ScalingConstants()


@dataclass(frozen=True)
class FactorPoint:
    """One abstract configuration at which loss is predicted."""

    N: float
    D: float
    Na: float
    G: float
    S: float

    def __post_init__(self):
        """Validate the factor domain."""
        _check_factors({name: getattr(self, name) for name in FACTORS})

    def to_dict(self) -> Dict[str, float]:
        """Factor name to value."""
        return asdict(self)

    def replace(self, **changes: float) -> "FactorPoint":
        """Copy with some factors changed; the copy is validated again."""
        return replace(self, **changes)


def _check_factors(values: Mapping[str, object]):
    """Raise DomainError on the first violated factor precondition.

    Accepts scalars or arrays; only the factors present are checked.
    """
    arrays = {name: np.asarray(value, dtype=float) for name, value in values.items()}
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"Factor {name} must be finite", f"{name} finite")
    for name in ("N", "D", "Na"):
        if name in arrays and np.any(arrays[name] <= 0):
            raise DomainError(f"Factor {name} must be positive", f"{name} > 0")
    if "N" in arrays and "Na" in arrays and np.any(arrays["Na"] > arrays["N"]):
        raise DomainError("Activated size Na must not exceed total size N", "Na <= N")
    if "G" in arrays and np.any(arrays["G"] < 1):
        raise DomainError("Activated expert count G must be at least 1", "G >= 1")
    if "S" in arrays and np.any((arrays["S"] < 0) | (arrays["S"] >= 1)):
        raise DomainError("Shared-expert ratio S must lie in [0, 1)", "0 <= S < 1")


def _factor_values(point: Union[FactorPoint, Mapping[str, float]], needed: Tuple[str, ...]) -> Dict[str, float]:
    if isinstance(point, FactorPoint):
        return {name: getattr(point, name) for name in needed}
    missing = [name for name in needed if point.get(name) is None]
    if missing:
        raise DomainError(f"Missing factor(s) {', '.join(missing)}", f"{missing[0]} supplied")
    values = {name: float(point[name]) for name in needed}
    # Na <= N is checked whenever both are known, even if the form needs only one
    extra = {name: float(point[name]) for name in ("N", "Na") if name not in values and point.get(name) is not None}
    _check_factors({**values, **extra})
    return values


# ---------------------------------------------------------------------------
# Joint law
# ---------------------------------------------------------------------------

def structure_bracket(constants: ScalingConstants, G, S):
    """The G/S bracket eG + f/G + mS^2 + nS."""
    return constants.e * G + constants.f / G + constants.m * S**2 + constants.n * S


def size_bracket(constants: ScalingConstants, N, Na):
    """The size bracket N^-alpha + k Na^-alpha + h Na/N that scales the structure term."""
    return N ** -constants.alpha + constants.k * Na ** -constants.alpha + constants.h * Na / N


def base_terms(constants: ScalingConstants, N, D, Na):
    """The Chinchilla-like remainder a N^-alpha + b D^-beta + c Na^-alpha + eps."""
    return (
        constants.a * N ** -constants.alpha
        + constants.b * D ** -constants.beta
        + constants.c * Na ** -constants.alpha
        + constants.eps
    )


def eval_joint_loss_array(constants: ScalingConstants, N, D, Na, G, S) -> np.ndarray:
    """Vectorised joint-law evaluation over broadcastable factor arrays."""
    N, D, Na, G, S = (np.asarray(x, dtype=float) for x in (N, D, Na, G, S))
    _check_factors({"N": N, "D": D, "Na": Na, "G": G, "S": S})
    return structure_bracket(constants, G, S) * size_bracket(constants, N, Na) + base_terms(constants, N, D, Na)


def eval_joint_loss(constants: ScalingConstants, point: FactorPoint) -> float:
    """Predicted loss at a single configuration.

    Raises DomainError when the prediction falls below the irreducible loss,
    which only happens when the structure bracket is negative at ``point``.
    """
    loss = float(eval_joint_loss_array(constants, point.N, point.D, point.Na, point.G, point.S))
    if not math.isfinite(loss):
        raise DomainError(f"Joint law is not finite at {point}", "finite prediction")
    if loss < constants.eps:
        raise DomainError(
            f"Predicted loss {loss:.6g} is below the irreducible loss {constants.eps:g} at {point}",
            "prediction >= eps",
        )
    return loss


@dataclass(frozen=True)
class FactorGradient:
    """Partial derivatives of the joint loss with respect to each factor."""

    dN: float
    dD: float
    dNa: float
    dG: float
    dS: float

    def as_array(self) -> np.ndarray:
        """Partials in (N, D, Na, G, S) order."""
        return np.array([self.dN, self.dD, self.dNa, self.dG, self.dS])

    def to_dict(self) -> Dict[str, float]:
        """Partial name to value."""
        return asdict(self)


def eval_joint_gradient(constants: ScalingConstants, point: FactorPoint) -> FactorGradient:
    """Analytic partials of the joint loss at ``point``."""
    if point.S == 0 or point.Na == point.N or point.G == 1:
        raise DomainError("Gradient requires an interior point (G > 1, 0 < S, Na < N)", "interior point")
    c = constants
    N, D, Na, G, S = point.N, point.D, point.Na, point.G, point.S
    A = structure_bracket(c, G, S)
    B = size_bracket(c, N, Na)
    dN = A * (-c.alpha * N ** (-c.alpha - 1) - c.h * Na / N**2) - c.a * c.alpha * N ** (-c.alpha - 1)
    dD = -c.b * c.beta * D ** (-c.beta - 1)
    dNa = A * (-c.k * c.alpha * Na ** (-c.alpha - 1) + c.h / N) - c.c * c.alpha * Na ** (-c.alpha - 1)
    dG = (c.e - c.f / G**2) * B
    dS = (2 * c.m * S + c.n) * B
    return FactorGradient(float(dN), float(dD), float(dNa), float(dG), float(dS))


# ---------------------------------------------------------------------------
# Marginal and intermediate laws
# ---------------------------------------------------------------------------

class LawForm(str, Enum):
    """The intermediate laws built up to the joint law."""

    ND = "ND"
    NA_ONLY = "Na-only"
    NDNA = "NDNa"
    G_ONLY = "G-only"
    NDNAG = "NDNaG"
    S_ONLY = "S-only"
    JOINT = "joint"


FORM_PARAMS: Dict[LawForm, Tuple[str, ...]] = {
    LawForm.ND: ("a", "alpha", "b", "beta", "eps"),
    LawForm.NA_ONLY: ("c", "gamma", "h", "iota"),
    LawForm.NDNA: ("a", "alpha", "b", "beta", "c", "h", "eps"),
    LawForm.G_ONLY: ("e", "f", "tau"),
    LawForm.NDNAG: ("e", "f", "k", "h", "a", "alpha", "b", "beta", "c", "eps"),
    LawForm.S_ONLY: ("m", "n", "psi"),
    LawForm.JOINT: CONSTANT_NAMES,
}

FORM_FACTORS: Dict[LawForm, Tuple[str, ...]] = {
    LawForm.ND: ("N", "D"),
    LawForm.NA_ONLY: ("Na",),
    LawForm.NDNA: ("N", "D", "Na"),
    LawForm.G_ONLY: ("G",),
    LawForm.NDNAG: ("N", "D", "Na", "G"),
    LawForm.S_ONLY: ("S",),
    LawForm.JOINT: FACTORS,
}

# offsets and the S-linear coefficient carry no sign constraint
SIGNED_PARAMS = frozenset({"n", "tau", "psi", "iota"})


def _check_params(kind: str, expected: Tuple[str, ...], params: Mapping[str, float], signed=SIGNED_PARAMS):
    if set(params) != set(expected):
        raise DomainError(
            f"{kind} expects parameters {list(expected)}, got {sorted(params)}",
            f"{kind} parameter names",
        )
    for name, value in params.items():
        if not math.isfinite(value):
            raise DomainError(f"Parameter {name} must be finite", f"{name} finite")
        if name not in signed and value < 0:
            raise DomainError(f"Parameter {name} must be non-negative, got {value}", f"{name} >= 0")


@dataclass(frozen=True)
class SubLawParams:
    """Coefficients of one intermediate law form."""

    law_form: LawForm
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        """Coerce the form and check its parameter names."""
        form = LawForm(self.law_form)
        object.__setattr__(self, "law_form", form)
        object.__setattr__(self, "params", {name: float(value) for name, value in self.params.items()})
        _check_params(f"Form {form.value}", FORM_PARAMS[form], self.params)

    def to_dict(self) -> Dict:
        """Form name and its coefficients."""
        return {"law_form": self.law_form.value, "params": dict(self.params)}


def law_values_and_jacobian(
    form: LawForm, p: Mapping[str, float], X: Mapping[str, np.ndarray], jacobian: bool = True
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Predictions of ``form`` at factor arrays ``X`` and d(prediction)/d(parameter)."""
    form = LawForm(form)
    jac: Dict[str, np.ndarray] = {}
    if form is LawForm.ND:
        N, D = X["N"], X["D"]
        tN, tD = N ** -p["alpha"], D ** -p["beta"]
        pred = p["a"] * tN + p["b"] * tD + p["eps"]
        if jacobian:
            jac = {
                "a": tN,
                "alpha": -p["a"] * np.log(N) * tN,
                "b": tD,
                "beta": -p["b"] * np.log(D) * tD,
                "eps": np.ones_like(pred),
            }
        return pred, jac
    if form is LawForm.NA_ONLY:
        Na = X["Na"]
        tNa = Na ** -p["gamma"]
        pred = p["c"] * tNa + p["h"] * Na + p["iota"]
        if jacobian:
            jac = {"c": tNa, "gamma": -p["c"] * np.log(Na) * tNa, "h": Na, "iota": np.ones_like(pred)}
        return pred, jac
    if form is LawForm.NDNA:
        N, D, Na = X["N"], X["D"], X["Na"]
        tN, tD, tNa = N ** -p["alpha"], D ** -p["beta"], Na ** -p["alpha"]
        pred = p["a"] * tN + p["b"] * tD + p["c"] * tNa + p["h"] * Na / N + p["eps"]
        if jacobian:
            jac = {
                "a": tN,
                "alpha": -p["a"] * np.log(N) * tN - p["c"] * np.log(Na) * tNa,
                "b": tD,
                "beta": -p["b"] * np.log(D) * tD,
                "c": tNa,
                "h": Na / N,
                "eps": np.ones_like(pred),
            }
        return pred, jac
    if form is LawForm.G_ONLY:
        G = X["G"]
        pred = p["e"] * G + p["f"] / G + p["tau"]
        if jacobian:
            jac = {"e": G, "f": 1.0 / G, "tau": np.ones_like(pred)}
        return pred, jac
    if form is LawForm.S_ONLY:
        S = X["S"]
        pred = p["m"] * S**2 + p["n"] * S + p["psi"]
        if jacobian:
            jac = {"m": S**2, "n": S, "psi": np.ones_like(pred)}
        return pred, jac

    # NDNaG and joint share the bracketed structure term
    N, D, Na, G = X["N"], X["D"], X["Na"], X["G"]
    with_s = form is LawForm.JOINT
    A = p["e"] * G + p["f"] / G
    if with_s:
        S = X["S"]
        A = A + p["m"] * S**2 + p["n"] * S
    tN, tD, tNa = N ** -p["alpha"], D ** -p["beta"], Na ** -p["alpha"]
    B = tN + p["k"] * tNa + p["h"] * Na / N
    pred = A * B + p["a"] * tN + p["b"] * tD + p["c"] * tNa + p["eps"]
    if jacobian:
        lnN, lnNa = np.log(N), np.log(Na)
        jac = {
            "e": G * B,
            "f": B / G,
            "k": A * tNa,
            "h": A * Na / N,
            "a": tN,
            "alpha": A * (-lnN * tN - p["k"] * lnNa * tNa) - p["a"] * lnN * tN - p["c"] * lnNa * tNa,
            "b": tD,
            "beta": -p["b"] * np.log(D) * tD,
            "c": tNa,
            "eps": np.ones_like(pred),
        }
        if with_s:
            jac["m"] = S**2 * B
            jac["n"] = S * B
    return pred, jac


def eval_sub_law(params: SubLawParams, point: Union[FactorPoint, Mapping[str, float]]) -> float:
    """Evaluate one intermediate law; factors the form does not use are ignored."""
    form = params.law_form
    values = _factor_values(point, FORM_FACTORS[form])
    X = {name: np.asarray(value, dtype=float) for name, value in values.items()}
    pred, _ = law_values_and_jacobian(form, params.params, X, jacobian=False)
    return float(pred)


# ---------------------------------------------------------------------------
# Baseline laws from related work
# ---------------------------------------------------------------------------

class BaselineId(str, Enum):
    """Published MoE laws the joint law is compared against."""

    FINE_GRAINED = "fine-grained-granularity"
    SPARSITY = "sparsity-flops"


BASELINE_PARAMS: Dict[BaselineId, Tuple[str, ...]] = {
    BaselineId.FINE_GRAINED: ("c", "g", "gamma", "a", "alpha", "b", "beta"),
    BaselineId.SPARSITY: ("a", "alpha", "b", "beta", "c", "lam", "d", "delta", "gamma", "e_offset"),
}

# The granularity law reads N as the activated size.
BASELINE_FACTORS: Dict[BaselineId, Tuple[str, ...]] = {
    BaselineId.FINE_GRAINED: ("Na", "D", "G"),
    BaselineId.SPARSITY: ("N", "D", "sparsity"),
}


@dataclass(frozen=True)
class BaselineParams:
    """Coefficients of a baseline law."""

    baseline_id: BaselineId
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        """Coerce the id and check its parameter names."""
        baseline = BaselineId(self.baseline_id)
        object.__setattr__(self, "baseline_id", baseline)
        object.__setattr__(self, "params", {name: float(value) for name, value in self.params.items()})
        _check_params(f"Baseline {baseline.value}", BASELINE_PARAMS[baseline], self.params, signed=frozenset())

    def to_dict(self) -> Dict:
        """Baseline id and its coefficients."""
        return {"baseline_id": self.baseline_id.value, "params": dict(self.params)}


def sparsity_of(N, Na):
    """Fraction of parameters left inactive, 1 - Na/N."""
    return 1.0 - np.asarray(Na, dtype=float) / np.asarray(N, dtype=float)


def baseline_values_and_jacobian(
    baseline: BaselineId, p: Mapping[str, float], X: Mapping[str, np.ndarray], jacobian: bool = True
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Predictions of a baseline law and d(prediction)/d(parameter)."""
    baseline = BaselineId(baseline)
    jac: Dict[str, np.ndarray] = {}
    if baseline is BaselineId.FINE_GRAINED:
        Na, D, G = X["Na"], X["D"], X["G"]
        tN, tD, tG = Na ** -p["alpha"], D ** -p["beta"], G ** -p["gamma"]
        weight = p["g"] * tG + p["a"]
        pred = p["c"] + weight * tN + p["b"] * tD
        if jacobian:
            jac = {
                "c": np.ones_like(pred),
                "g": tG * tN,
                "gamma": -p["g"] * np.log(G) * tG * tN,
                "a": tN,
                "alpha": -weight * np.log(Na) * tN,
                "b": tD,
                "beta": -p["b"] * np.log(D) * tD,
            }
        return pred, jac

    N, D, s = X["N"], X["D"], X["sparsity"]
    dense = 1.0 - s
    tN, tD = N ** -p["alpha"], D ** -p["beta"]
    tL, tDl, tG = dense ** -p["lam"], dense ** -p["delta"], N ** -p["gamma"]
    pred = p["a"] * tN + p["b"] * tD + p["c"] * tL + p["d"] * tDl * tG + p["e_offset"]
    if jacobian:
        ln_dense = np.log(dense)
        jac = {
            "a": tN,
            "alpha": -p["a"] * np.log(N) * tN,
            "b": tD,
            "beta": -p["b"] * np.log(D) * tD,
            "c": tL,
            "lam": -p["c"] * ln_dense * tL,
            "d": tDl * tG,
            "delta": -p["d"] * ln_dense * tDl * tG,
            "gamma": -p["d"] * np.log(N) * tDl * tG,
            "e_offset": np.ones_like(pred),
        }
    return pred, jac


def eval_baseline(
    params: BaselineParams,
    point: Union[FactorPoint, Mapping[str, float]],
    sparsity: Optional[float] = None,
) -> float:
    """Evaluate a baseline law.

    The granularity law takes the activated size as its model size. The
    sparsity law uses ``sparsity`` when given, else 1 - Na/N.
    """
    baseline = params.baseline_id
    if baseline is BaselineId.FINE_GRAINED:
        values = _factor_values(point, BASELINE_FACTORS[baseline])
    else:
        values = _factor_values(point, ("N", "D"))
        if sparsity is None:
            if isinstance(point, FactorPoint):
                sparsity = float(sparsity_of(point.N, point.Na))
            elif point.get("sparsity") is not None:
                sparsity = float(point["sparsity"])
            elif point.get("Na") is not None:
                sparsity = float(sparsity_of(values["N"], point["Na"]))
            else:
                raise DomainError("Sparsity baseline needs sparsity or Na", "sparsity supplied")
        if not (0 <= sparsity < 1):
            raise DomainError(f"Sparsity must lie in [0, 1), got {sparsity}", "0 <= sparsity < 1")
        values["sparsity"] = sparsity
    X = {name: np.asarray(value, dtype=float) for name, value in values.items()}
    pred, _ = baseline_values_and_jacobian(baseline, params.params, X, jacobian=False)
    return float(pred)
