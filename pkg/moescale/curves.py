"""Loss curves along one factor, as plottable tables."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DomainError, MoeScaleError
from .laws import FactorPoint, ScalingConstants, eval_joint_loss
from .optimizer import DEFAULT_FRONTIER_BUDGETS, compute_optimal_frontier

logger = logging.getLogger(__name__)

CURVE_TARGETS = ("G-marginal", "S-marginal", "Na-marginal", "frontier")

DEFAULT_FIXED: Dict[str, Dict[str, float]] = {
    "G-marginal": {"N": 2.4e9, "Na": 476e6, "D": 5e10, "S": 0.2},
    "S-marginal": {"N": 2.4e9, "Na": 476e6, "D": 5e10, "G": 8.0},
    "Na-marginal": {"N": 2.4e9, "D": 5e10, "G": 8.0, "S": 0.2},
    "frontier": {"N": 1e12, "G": 7.0, "S": 0.31},
}

_X_COLUMN = {"G-marginal": "G", "S-marginal": "S", "Na-marginal": "r", "frontier": "C"}


def default_grid(target: str) -> np.ndarray:
    """Default x values for ``target``."""
    if target == "G-marginal":
        return np.round(np.arange(10, 201) * 0.1, 10)
    if target == "S-marginal":
        return np.round(np.arange(0, 91) * 0.01, 10)
    if target == "Na-marginal":
        return np.arange(1, 101) / 100
    return np.asarray(DEFAULT_FRONTIER_BUDGETS)


@dataclass
class Curve:
    """Predicted loss at each grid value; failed points carry their error."""

    target: str
    fixed: Dict[str, float]
    x: List[float] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    errors: List[Optional[str]] = field(default_factory=list)
    extra: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def x_name(self) -> str:
        """Column name of the x values."""
        return _X_COLUMN[self.target]

    def argmin(self) -> float:
        """Grid value with the lowest loss; failed points are skipped."""
        values = np.array(self.loss, dtype=float)
        if not np.any(np.isfinite(values)):
            raise DomainError(f"No point of the {self.target} curve has a finite loss", "finite loss on the grid")
        return self.x[int(np.nanargmin(values))]

    def to_frame(self) -> pd.DataFrame:
        """One row per grid value; failed points keep their error text."""
        frame = pd.DataFrame({self.x_name: self.x, "loss": self.loss})
        for name, values in self.extra.items():
            frame[name] = values
        frame["error"] = [e or "" for e in self.errors]
        return frame

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """Write the curve as CSV; returns the text."""
        text = self.to_frame().to_csv(index=False)
        if path is not None:
            Path(path).write_text(text)
        return text


def emit_curve(
    target: str,
    constants: ScalingConstants,
    fixed: Optional[Mapping[str, float]] = None,
    grid: Optional[Sequence[float]] = None,
) -> Curve:
    """Loss along ``target`` with the other factors fixed.

    The Na marginal is indexed by r = Na/N; the frontier by compute budget C,
    reporting the minimal loss with Na* and D*.
    """
    if target not in CURVE_TARGETS:
        raise DomainError(f"Unknown curve '{target}', expected one of {CURVE_TARGETS}", "target known")
    values = dict(DEFAULT_FIXED[target])
    values.update({k: float(v) for k, v in (fixed or {}).items() if v is not None})
    grid = default_grid(target) if grid is None else np.asarray(grid, dtype=float)
    curve = Curve(target=target, fixed=values)

    if target == "frontier":
        frontier = compute_optimal_frontier(constants, values["N"], values["G"], values["S"], grid)
        curve.x = [p.C for p in frontier.points]
        curve.loss = [p.L_star for p in frontier.points]
        curve.errors = [p.error for p in frontier.points]
        curve.extra = {"Na_star": [p.Na_star for p in frontier.points], "D_star": [p.D_star for p in frontier.points]}
        return curve

    for x in grid:
        factors = dict(values)
        if target == "Na-marginal":
            factors["Na"] = x * values["N"]
        else:
            factors[_X_COLUMN[target]] = x
        try:
            point = FactorPoint(**{k: factors[k] for k in ("N", "D", "Na", "G", "S")})
            loss, error = eval_joint_loss(constants, point), None
        except MoeScaleError as e:
            loss, error = float("nan"), str(e)
            logger.warning(f"{target} point {x:g}: {e}")
        curve.x.append(float(x))
        curve.loss.append(loss)
        curve.errors.append(error)
    return curve
