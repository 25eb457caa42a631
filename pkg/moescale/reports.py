"""Report tables for mainstream MoE models and count formatting helpers."""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from .errors import DomainError, MoeScaleError
from .laws import ScalingConstants
from .optimizer import (
    efficiency_aware_ratio,
    optimal_G,
    optimal_S,
    practical_range_G,
    practical_range_S,
    theoretical_ratio,
)

logger = logging.getLogger(__name__)

ModelSpec = Tuple[str, float, float]

# (name, activated size, total size)
MAINSTREAM_MODELS: List[ModelSpec] = [
    ("gpt-oss-20b", 3.6e9, 21e9),
    ("Qwen3-30B-A3B", 3e9, 30e9),
    ("Hunyuan-A13B", 13e9, 80e9),
    ("GLM-4.5-Air", 12e9, 106e9),
    ("gpt-oss-120b", 5.1e9, 117e9),
    ("Qwen3-235B-A22B", 22e9, 235e9),
    ("GLM-4.5", 32e9, 355e9),
    ("Deepseek-V3.1", 37e9, 671e9),
    ("Kimi-K2", 32e9, 1e12),
]

REPORT_KINDS = ("table3", "table4")
SUFFIXES = {"K": 1e3, "M": 1e6, "B": 1e9, "T": 1e12}
_COUNT_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([KMBTkmbt]?)\s*$")


def parse_count(text: Union[str, float]) -> float:
    """Parse ``1e9``, ``2400000000`` or suffixed forms like ``30M``/``1.5B`` to a raw count."""
    if isinstance(text, (int, float)):
        return float(text)
    match = _COUNT_RE.match(str(text))
    if not match:
        raise DomainError(f"Invalid count '{text}'", "number with optional K/M/B/T suffix")
    value, suffix = match.groups()
    return float(value) * SUFFIXES.get(suffix.upper(), 1.0)


def format_count(num: float, digits: int = 1) -> str:
    """Format large counts with a K/M/B/T suffix."""
    if num >= 1e12:
        return f"{num / 1e12:.{digits}f}T"
    elif num >= 1e9:
        return f"{num / 1e9:.{digits}f}B"
    elif num >= 1e6:
        return f"{num / 1e6:.{digits}f}M"
    elif num >= 1e3:
        return f"{num / 1e3:.{digits}f}K"
    return f"{num:g}"


def parse_model_spec(text: str) -> ModelSpec:
    """Parse ``name:Na:N``."""
    parts = text.split(":")
    if len(parts) != 3 or not parts[0]:
        raise DomainError(f"Invalid model '{text}', expected name:Na:N", "model is name:Na:N")
    return parts[0], parse_count(parts[1]), parse_count(parts[2])


def _percent(ratio: Optional[float], N: float) -> str:
    if ratio is None:
        return "no convergence"
    return f"{100 * ratio:.2f}% ({format_count(ratio * N)})"


@dataclass
class ReportTable:
    """A rendered report: display cells plus the numbers behind them."""

    kind: str
    columns: List[str]
    thresholds: Tuple[float, ...] = ()
    rows: List[List[str]] = field(default_factory=list)
    records: List[Dict] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """One row per model with numeric columns."""
        return pd.DataFrame(self.records)

    def to_markdown(self) -> str:
        """The table as GitHub markdown."""
        lines = [
            "| " + " | ".join(self.columns) + " |",
            "|" + "|".join("---" for _ in self.columns) + "|",
        ]
        lines.extend("| " + " | ".join(row) + " |" for row in self.rows)
        return "\n".join(lines) + "\n"

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """Write the numeric table as CSV; returns the text."""
        frame = self.to_frame()
        if frame.empty:
            frame = pd.DataFrame(columns=_numeric_columns(self.kind, self.thresholds))
        text = frame.to_csv(index=False)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> Dict:
        """Kind, display columns and numeric rows."""
        return {"kind": self.kind, "columns": self.columns, "rows": self.records}


def _numeric_columns(kind: str, thresholds: Sequence[float]) -> List[str]:
    if kind == "table3":
        return ["model", "N", "Na", "G_opt", "G_lo", "G_hi", "S_opt", "S_lo", "S_hi", "error"]
    return ["model", "N", "Na", "ratio_theoretical"] + [f"ratio_practical_{t:g}" for t in thresholds] + ["error"]


def _table3_row(constants: ScalingConstants, name: str, Na: float, N: float, threshold: float):
    G_range = practical_range_G(constants, N, Na, threshold)
    S_range = practical_range_S(constants, N, Na, threshold)
    G_opt, S_opt = optimal_G(constants), optimal_S(constants)
    record = {
        "model": name, "N": N, "Na": Na,
        "G_opt": G_opt, "G_lo": G_range.lo, "G_hi": G_range.hi,
        "S_opt": S_opt, "S_lo": S_range.lo, "S_hi": S_range.hi,
        "error": None,
    }
    cells = [
        name, format_count(N), format_count(Na),
        f"{G_opt:.2f}", f"[{G_range.lo:.2f}, {G_range.hi:.2f}]",
        f"{S_opt:.3f}", f"[{S_range.lo:.3f}, {S_range.hi:.3f}]",
    ]
    return cells, record


def _table4_row(constants: ScalingConstants, name: str, Na: float, N: float, thresholds: Sequence[float]):
    ratio_t = theoretical_ratio(constants, N)
    record = {"model": name, "N": N, "Na": Na, "ratio_theoretical": ratio_t}
    cells = [name, format_count(N), format_count(Na), _percent(ratio_t, N)]
    for threshold in thresholds:
        ratio_e = efficiency_aware_ratio(constants, N, threshold=threshold)
        record[f"ratio_practical_{threshold:g}"] = ratio_e
        cells.append(_percent(ratio_e, N))
    record["error"] = None
    return cells, record


def render_table(
    kind: str,
    models: Sequence[ModelSpec] = MAINSTREAM_MODELS,
    constants: Optional[ScalingConstants] = None,
    thresholds: Sequence[float] = (0.001, 0.005),
) -> ReportTable:
    """Optimal-configuration table for each (name, Na, N).

    ``table3`` lists G and S optima with their practical ranges at the first
    threshold; ``table4`` lists the theoretical activation ratio and the
    efficiency-aware ratio at every threshold. G and S sit at their optima.
    Rows whose computation fails carry the error in their cells.
    """
    if kind not in REPORT_KINDS:
        raise DomainError(f"Unknown report kind '{kind}', expected one of {REPORT_KINDS}", "kind in table3, table4")
    if not thresholds:
        raise DomainError("At least one threshold is required", "thresholds non-empty")
    constants = constants or ScalingConstants()
    if kind == "table3":
        thr = thresholds[0]
        columns = ["Model", "N", "Na", "G Opt", f"G Practical Range (Thr={thr:g})", "S Opt", f"S Practical Range (Thr={thr:g})"]
    else:
        columns = ["Model", "N", "Na", "Theoretical Opt"] + [f"Practical Opt (Thr={t:g})" for t in thresholds]
    table = ReportTable(kind=kind, columns=columns, thresholds=tuple(thresholds))
    for name, Na, N in models:
        try:
            if kind == "table3":
                cells, record = _table3_row(constants, name, Na, N, thresholds[0])
            else:
                cells, record = _table4_row(constants, name, Na, N, thresholds)
        except MoeScaleError as e:
            logger.warning(f"Report row '{name}' failed: {e}")
            cells = [name, format_count(N), format_count(Na)] + [f"error: {e}"] * (len(columns) - 3)
            record = {"model": name, "N": N, "Na": Na, "error": str(e)}
        table.rows.append(cells)
        table.records.append(record)
    return table
