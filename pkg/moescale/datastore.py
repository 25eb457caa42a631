"""Experiment records and campaigns: ingest, export and synthetic generation."""

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from .architecture import PRESETS, count_params, round_half_away
from .errors import DomainError, SchemaError
from .laws import FACTORS, STUDY_RANGES, VALIDATION_RANGES, FactorPoint, ScalingConstants, eval_joint_loss

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("N", "D", "Na", "G", "S", "loss")
CSV_COLUMNS = REQUIRED_COLUMNS + ("id", "tags")


def parse_tags(text: Union[str, Dict, None]) -> Dict[str, str]:
    """Parse ``k=v;k2=v2`` (or pass a mapping through)."""
    if text is None or (isinstance(text, float) and math.isnan(text)):
        return {}
    if isinstance(text, dict):
        return {str(k): str(v) for k, v in text.items()}
    tags = {}
    for item in str(text).split(";"):
        if not item.strip():
            continue
        key, _, value = item.partition("=")
        tags[key.strip()] = value.strip()
    return tags


def format_tags(tags: Dict[str, str]) -> str:
    return ";".join(f"{k}={v}" for k, v in tags.items())


@dataclass(frozen=True)
class ExperimentRecord:
    """One configuration with its observed validation loss."""

    id: str
    point: FactorPoint
    loss: float
    tags: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        """Validate the observed loss."""
        if not (math.isfinite(self.loss) and self.loss > 0):
            raise DomainError(f"Observed loss must be positive, got {self.loss}", "loss > 0")

    def to_dict(self) -> Dict:
        """Flat row with the factors, loss and tags."""
        row = {"id": self.id}
        row.update(self.point.to_dict())
        row["loss"] = self.loss
        row["tags"] = dict(self.tags)
        return row


def deduplicate(records: Iterable[ExperimentRecord]) -> List[ExperimentRecord]:
    """Average losses of records sharing a FactorPoint; tag merged records with ``count``."""
    groups: Dict[FactorPoint, List[ExperimentRecord]] = {}
    for record in records:
        groups.setdefault(record.point, []).append(record)
    merged = []
    for point, group in groups.items():
        if len(group) == 1:
            merged.append(group[0])
            continue
        tags = dict(group[0].tags)
        tags["count"] = str(len(group))
        loss = float(np.mean([record.loss for record in group]))
        merged.append(ExperimentRecord(id=group[0].id, point=point, loss=loss, tags=tags))
        logger.debug(f"Averaged {len(group)} records at {point}")
    return merged


@dataclass(frozen=True)
class Provenance:
    """Where a campaign came from."""

    kind: str
    source: Optional[str] = None
    constants: Optional[Dict[str, float]] = None
    sigma: Optional[float] = None
    seed: Optional[int] = None

    def to_dict(self) -> Dict:
        """Provenance fields as a dict."""
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class RowRejection:
    row: int
    message: str
    precondition: Optional[str] = None


@dataclass
class Campaign:
    """An ordered set of experiment records with provenance."""

    records: List[ExperimentRecord]
    provenance: Provenance = field(default_factory=lambda: Provenance(kind="ingested"))
    rejected: List[RowRejection] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        """Validate record ids."""
        seen = set()
        for record in self.records:
            if record.id in seen:
                raise DomainError(f"Duplicate record id '{record.id}'", "id unique within a campaign")
            seen.add(record.id)

    def __len__(self) -> int:
        """Number of records."""
        return len(self.records)

    @property
    def ranges(self) -> Dict[str, Tuple[float, float]]:
        """Per-factor [min, max] over the records."""
        if not self.records:
            return {}
        arrays = self.arrays()
        return {name: (float(arrays[name].min()), float(arrays[name].max())) for name in FACTORS}

    def arrays(self) -> Dict[str, np.ndarray]:
        """Factor and loss columns as float arrays."""
        columns = {name: np.array([getattr(r.point, name) for r in self.records], dtype=float) for name in FACTORS}
        columns["loss"] = np.array([r.loss for r in self.records], dtype=float)
        return columns

    def select(self, **tags: str) -> "Campaign":
        """Records whose tags match every given key/value."""
        chosen = [r for r in self.records if all(r.tags.get(k) == v for k, v in tags.items())]
        return Campaign(records=chosen, provenance=self.provenance)

    def to_frame(self) -> pd.DataFrame:
        """One row per record, in CSV column order."""
        rows = []
        for record in self.records:
            row = record.point.to_dict()
            row.update(loss=record.loss, id=record.id, tags=format_tags(record.tags))
            rows.append(row)
        return pd.DataFrame(rows, columns=list(CSV_COLUMNS))

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """CSV with header ``N,D,Na,G,S,loss,id,tags``; floats keep full precision."""
        text = self.to_frame().to_csv(index=False)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> Dict:
        """Provenance, per-factor ranges and records."""
        return {
            "provenance": self.provenance.to_dict(),
            "ranges": {name: list(bounds) for name, bounds in self.ranges.items()},
            "records": [record.to_dict() for record in self.records],
        }

    def to_json(self, path: Union[str, Path, None] = None) -> str:
        """Write the campaign as indented JSON; returns the text."""
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


def _read_frame(source, fmt: str) -> pd.DataFrame:
    if fmt == "csv":
        return pd.read_csv(source, float_precision="round_trip", dtype={"id": str, "tags": str})
    if isinstance(source, (str, Path)):
        with open(source, "r") as f:
            data = json.load(f)
    else:
        data = json.load(source)
    if isinstance(data, dict):
        if "records" not in data:
            raise SchemaError("records", "JSON document")
        data = data["records"]
    return pd.DataFrame(data)


def ingest(source: Union[str, Path, TextIO], fmt: Optional[str] = None) -> Campaign:
    """Load and validate records from a CSV or JSON file (or open stream).

    Invalid rows are collected on ``Campaign.rejected``; ingest fails only when
    every row is invalid. Duplicate points are averaged.
    """
    if fmt is None:
        suffix = Path(source).suffix.lower() if isinstance(source, (str, Path)) else ""
        fmt = "json" if suffix == ".json" else "csv"
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise DomainError(f"Unknown format '{fmt}'", "format in csv, json")
    name = str(source) if isinstance(source, (str, Path)) else "stream"
    frame = _read_frame(source, fmt)
    for column in REQUIRED_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(column, name)

    records: List[ExperimentRecord] = []
    rejected: List[RowRejection] = []
    seen_ids = set()
    for index, row in enumerate(frame.to_dict("records")):
        try:
            record_id = row.get("id")
            if record_id is None or (isinstance(record_id, float) and math.isnan(record_id)):
                record_id = f"r{index:04d}"
            record_id = str(record_id)
            if record_id in seen_ids:
                raise DomainError(f"Duplicate record id '{record_id}'", "id unique within a campaign")
            point = FactorPoint(**{factor: float(row[factor]) for factor in FACTORS})
            record = ExperimentRecord(
                id=record_id, point=point, loss=float(row["loss"]), tags=parse_tags(row.get("tags"))
            )
        except (DomainError, TypeError, ValueError) as e:
            precondition = getattr(e, "precondition", None)
            rejected.append(RowRejection(row=index, message=str(e), precondition=precondition))
            logger.warning(f"Rejected row {index} of {name}: {e}")
            continue
        seen_ids.add(record_id)
        records.append(record)

    if rejected and not records:
        raise DomainError(f"All {len(rejected)} rows of {name} were rejected", "at least one valid row")

    campaign = Campaign(records=deduplicate(records), provenance=Provenance(kind="ingested", source=name), rejected=rejected)
    arrays = campaign.arrays()
    if campaign.records and (arrays["N"].min() < 1e6 or arrays["D"].min() < 1e8):
        message = "N < 1e6 or D < 1e8 found; sizes are expected in raw parameter and token counts"
        campaign.warnings.append(message)
        logger.warning(message)
    logger.info(f"Ingested {len(campaign)} record(s) from {name}, {len(rejected)} rejected")
    return campaign


def ingest_text(text: str, fmt: str = "csv") -> Campaign:
    """Ingest from an in-memory document."""
    return ingest(io.StringIO(text), fmt=fmt)


# ---------------------------------------------------------------------------
# Synthetic campaigns
# ---------------------------------------------------------------------------

GSWEEP_LEVELS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 18, 20)
GSWEEP_D = (10e9, 20e9, 50e9)
GSWEEP_PRESETS = ("247M", "496M")


@dataclass(frozen=True)
class GridSpec:
    """Factor ranges for synthetic campaigns.

    The fit tier spans ``N``, ``D``, ``Na``, ``G`` and ``S``; the validation tier
    spans ``validation_N`` and ``validation_D``.
    """

    N: Tuple[float, float] = STUDY_RANGES["N"]
    D: Tuple[float, float] = STUDY_RANGES["D"]
    Na: Tuple[float, float] = STUDY_RANGES["Na"]
    G: Tuple[float, float] = STUDY_RANGES["G"]
    S: Tuple[float, float] = STUDY_RANGES["S"]
    validation_N: Tuple[float, float] = VALIDATION_RANGES["N"]
    validation_D: Tuple[float, float] = VALIDATION_RANGES["D"]

    def __post_init__(self):
        """Validate the grid bounds."""
        for name in ("N", "D", "Na", "validation_N", "validation_D"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise DomainError(f"Grid {name} must satisfy 0 < lo <= hi, got {lo}, {hi}", f"{name} range valid")
        if not (1 <= self.G[0] <= self.G[1]):
            raise DomainError(f"Grid G must satisfy 1 <= lo <= hi, got {self.G}", "G range valid")
        if not (0 <= self.S[0] <= self.S[1] < 1):
            raise DomainError(f"Grid S must lie in [0, 1), got {self.S}", "S range valid")
        if self.Na[0] > self.N[1]:
            raise DomainError("Grid Na starts above the largest N", "Na range meets N range")

    def extrapolations(self) -> List[str]:
        """Names of ranges reaching beyond the studied grid."""
        names = []
        for name in FACTORS:
            lo, hi = getattr(self, name)
            s_lo, s_hi = STUDY_RANGES[name]
            if lo < s_lo or hi > s_hi:
                names.append(name)
        for name in ("N", "D"):
            lo, hi = getattr(self, f"validation_{name}")
            if lo < VALIDATION_RANGES[name][0] or hi > VALIDATION_RANGES[name][1]:
                names.append(f"validation_{name}")
        return names

    def to_dict(self) -> Dict:
        """Range name to [lo, hi]."""
        return {k: list(v) for k, v in asdict(self).items()}


DEFAULT_GRID = GridSpec()


def _interior(lo: float, hi: float, count: int) -> np.ndarray:
    """``count`` log-spaced levels strictly inside [lo, hi]."""
    return np.geomspace(lo, hi, count + 2)[1:-1]


def _snap_S(s: float, G: int, S_hi: float) -> float:
    """Nearest realisable shared ratio k/G not above ``S_hi``."""
    k = round_half_away(s * G)
    k = min(k, G - 1, int(math.floor(S_hi * G + 1e-9)))
    return max(k, 0) / G


def _stratified(rng: np.random.Generator, lo: float, hi: float, count: int, log: bool) -> np.ndarray:
    """Evenly spread levels over [lo, hi], endpoints included, in random order."""
    levels = np.geomspace(lo, hi, count) if log else np.linspace(lo, hi, count)
    return rng.permutation(levels)


def _layout(grid: GridSpec, rng: np.random.Generator) -> List[Tuple[str, str, Dict[str, float]]]:
    """(tier, sweep, factors) triples of the 268 + 90 + 88 point layout."""
    points: List[Tuple[str, str, Dict[str, float]]] = []

    # N x D sweeps at two activated sizes
    N_levels = np.geomspace(grid.N[0], grid.N[1], 6)
    D_levels = np.geomspace(grid.D[0], grid.D[1], 5)
    for Na in (grid.Na[0], min(max(grid.Na[0], 100e6), grid.N[0])):
        for N in N_levels:
            for D in D_levels:
                points.append(("fit", "ND", dict(N=N, D=D, Na=Na, G=8, S=0.125)))

    # activated-size sweeps at fixed N
    D_levels = np.geomspace(grid.D[0], grid.D[1], 4)
    for N in _interior(grid.N[0], grid.N[1], 2):
        Na_levels = np.geomspace(grid.Na[0], min(grid.Na[1], 0.9 * N), 8)
        for D in D_levels:
            for Na in Na_levels:
                points.append(("fit", "Na", dict(N=N, D=D, Na=Na, G=20, S=0.2)))

    # shared-ratio sweeps at G = 10
    S_levels = [_snap_S(s, 10, grid.S[1]) for s in np.linspace(grid.S[0], grid.S[1], 8)]
    for N in _interior(grid.N[0], grid.N[1], 2):
        for D in D_levels:
            for S in S_levels:
                points.append(("fit", "S", dict(N=N, D=D, Na=max(0.2 * N, grid.Na[0]), G=10, S=S)))

    # stratified fill over the whole fit range
    points.extend(("fit", "random", factors) for factors in _stratified_points(rng, grid, grid.N, grid.D, 80))

    # small-scale G sweeps without shared experts
    for name in GSWEEP_PRESETS:
        counts = count_params(PRESETS[name])
        for D in GSWEEP_D:
            for G in GSWEEP_LEVELS:
                points.append(("gsweep", "G", dict(N=counts.N, D=D, Na=counts.Na, G=G, S=0.0)))

    points.extend(
        ("validation", "random", factors)
        for factors in _stratified_points(rng, grid, grid.validation_N, grid.validation_D, 88)
    )
    return points


def _stratified_points(rng, grid: GridSpec, N_range, D_range, count: int) -> List[Dict[str, float]]:
    N = _stratified(rng, N_range[0], N_range[1], count, log=True)
    D = _stratified(rng, D_range[0], D_range[1], count, log=True)
    ratio = _stratified(rng, 0.05, 0.5, count, log=False)
    G = _stratified(rng, grid.G[0], grid.G[1], count, log=False)
    S = _stratified(rng, grid.S[0], grid.S[1], count, log=False)
    points = []
    for i in range(count):
        G_i = max(1, round_half_away(G[i]))
        Na = min(max(ratio[i] * N[i], grid.Na[0]), N[i])
        points.append(dict(N=N[i], D=D[i], Na=Na, G=G_i, S=_snap_S(S[i], G_i, grid.S[1])))
    return points


def generate_campaign(
    constants: ScalingConstants,
    grid: GridSpec = DEFAULT_GRID,
    sigma: float = 0.0,
    seed: int = 0,
) -> Campaign:
    """Synthetic records from the joint law plus Gaussian noise of std ``sigma``.

    The layout has 268 fit points (N x D, Na, S sweeps and a stratified fill),
    90 small-scale G-sweep points and 88 validation points; tags ``tier`` and
    ``sweep`` mark each record. Identical arguments give identical campaigns.
    """
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise DomainError(f"Noise sigma must be non-negative, got {sigma}", "sigma >= 0")
    for name in grid.extrapolations():
        logger.warning(f"Campaign grid {name} extends beyond the studied range")
    rng = np.random.default_rng(seed)
    layout = _layout(grid, rng)
    noise = rng.normal(0.0, sigma, size=len(layout)) if sigma > 0 else np.zeros(len(layout))
    records = []
    counters: Dict[str, int] = {}
    for (tier, sweep, factors), eps in zip(layout, noise):
        point = FactorPoint(**{k: float(v) for k, v in factors.items()})
        key = f"{tier}-{sweep}"
        index = counters.get(key, 0)
        counters[key] = index + 1
        loss = eval_joint_loss(constants, point) + float(eps)
        records.append(ExperimentRecord(id=f"{key}-{index:03d}", point=point, loss=loss, tags={"tier": tier, "sweep": sweep}))
    provenance = Provenance(kind="synthetic", constants=constants.to_dict(), sigma=float(sigma), seed=int(seed))
    logger.info(f"Generated synthetic campaign of {len(records)} records (sigma={sigma}, seed={seed})")
    return Campaign(records=records, provenance=provenance)
