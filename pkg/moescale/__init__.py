"""moescale - Joint MoE scaling law: predict loss, fit constants and find optimal configurations."""

from .architecture import PRESETS, ArchitectureSpec, ParamCount, count_params, derive_uv_scaling, plan_sweep
from .curves import emit_curve
from .datastore import Campaign, ExperimentRecord, GridSpec, generate_campaign, ingest
from .errors import (
    DegenerateRecordsError,
    DomainError,
    ImmutableEntryError,
    InsufficientRecordsError,
    MoeScaleError,
    NoRootError,
    SchemaError,
    UnknownLabelError,
    UnrealizableLevelError,
)
from .fitter import FitOptions, FitResult, fit_baseline, fit_campaign, fit_joint, fit_sub_law, staged_fit_pipeline
from .laws import (
    PUBLISHED_CONSTANTS,
    BaselineId,
    BaselineParams,
    FactorPoint,
    LawForm,
    ScalingConstants,
    SubLawParams,
    eval_baseline,
    eval_joint_gradient,
    eval_joint_loss,
    eval_sub_law,
)
from .optimizer import (
    compute_optimal_frontier,
    efficiency_aware_ratio,
    optima_report,
    optimal_G,
    optimal_S,
    practical_range_G,
    practical_range_S,
    theoretical_ratio,
)
from .registry import ConstantsRegistry
from .reports import render_table

__version__ = "0.1.0"
