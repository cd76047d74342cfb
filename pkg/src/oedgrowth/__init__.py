"""Optimal approximate designs for Baranyi / Ratkowsky growth experiments."""
from .models import (
    BaranyiModel,
    BaranyiParams,
    ExtendedModel,
    ExtendedParams,
    LinearModel,
    LogConvention,
    RatkowskyParams,
    baranyi_response,
    extended_response,
    model_gradient,
    ratkowsky_mu,
)
from .design import (
    ApproximateDesign,
    Criterion,
    DesignSpace,
    GetReport,
    atwood_lower_bound,
    criterion_value,
    efficiency,
    information_matrix,
    sensitivity,
    verify_optimality,
)
from .solver import (
    NonConvergenceWarning,
    SolverError,
    SolverOptions,
    SolveTrace,
    collapse_support,
    refine_weights,
    solve,
)
from .analysis import (
    SensitivityCurve,
    TimeTradeoffCurve,
    final_time_scan,
    fit_log_curve,
    sensitivity_scan,
    time_saving,
)
from .fileio import read_design, write_design

__version__ = "0.1.0"
