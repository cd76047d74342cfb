"""End-to-end reproduction of the growth-design case study.

The published isothermal experiments (four temperatures, Baranyi estimates per
temperature and a square-root secondary model) are redesigned here:

* :func:`run_isothermal_d` and :func:`run_isothermal_c` give the per-temperature
  D- and c-optimal designs together with the efficiencies of the published
  sampling plans;
* :func:`run_extended_d` designs over temperature and time jointly;
* :func:`run_joint_c` targets the secondary-model parameters ``b`` and ``T_min``;
* :func:`run_sensitivity` and :func:`run_time_tradeoff` analyse the
  two-variable design.

:func:`run_all` gathers everything in a :class:`StudyReport`, including a
deviation list against :data:`REFERENCE_VALUES`.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import (
    SensitivityCurve,
    TimeTradeoffCurve,
    final_time_scan,
    plateau_time,
    sensitivity_scan,
)
from .design import (
    ApproximateDesign,
    Criterion,
    DesignSpace,
    GetReport,
    design_state,
    efficiency,
    sensitivity,
)
from .models import BaranyiModel, ExtendedModel, LogConvention
from .solver import NonConvergenceWarning, SolverOptions, _single_linkage, solve

log = logging.getLogger(__name__)

__all__ = [
    "TEMPERATURES",
    "REFERENCE_DESIGNS",
    "PRIMARY_ESTIMATES",
    "SECONDARY_ESTIMATES",
    "REFERENCE_VALUES",
    "PlateauBound",
    "CaseStudyConfig",
    "SolvedDesign",
    "Deviation",
    "StudyReport",
    "run_isothermal_d",
    "run_isothermal_c",
    "run_extended_d",
    "run_joint_c",
    "run_sensitivity",
    "run_time_tradeoff",
    "convention_matrix",
    "designs_match",
    "run_all",
]

TEMPERATURES = (4.0, 12.0, 20.0, 28.0)

#: Sampling times (h) of the published isothermal experiments.
REFERENCE_DESIGNS: Dict[float, Tuple[float, ...]] = {
    4.0: (0, 24, 60, 96, 144, 192, 240),
    12.0: (0, 24, 48, 72, 100, 144, 192),
    20.0: (0, 12, 24, 36, 48, 72, 96, 120),
    28.0: (0, 12, 24, 36, 48, 60, 72, 84),
}

#: Baranyi estimates per temperature: (y0, y_max, mu_max, lam), log CFU/g and hours.
PRIMARY_ESTIMATES: Dict[float, Tuple[float, float, float, float]] = {
    4.0: (7.08, 8.65, 0.043, 44.1),
    12.0: (7.08, 10.14, 0.091, 33.2),
    20.0: (7.06, 10.71, 0.134, 23.5),
    28.0: (7.05, 10.64, 0.202, 20.0),
}

#: Square-root model estimates (b, T_min).
SECONDARY_ESTIMATES = (0.0099, -17.5)

#: Published outcomes used to grade the reproduction.
REFERENCE_VALUES = {
    "table3": {
        4.0: {"support": (0, 45, 92, 485), "efficiency": 0.83},
        12.0: {"support": (0, 37.2, 65.2, 280), "efficiency": 0.82},
        20.0: {"support": (0, 27.5, 48, 185), "efficiency": 0.86},
        28.0: {"support": (0, 22.1, 35.8, 122), "efficiency": 0.80},
    },
    "table4": {
        4.0: {"support": (0, 41, 97.4, 300), "weights": (0.14, 0.295, 0.36, 0.205),
              "reference_efficiency": 0.47, "d_design_efficiency": 0.82},
        12.0: {"support": (0, 34.6, 67.34, 200), "weights": (0.145, 0.33, 0.345, 0.165),
               "reference_efficiency": 0.44, "d_design_efficiency": 0.82},
        20.0: {"support": (0, 25.8, 49.5, 125), "weights": (0.137, 0.34, 0.36, 0.153),
               "reference_efficiency": 0.44, "d_design_efficiency": 0.80},
        28.0: {"support": (0, 21.15, 36.97, 100), "weights": (0.145, 0.337, 0.342, 0.151),
               "reference_efficiency": 0.42, "d_design_efficiency": 0.81},
    },
    "extended": {
        "interior": ((4, 87.88), (28, 31.17), (28, 43.75)),
        "tf4": 485.74,
        "tf28": 122.24,
        "fit": (744.7, -186.8),
        "pooled_reference": 0.58,
        "pooled_table3": 0.65,
    },
    "table5": {
        0.99: {"fit": (297.8, -69.8), "rmse": 1.55, "saving": (0.485, 0.586)},
        0.97: {"fit": (255.7, -58.72), "rmse": 1.62, "saving": (0.529, 0.64)},
        0.95: {"fit": (236.9, -53.88), "rmse": 2.01, "saving": (0.545, 0.667)},
    },
    "joint": {
        "support": ((4, 0), (4, 111.5), (26.3, 60.7), (28, 44.4), (28, 160)),
        "weights": (0.188, 0.287, 0.32, 0.196, 0.0038),
        "d_design_efficiency": 0.015,
        "b_only_efficiency": 0.41,
    },
}


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class PlateauBound:
    """Time by which a curve is ``depth`` natural-log units into its stationary phase.

    ``t_ub(T) = lam + (scale * (y_max - y0) + depth) / mu(T)`` where ``mu(T)`` is
    ``mu_max`` for an isothermal model or ``(b (T - T_min))^2`` otherwise, and
    ``scale`` converts the amplitude to natural-log units.
    """

    lam: float
    amplitude: float
    depth: float = 30.0
    scale: float = 1.0
    mu_max: Optional[float] = None
    b: Optional[float] = None
    T_min: Optional[float] = None

    def rate(self, T: float) -> float:
        if self.mu_max is not None:
            return self.mu_max
        return (self.b * (T - self.T_min)) ** 2

    def __call__(self, T: float = None) -> float:
        return self.lam + (self.scale * self.amplitude + self.depth) / self.rate(T)


def _default_workers() -> int:
    raw = os.environ.get("OED_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"OED_THREADS must be a positive integer, got {raw!r}") from None


@dataclass(frozen=True)
class CaseStudyConfig:
    """Inputs of the case study; defaults reproduce the published setup.

    ``plateau_tol`` (log-determinant gap) and ``c_plateau_tol`` (relative gap)
    decide how early a final observation in the stationary phase may be placed
    before the criterion notices; ``joint_lambda`` is the lag used for the
    ``(b, T_min)`` designs.
    """

    primary: Dict[float, Tuple[float, float, float, float]] = field(
        default_factory=lambda: dict(PRIMARY_ESTIMATES))
    b: float = SECONDARY_ESTIMATES[0]
    T_min: float = SECONDARY_ESTIMATES[1]
    reference_designs: Dict[float, Tuple[float, ...]] = field(
        default_factory=lambda: dict(REFERENCE_DESIGNS))
    log_convention: str = "natural"
    eff_convention: str = "homogeneous"
    time_resolution: int = 2000
    temp_resolution: int = 97
    temp_bounds: Tuple[float, float] = (4.0, 28.0)
    plateau_depth: float = 30.0
    plateau_tol: float = 2e-7
    c_plateau_tol: float = 3e-4
    joint_lambda: float = 44.1
    scan_temperatures: Tuple[float, ...] = tuple(float(T) for T in range(4, 29))
    targets: Tuple[float, ...] = (1.0, 0.99, 0.97, 0.95)
    sensitivity_points: int = 21
    solver: SolverOptions = field(default_factory=SolverOptions)
    workers: int = field(default_factory=_default_workers)

    def __post_init__(self):
        primary = {float(T): tuple(float(v) for v in row) for T, row in self.primary.items()}
        refs = {float(T): tuple(float(t) for t in ts) for T, ts in self.reference_designs.items()}
        object.__setattr__(self, "primary", primary)
        object.__setattr__(self, "reference_designs", refs)
        missing = [T for T in TEMPERATURES if T not in primary]
        if missing:
            raise ValueError(f"parameter rows missing for temperatures {missing}")
        missing = [T for T in TEMPERATURES if T not in refs]
        if missing:
            raise ValueError(f"reference designs missing for temperatures {missing}")
        for T, row in primary.items():
            if len(row) != 4:
                raise ValueError(f"row for {T} needs (y0, y_max, mu_max, lam)")
            BaranyiModel().valid(np.array(row)) or _bad_row(T, row)
        for T, ts in refs.items():
            if len(ts) < 1 or any(t < 0 for t in ts):
                raise ValueError(f"reference design at {T} needs non-negative times")
        LogConvention(self.log_convention)
        if self.eff_convention not in ("raw", "homogeneous"):
            raise ValueError(f"unknown efficiency convention {self.eff_convention!r}")
        if self.b <= 0:
            raise ValueError("b must be positive")
        if self.T_min >= self.temp_bounds[0]:
            raise ValueError("T_min must lie below the design temperatures")
        if not all(0 < e <= 1 for e in self.targets):
            raise ValueError("efficiency targets must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def scale(self) -> float:
        return LogConvention(self.log_convention).scale

    @property
    def extended_theta(self) -> np.ndarray:
        """Nominal (y0, y_max, lam, b, T_min): primary values averaged over temperatures."""
        rows = np.array([self.primary[T] for T in TEMPERATURES])
        y0, y_max, _, lam = rows.mean(axis=0)
        return np.array([y0, y_max, lam, self.b, self.T_min])

    def parameter_ranges(self) -> Dict[str, Tuple[float, float]]:
        rows = np.array([self.primary[T] for T in TEMPERATURES])
        return {"y0": (rows[:, 0].min(), rows[:, 0].max()),
                "y_max": (rows[:, 1].min(), rows[:, 1].max()),
                "lam": (rows[:, 3].min(), rows[:, 3].max())}

    def isothermal_space(self, T: float) -> DesignSpace:
        y0, y_max, mu, lam = self.primary[T]
        hi = PlateauBound(lam, y_max - y0, self.plateau_depth, self.scale, mu_max=mu)()
        return DesignSpace([(0.0, hi)], [self.time_resolution])

    def extended_space(self, theta=None) -> DesignSpace:
        y0, y_max, lam, b, T_min = self.extended_theta if theta is None else theta
        bound = PlateauBound(lam, y_max - y0, self.plateau_depth, self.scale, b=b, T_min=T_min)
        return DesignSpace([self.temp_bounds, (0.0, bound(self.temp_bounds[0]))],
                           [self.temp_resolution, self.time_resolution], time_upper=bound)


def _bad_row(T, row):
    raise ValueError(f"parameter row for {T} is outside the model domain: {row}")


# --------------------------------------------------------------------------- results


@dataclass
class SolvedDesign:
    """A solver result with its certificate.

    ``design`` is what the solver returned; ``display`` is the same design with
    its stationary-phase observation moved to the earliest equivalent time
    (``final_time``), which is the form reported for comparison.
    """

    name: str
    design: ApproximateDesign
    report: GetReport
    converged: bool
    atwood_bound: Optional[float]
    value: float
    display: Optional[ApproximateDesign] = None
    final_time: Optional[float] = None

    @property
    def certified(self) -> bool:
        return bool(self.report.passed) or self.atwood_bound is not None

    def to_dict(self) -> dict:
        shown = self.display if self.display is not None else self.design
        return {
            "name": self.name,
            "support": shown.points.tolist(),
            "weights": shown.weights.tolist(),
            "solver_support": self.design.points.tolist(),
            "final_time": self.final_time,
            "criterion_value": self.value,
            "converged": self.converged,
            "atwood_bound": self.atwood_bound,
            "get": self.report.to_dict(),
        }


@dataclass(frozen=True)
class Deviation:
    """One computed quantity against its published value."""

    quantity: str
    computed: float
    reference: float
    tolerance: float
    relative: bool = True

    @property
    def error(self) -> float:
        if self.relative:
            return abs(self.computed - self.reference) / abs(self.reference)
        return abs(self.computed - self.reference)

    @property
    def within(self) -> bool:
        return bool(self.error <= self.tolerance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(error=self.error, within=self.within)
        return d


@dataclass
class StudyReport:
    """Everything computed by :func:`run_all`, JSON-ready through :meth:`to_dict`."""

    config: CaseStudyConfig
    sections: Dict[str, dict] = field(default_factory=dict)
    deviations: List[Deviation] = field(default_factory=list)

    @property
    def all_certified(self) -> bool:
        return all(s.certified for s in self.solved())

    def solved(self) -> List[SolvedDesign]:
        out = []

        def walk(obj):
            if isinstance(obj, SolvedDesign):
                out.append(obj)
            elif isinstance(obj, dict):
                for v in obj.values():
                    walk(v)
            elif isinstance(obj, (list, tuple)):
                for v in obj:
                    walk(v)
        walk(self.sections)
        return out

    def to_dict(self) -> dict:
        return {
            "config": _jsonable(_config_dict(self.config)),
            "sections": _jsonable(self.sections),
            "deviations": [d.to_dict() for d in self.deviations],
            "all_certified": self.all_certified,
        }


def _config_dict(cfg: CaseStudyConfig) -> dict:
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__ if k != "solver"}
    d["solver"] = {k: v for k, v in cfg.solver.__dict__.items() if k != "initial_design"}
    return d


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if isinstance(obj, ApproximateDesign):
        return {"support": obj.points.tolist(), "weights": obj.weights.tolist()}
    if isinstance(obj, (SensitivityCurve, TimeTradeoffCurve)):
        return _jsonable({k: getattr(obj, k) for k in obj.__dataclass_fields__})
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable({k: getattr(obj, k) for k in obj.__dataclass_fields__})
    return obj


# --------------------------------------------------------------------------- helpers


def _map(fn, items, workers):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _solve(name, model, space, crit, theta, opts, grid=None) -> SolvedDesign:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        design, trace = solve(model, space, crit, theta, opts, grid=grid)
    if not trace.converged:
        log.warning("%s: %s", name, "; ".join(trace.warnings))
    value = design_state(design, model, theta).value(crit)
    return SolvedDesign(name, design, trace.report, trace.converged, trace.atwood_bound, value)


def _with_final_time(design: ApproximateDesign, t: float) -> ApproximateDesign:
    pts = design.points.copy()
    j = int(np.argmax(pts[:, -1]))
    pts[j, -1] = t
    return ApproximateDesign(pts, design.weights)


def _uniform_times(times) -> ApproximateDesign:
    return ApproximateDesign.uniform(np.asarray(times, dtype=float)[:, None])


def _baranyi(cfg: CaseStudyConfig) -> BaranyiModel:
    return BaranyiModel(convention=LogConvention(cfg.log_convention))


def _extended(cfg: CaseStudyConfig) -> ExtendedModel:
    return ExtendedModel(convention=LogConvention(cfg.log_convention))


# --------------------------------------------------------------------------- isothermal


def run_isothermal_d(cfg: CaseStudyConfig) -> Dict[float, dict]:
    """D-optimal design per temperature and the efficiency of the published plan.

    Returns ``{T: {"solved": SolvedDesign, "reference_efficiency": float}}``;
    a failing temperature carries an ``"error"`` entry instead.
    """
    model = _baranyi(cfg)
    crit = Criterion.D()

    def one(T):
        theta = np.array(cfg.primary[T])
        space = cfg.isothermal_space(T)
        try:
            sd = _solve(f"D-optimal {T:g}", model, space, crit, theta, cfg.solver)
        except Exception as exc:  # reported per temperature; the others still run
            log.error("isothermal D at %g failed: %s", T, exc)
            return {"error": str(exc)}
        sd.final_time = plateau_time(sd.design, model, theta, crit, space.time_axis(), cfg.plateau_tol)
        sd.display = _with_final_time(sd.design, sd.final_time)
        ref = _uniform_times(cfg.reference_designs[T])
        eff = efficiency(ref, sd.design, model, theta, crit, cfg.eff_convention)
        return {"solved": sd, "reference_efficiency": eff}

    return dict(zip(TEMPERATURES, _map(one, TEMPERATURES, cfg.workers)))


def run_isothermal_c(cfg: CaseStudyConfig, d_results: Dict[float, dict] = None) -> Dict[float, dict]:
    """c-optimal designs for ``mu_max`` per temperature.

    Also returns the c-efficiency of the published plan and of the D-optimal
    design (solved here unless ``d_results`` is given) relative to the
    c-optimum, and the share of the two central support points.
    """
    model = _baranyi(cfg)
    crit = Criterion.c(model.unit_vector("mu_max"))
    if d_results is None:
        d_results = run_isothermal_d(cfg)

    def one(T):
        theta = np.array(cfg.primary[T])
        space = cfg.isothermal_space(T)
        try:
            sd = _solve(f"c-optimal {T:g}", model, space, crit, theta, cfg.solver)
        except Exception as exc:
            log.error("isothermal c at %g failed: %s", T, exc)
            return {"error": str(exc)}
        sd.final_time = plateau_time(sd.design, model, theta, crit, space.time_axis(), cfg.c_plateau_tol)
        sd.display = _with_final_time(sd.design, sd.final_time)
        ref = _uniform_times(cfg.reference_designs[T])
        out = {"solved": sd,
               "reference_efficiency": efficiency(ref, sd.design, model, theta, crit),
               "central_weight": float(np.sort(sd.design.weights[1:-1]).sum())
               if sd.design.size == 4 else math.nan}
        d = d_results.get(T, {}).get("solved")
        if d is not None:
            out["d_design_efficiency"] = efficiency(d.design, sd.design, model, theta, crit)
        return out

    return dict(zip(TEMPERATURES, _map(one, TEMPERATURES, cfg.workers)))


# --------------------------------------------------------------------------- two-variable designs


def run_extended_d(cfg: CaseStudyConfig, d_results: Dict[float, dict] = None) -> dict:
    """D-optimal design over (T, t) with its final-time curve and pooled comparisons.

    The returned dict holds the solved design, ``t0_flatness`` (largest
    ``|phi|`` along ``t = 0`` over the temperature grid), the target-1 final
    time curve with its logarithmic fit, and the efficiencies of the pooled
    published plans (weight ``1/30``) and of the pooled isothermal D-optimal
    designs (``d_results``, or the published supports when absent).
    """
    model = _extended(cfg)
    theta = cfg.extended_theta
    space = cfg.extended_space()
    crit = Criterion.D()
    sd = _solve("two-variable D-optimal", model, space, crit, theta, cfg.solver)
    temps = space.axis(0)
    phi0 = sensitivity(np.column_stack([temps, np.zeros_like(temps)]), sd.design, model, theta, crit,
                       normalise=True)
    curve = final_time_scan([1.0], cfg.scan_temperatures, model, space, theta, sd.design,
                            cfg.plateau_tol, cfg.eff_convention)[0]
    sd.final_time = plateau_time(sd.design, model, theta, crit, space.time_axis(
        sd.design.points[int(np.argmax(sd.design.points[:, 1])), 0]), cfg.plateau_tol)
    sd.display = _with_final_time(sd.design, sd.final_time)

    pooled = np.array([[T, t] for T in TEMPERATURES for t in cfg.reference_designs[T]])
    if d_results is not None and all("solved" in d_results[T] for T in TEMPERATURES):
        iso = np.array([[T, t] for T in TEMPERATURES for t in d_results[T]["solved"].display.points[:, 0]])
    else:
        iso = np.array([[T, t] for T in TEMPERATURES for t in REFERENCE_VALUES["table3"][T]["support"]])
    eff_ref = efficiency(ApproximateDesign.uniform(pooled), sd.design, model, theta, crit, cfg.eff_convention)
    eff_iso = efficiency(ApproximateDesign.uniform(iso), sd.design, model, theta, crit, cfg.eff_convention)
    fit = curve.fit
    return {
        "solved": sd,
        "theta": theta,
        "t0_flatness": float(np.max(np.abs(phi0))),
        "final_time_curve": curve,
        "tf_fitted": {4.0: float(fit(4.0)), 28.0: float(fit(28.0))} if fit else None,
        "tf_grid": {float(T): float(t) for T, t in zip(curve.temperatures, curve.final_times)},
        "pooled_reference_efficiency": eff_ref,
        "pooled_isothermal_efficiency": eff_iso,
    }


def designs_match(a: ApproximateDesign, b: ApproximateDesign, ranges, tol_x: float, tol_w: float,
                  min_weight: float = 1e-4) -> bool:
    """Whether two designs agree once nearby points are pooled.

    Points with weight below ``min_weight`` are ignored.  The remaining points
    of both designs are grouped by single linkage at ``tol_x`` (relative to
    ``ranges``); every group must contain points of both designs and the
    summed weights must agree within ``tol_w``.
    """
    keep_a, keep_b = a.weights >= min_weight, b.weights >= min_weight
    pa, wa = a.points[keep_a], a.weights[keep_a] / a.weights[keep_a].sum()
    pb, wb = b.points[keep_b], b.weights[keep_b] / b.weights[keep_b].sum()
    pts = np.vstack([pa, pb]) / np.asarray(ranges, dtype=float)
    labels = _single_linkage(pts, tol_x)
    owner = np.r_[np.zeros(len(pa)), np.ones(len(pb))]
    w = np.r_[wa, -wb]
    for g in np.unique(labels):
        sel = labels == g
        if len(set(owner[sel])) < 2 or abs(w[sel].sum()) > tol_w:
            return False
    return True


def run_joint_c(cfg: CaseStudyConfig, extended: dict = None) -> dict:
    """Designs for the secondary-model parameters and their cross-efficiencies.

    The joint criterion is ``Tr[K^T M^-1 K]`` with ``K = [e_b, e_T_min]``, solved
    unscaled and with columns divided by the nominal values.  The mode under
    which the published joint design is most efficient is flagged as
    ``matching_mode``.  Lag ``cfg.joint_lambda`` replaces the averaged lag.
    """
    model = _extended(cfg)
    theta = cfg.extended_theta.copy()
    theta[2] = cfg.joint_lambda
    space = cfg.extended_space(theta)
    grid = space.grid()
    if extended is None:
        extended = run_extended_d(cfg)
    d_T = extended["solved"].design
    K = model.unit_vector("b", "T_min")
    modes = {"unscaled": K, "scaled": K / np.abs(theta[[3, 4]])}
    eb = Criterion.c(model.unit_vector("b"))
    eT = Criterion.c(model.unit_vector("T_min"))
    singles = dict(zip(("b", "T_min"), _map(
        lambda c: _solve(f"c-optimal {c[0]}", model, space, c[1], theta, cfg.solver, grid),
        [("b", eb), ("T_min", eT)], cfg.workers)))
    ref = REFERENCE_VALUES["joint"]
    published = ApproximateDesign.normalised(np.array(ref["support"], dtype=float), np.array(ref["weights"]))

    out = {"theta": theta, "b_only": singles["b"], "T_min_only": singles["T_min"], "modes": {}}
    for name, KK in modes.items():
        crit = Criterion.L(KK)
        sd = _solve(f"joint ({name})", model, space, crit, theta, cfg.solver, grid)
        out["modes"][name] = {
            "solved": sd,
            "d_design_efficiency": efficiency(d_T, sd.design, model, theta, crit),
            "b_only_efficiency": efficiency(singles["b"].design, sd.design, model, theta, crit),
            "joint_b_efficiency": efficiency(sd.design, singles["b"].design, model, theta, eb),
            "published_efficiency": efficiency(published, sd.design, model, theta, crit),
            "T_min_only_matches": designs_match(singles["T_min"].design, sd.design, space.ranges,
                                                _match_tol(space), 0.01),
        }
    out["matching_mode"] = max(out["modes"], key=lambda m: out["modes"][m]["published_efficiency"])
    return out


def _match_tol(space: DesignSpace) -> float:
    # two grid steps on the coarsest axis: near-duplicate points on neighbouring grid lines pool together
    steps = [(hi - lo) / (n - 1) / r for (lo, hi), n, r in zip(space.bounds, space.resolution, space.ranges)]
    return 2.0 * max(steps) * (1 + 1e-9)


# --------------------------------------------------------------------------- analyses


def run_sensitivity(cfg: CaseStudyConfig, extended: dict = None,
                    parameters: Sequence[str] = ("y0", "y_max", "lam")) -> Dict[str, SensitivityCurve]:
    """Efficiency of the two-variable D-optimum across the spread of the primary estimates."""
    model = _extended(cfg)
    theta = cfg.extended_theta
    space = cfg.extended_space()
    if extended is None:
        extended = run_extended_d(cfg)
    ranges = cfg.parameter_ranges()
    curves = {}
    for p in parameters:
        lo, hi = ranges[p]
        values = np.union1d(np.linspace(lo, hi, cfg.sensitivity_points), [theta[model.index(p)]])
        curves[p] = sensitivity_scan(p, values, model, space, Criterion.D(), theta,
                                     extended["solved"].design, cfg.solver, cfg.eff_convention,
                                     workers=cfg.workers)
    return curves


def run_time_tradeoff(cfg: CaseStudyConfig, extended: dict = None) -> Dict[float, TimeTradeoffCurve]:
    """Final-time curves for every efficiency target of ``cfg.targets``."""
    model = _extended(cfg)
    theta = cfg.extended_theta
    space = cfg.extended_space()
    if extended is None:
        extended = run_extended_d(cfg)
    curves = final_time_scan(cfg.targets, cfg.scan_temperatures, model, space, theta,
                             extended["solved"].design, cfg.plateau_tol, cfg.eff_convention,
                             workers=cfg.workers)
    return {c.target: c for c in curves}


def convention_matrix(cfg: CaseStudyConfig) -> dict:
    """Table 3 agreement under every (log convention, efficiency convention) pair.

    For each pair the score is the largest relative error over interior
    support points, final points and reference efficiencies; ``best`` names the
    pair with the smallest score.
    """
    rows = {}
    for lc in ("natural", "decimal"):
        iso = run_isothermal_d(replace(cfg, log_convention=lc, eff_convention="homogeneous"))
        for ec in ("homogeneous", "raw"):
            model = BaranyiModel(convention=LogConvention(lc))
            errs = {"interior": [], "final": [], "efficiency": []}
            for T in TEMPERATURES:
                if "solved" not in iso[T]:
                    continue
                sd = iso[T]["solved"]
                ref = REFERENCE_VALUES["table3"][T]
                shown = sd.display.points[:, 0]
                if len(shown) == 4:
                    errs["interior"] += [abs(shown[i] / ref["support"][i] - 1) for i in (1, 2)]
                    errs["final"].append(abs(shown[3] / ref["support"][3] - 1))
                eff = efficiency(_uniform_times(cfg.reference_designs[T]), sd.design, model,
                                 np.array(cfg.primary[T]), Criterion.D(), ec)
                errs["efficiency"].append(abs(eff - ref["efficiency"]))
            worst = {k: (max(v) if v else math.inf) for k, v in errs.items()}
            rows[f"{lc}/{ec}"] = {"worst": worst, "score": max(worst.values()),
                                  "meets_tolerances": worst["interior"] <= 0.10 and worst["final"] <= 0.15
                                  and worst["efficiency"] <= 0.05}
    best = min(rows, key=lambda k: rows[k]["score"])
    return {"rows": rows, "best": best}


# --------------------------------------------------------------------------- report


def _deviations(sections: dict) -> List[Deviation]:
    devs: List[Deviation] = []
    R = REFERENCE_VALUES
    for T, res in sections.get("table3", {}).items():
        if "solved" not in res:
            continue
        pts = res["solved"].display.points[:, 0]
        ref = R["table3"][T]
        for i, tol in ((1, 0.10), (2, 0.10), (3, 0.15)):
            if i < len(pts):
                devs.append(Deviation(f"table3 {T:g} support[{i}]", pts[i], ref["support"][i], tol))
        devs.append(Deviation(f"table3 {T:g} reference efficiency", res["reference_efficiency"],
                              ref["efficiency"], 0.05, relative=False))
    for T, res in sections.get("table4", {}).items():
        if "solved" not in res:
            continue
        d = res["solved"].display
        ref = R["table4"][T]
        for i in range(min(4, d.size)):
            if i:
                devs.append(Deviation(f"table4 {T:g} support[{i}]", d.points[i, 0], ref["support"][i], 0.10))
            devs.append(Deviation(f"table4 {T:g} weight[{i}]", d.weights[i], ref["weights"][i], 0.03, False))
        devs.append(Deviation(f"table4 {T:g} reference efficiency", res["reference_efficiency"],
                              ref["reference_efficiency"], 0.05, False))
        if "d_design_efficiency" in res:
            devs.append(Deviation(f"table4 {T:g} D-design efficiency", res["d_design_efficiency"],
                                  ref["d_design_efficiency"], 0.05, False))
    ext = sections.get("extended")
    if ext:
        ref = R["extended"]
        pts = ext["solved"].design.points
        for Tt in ref["interior"]:
            j = int(np.argmin(np.abs(pts[:, 0] - Tt[0]) * 1e3 + np.abs(pts[:, 1] - Tt[1])))
            devs.append(Deviation(f"extended point ({Tt[0]:g}, {Tt[1]:g})", pts[j, 1], Tt[1], 0.10))
        if ext["tf_fitted"]:
            devs.append(Deviation("extended t_f(4)", ext["tf_fitted"][4.0], ref["tf4"], 0.10))
            devs.append(Deviation("extended t_f(28)", ext["tf_fitted"][28.0], ref["tf28"], 0.10))
        fit = ext["final_time_curve"].fit
        if fit:
            devs.append(Deviation("extended fit a", fit.a, ref["fit"][0], 0.10))
            devs.append(Deviation("extended fit b", fit.b, ref["fit"][1], 0.10))
        devs.append(Deviation("pooled reference efficiency", ext["pooled_reference_efficiency"],
                              ref["pooled_reference"], 0.05, False))
        devs.append(Deviation("pooled isothermal efficiency", ext["pooled_isothermal_efficiency"],
                              ref["pooled_table3"], 0.05, False))
    for e, curve in sections.get("time_tradeoff", {}).items():
        if e not in R["table5"]:
            continue
        ref = R["table5"][e]
        if curve.fit:
            devs.append(Deviation(f"table5 {e:g} fit a", curve.fit.a, ref["fit"][0], 0.10))
            devs.append(Deviation(f"table5 {e:g} fit b", curve.fit.b, ref["fit"][1], 0.10))
        if curve.saving:
            devs.append(Deviation(f"table5 {e:g} min saving", curve.saving[0], ref["saving"][0], 0.03, False))
            devs.append(Deviation(f"table5 {e:g} max saving", curve.saving[1], ref["saving"][1], 0.03, False))
    joint = sections.get("joint")
    if joint:
        m = joint["modes"][joint["matching_mode"]]
        devs.append(Deviation("joint D-design efficiency", m["d_design_efficiency"],
                              R["joint"]["d_design_efficiency"], 0.05 - R["joint"]["d_design_efficiency"], False))
        devs.append(Deviation("joint b-only efficiency", m["b_only_efficiency"],
                              R["joint"]["b_only_efficiency"], 0.10, False))
    return devs


STUDIES = ("table3", "table4", "extended", "joint-c", "sensitivity", "time-tradeoff")


def run_all(cfg: CaseStudyConfig = None, studies: Sequence[str] = STUDIES,
            conventions: bool = False) -> StudyReport:
    """Run the selected studies (dependencies are computed as needed) and grade them."""
    cfg = cfg or CaseStudyConfig()
    unknown = set(studies) - set(STUDIES)
    if unknown:
        raise ValueError(f"unknown studies {sorted(unknown)}; choose from {STUDIES}")
    sections: dict = {}
    need_d = {"table3", "table4", "extended"} & set(studies)
    need_ext = {"extended", "joint-c", "sensitivity", "time-tradeoff"} & set(studies)
    iso_d = run_isothermal_d(cfg) if need_d else None
    if "table3" in studies:
        sections["table3"] = iso_d
    if "table4" in studies:
        sections["table4"] = run_isothermal_c(cfg, iso_d)
    ext = run_extended_d(cfg, iso_d) if need_ext else None
    if "extended" in studies:
        sections["extended"] = ext
    if "joint-c" in studies:
        sections["joint"] = run_joint_c(cfg, ext)
    if "sensitivity" in studies:
        sections["sensitivity"] = run_sensitivity(cfg, ext)
    if "time-tradeoff" in studies:
        sections["time_tradeoff"] = run_time_tradeoff(cfg, ext)
    if conventions:
        sections["conventions"] = convention_matrix(cfg)
    return StudyReport(cfg, sections, _deviations(sections))
