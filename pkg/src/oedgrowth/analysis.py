"""Robustness and trade-off analyses built on solved designs.

* :func:`sensitivity_scan` re-solves the optimum while one nominal value moves
  and reports how much efficiency the base design keeps.
* :func:`final_time_scan` shortens the last observation of a design and finds,
  per temperature, the earliest final time that still meets an efficiency target.
* :func:`fit_log_curve` and :func:`alternative_fits` summarise those final-time
  curves; :func:`time_saving` compares two of them.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from .design import (
    ApproximateDesign,
    Criterion,
    DesignSpace,
    InformationState,
    design_state,
    efficiency,
)
from .models import GrowthModel, model_gradient
from .solver import SolverError, SolverOptions, solve

log = logging.getLogger(__name__)

__all__ = [
    "SensitivityCurve",
    "TimeTradeoffCurve",
    "LogFit",
    "sensitivity_scan",
    "relocation_values",
    "plateau_time",
    "final_time_scan",
    "fit_log_curve",
    "alternative_fits",
    "time_saving",
]


@dataclass(frozen=True)
class SensitivityCurve:
    """Efficiency of a fixed design as one nominal value is varied.

    ``efficiencies[i]`` is the efficiency of the base design, evaluated at the
    parameter vector with ``parameter = values[i]``, relative to the optimum
    re-solved at that vector.  Failed re-solves are stored as NaN and listed
    in ``failures``.
    """

    parameter: str
    values: np.ndarray
    efficiencies: np.ndarray
    base_value: float
    failures: Tuple[Tuple[float, str], ...] = ()

    @property
    def minimum(self) -> float:
        return float(np.nanmin(self.efficiencies))

    def at(self, value: float) -> float:
        """Linear interpolation of the curve at ``value``."""
        ok = np.isfinite(self.efficiencies)
        return float(np.interp(value, self.values[ok], self.efficiencies[ok]))


@dataclass(frozen=True)
class LogFit:
    """``t_f(T) = a + b ln(T)`` fitted by least squares."""

    a: float
    b: float
    rmse: float
    residuals: np.ndarray = field(repr=False, default=None)

    def __call__(self, T):
        return self.a + self.b * np.log(np.asarray(T, dtype=float))


@dataclass(frozen=True)
class TimeTradeoffCurve:
    """Minimal final times meeting an efficiency ``target``, one per temperature.

    Unattainable temperatures hold NaN.  ``saving`` is ``(min, max)`` of
    ``1 - t_f / t_f_baseline`` when a baseline curve was supplied.
    """

    target: float
    temperatures: np.ndarray
    final_times: np.ndarray
    fit: Optional[LogFit] = None
    saving: Optional[Tuple[float, float]] = None
    alternatives: Dict[str, dict] = field(default_factory=dict)

    @property
    def unattainable(self) -> np.ndarray:
        return self.temperatures[~np.isfinite(self.final_times)]


# --------------------------------------------------------------------------- sensitivity


def sensitivity_scan(param: str, values: Sequence[float], model: GrowthModel, space: DesignSpace,
                     crit: Criterion, theta0, base_design: ApproximateDesign = None,
                     opts: SolverOptions = None, convention: str = "homogeneous",
                     workers: int = 1) -> SensitivityCurve:
    """Efficiency of the base optimum when nominal value ``param`` takes each of ``values``.

    Each value triggers a fresh solve (warm-started from the base design) with
    the same options as the base run.  A value that makes the parameter vector
    invalid or defeats the solver is recorded as a failure and the scan goes on.

    Parameters
    ----------
    param : str
        Parameter name from ``model.param_names``.
    values : sequence of float
    model, space, crit, theta0
        The base problem.
    base_design : ApproximateDesign, optional
        Optimum at ``theta0``; solved here when omitted.
    workers : int
        Thread count; results do not depend on it.
    """
    theta0 = np.asarray(theta0, dtype=float)
    idx = model.index(param)
    opts = opts or SolverOptions()
    if base_design is None:
        base_design, _ = solve(model, space, crit, theta0, opts)
    grid = space.grid()
    values = np.asarray(values, dtype=float)

    def one(v):
        theta = theta0.copy()
        theta[idx] = v
        if not model.valid(theta):
            return math.nan, f"invalid parameter vector with {param}={v:g}"
        warm = SolverOptions(**{**opts.__dict__, "initial_design": base_design})
        try:
            opt, _ = solve(model, space, crit, theta, warm, grid=grid)
            return efficiency(base_design, opt, model, theta, crit, convention), None
        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
            return math.nan, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, values))
    else:
        results = [one(v) for v in values]
    eff = np.array([r[0] for r in results])
    failures = tuple((float(v), msg) for v, (_, msg) in zip(values, results) if msg is not None)
    for v, msg in failures:
        log.warning("sensitivity scan of %s failed at %g: %s", param, v, msg)
    return SensitivityCurve(param, values, eff, float(theta0[idx]), failures)


# --------------------------------------------------------------------------- final-time trade-off


def _last_index(design: ApproximateDesign) -> int:
    # the final observation is the support point with the largest time (last coordinate)
    t = design.points[:, -1]
    return int(np.flatnonzero(t == t.max())[-1])


def relocation_values(design: ApproximateDesign, model: GrowthModel, theta, crit: Criterion,
                      points: np.ndarray) -> np.ndarray:
    """Criterion value (to be minimised) after moving the final support point to each of ``points``.

    All other points and every weight stay fixed.  Singular or non-estimable
    relocations give ``+inf``.
    """
    theta = np.asarray(theta, dtype=float)
    j = _last_index(design)
    others = np.delete(np.arange(design.size), j)
    Fo = model_gradient(model, design.points[others], theta)
    M0 = (Fo * design.weights[others, None]).T @ Fo
    f = model_gradient(model, np.asarray(points, dtype=float).reshape(-1, model.dim), theta)
    Ms = M0[None] + design.weights[j] * f[:, :, None] * f[:, None, :]
    out = np.full(len(Ms), np.inf)
    if crit.kind == "D":
        sign, ld = np.linalg.slogdet(Ms)
        good = sign > 0
        out[good] = -ld[good]
        return out
    A0 = Fo * np.sqrt(design.weights[others])[:, None]
    sj = np.sqrt(design.weights[j])
    for i in range(len(Ms)):
        out[i] = InformationState(Ms[i], root=np.vstack([A0, sj * f[i]])).value(crit)
    return out


def _earliest_stable(ok: np.ndarray) -> int:
    """Index of the first element from which ``ok`` stays True to the end; -1 if ``ok[-1]`` is False."""
    if not ok[-1]:
        return -1
    bad = np.flatnonzero(~ok)
    return 0 if bad.size == 0 else int(bad[-1] + 1)


def _gap(values: np.ndarray, ref: float, crit: Criterion) -> np.ndarray:
    # D: log-determinant units; c / L: relative to the reference value
    return values - ref if crit.kind == "D" else (values - ref) / abs(ref)


def plateau_time(design: ApproximateDesign, model: GrowthModel, theta, crit: Criterion,
                 times: np.ndarray, tol: float, T: Optional[float] = None) -> float:
    """Earliest time from which relocating the final point costs at most ``tol``.

    The reference is the relocation to the last entry of ``times`` (deep in
    the stationary phase).  The cost is a log-determinant gap for D and a
    relative gap for c / L, and it must stay within ``tol`` for every later
    time.  ``T`` fixes the temperature for two-coordinate models (the final
    point's own temperature by default).
    """
    times = np.asarray(times, dtype=float)
    pts = _points_at(design, times, T)
    vals = relocation_values(design, model, theta, crit, pts)
    i = _earliest_stable(_gap(vals, vals[-1], crit) <= tol)
    return float(times[i]) if i >= 0 else math.nan


def _points_at(design, times, T):
    if design.dim == 1:
        return times[:, None]
    if T is None:
        T = design.points[_last_index(design), 0]
    return np.column_stack([np.full_like(times, T), times])


def final_time_scan(targets: Sequence[float], temperatures: Sequence[float], model: GrowthModel,
                    space: DesignSpace, theta, base_design: ApproximateDesign,
                    plateau_tol: float = 2e-7, convention: str = "homogeneous",
                    time_resolution: int = None, fit: bool = True,
                    workers: int = 1) -> List[TimeTradeoffCurve]:
    """Shortest final observation time per temperature for each efficiency target.

    For target ``e < 1`` the design obtained by relocating the final support
    point of ``base_design`` to ``(T, t)`` must reach D-efficiency ``e`` relative
    to ``base_design`` at ``t`` and at every later grid time.  Target ``1`` asks
    for the optimal length itself: the relocated criterion must be within
    ``plateau_tol`` (log-determinant units) of its stationary-phase value.

    Every time on ``space.time_axis(T)`` is evaluated, so the answer is exact
    on the grid; a time-axis resolution other than the space's can be given.
    When a target-1 curve is among the results, the others get their
    ``saving`` relative to it.
    """
    theta = np.asarray(theta, dtype=float)
    crit = Criterion.D()
    targets = [float(e) for e in targets]
    for e in targets:
        if not 0.0 < e <= 1.0:
            raise ValueError(f"efficiency target {e} outside (0, 1]")
    temps = np.asarray(temperatures, dtype=float)
    ref_val = design_state(base_design, model, theta).value(crit)
    k = model.k
    sp = space if time_resolution is None else space.with_resolution(*space.resolution[:-1], time_resolution)

    def per_temperature(T):
        times = sp.time_axis(T)
        vals = relocation_values(base_design, model, theta, crit, _points_at(base_design, times, T))
        row = []
        for e in targets:
            if e >= 1.0:
                ok = _gap(vals, vals[-1], crit) <= plateau_tol
            else:
                log_eff = -(vals - ref_val)
                if convention == "homogeneous":
                    log_eff = log_eff / k
                ok = log_eff >= math.log(e)
            i = _earliest_stable(ok)
            row.append(float(times[i]) if i >= 0 else math.nan)
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            table = np.array(list(pool.map(per_temperature, temps)))
    else:
        table = np.array([per_temperature(T) for T in temps])

    baseline = None
    if 1.0 in targets:
        baseline = table[:, targets.index(1.0)]
    curves = []
    for j, e in enumerate(targets):
        tf = table[:, j]
        finite = np.isfinite(tf)
        lf, alts = None, {}
        if fit and finite.sum() >= 3:
            lf = fit_log_curve(temps[finite], tf[finite])
            alts = alternative_fits(temps[finite], tf[finite])
        saving = None
        if baseline is not None and e < 1.0:
            saving = time_saving(tf, baseline)
        curves.append(TimeTradeoffCurve(e, temps.copy(), tf, lf, saving, alts))
    return curves


# --------------------------------------------------------------------------- curve fitting


def fit_log_curve(T, tf) -> LogFit:
    """Least-squares fit of ``tf = a + b ln(T)``.

    Raises
    ------
    ValueError
        With fewer than three points, fewer than two distinct temperatures,
        non-positive temperatures or non-finite data.
    """
    T = np.asarray(T, dtype=float).ravel()
    tf = np.asarray(tf, dtype=float).ravel()
    if T.shape != tf.shape:
        raise ValueError("temperature and time arrays differ in length")
    if T.size < 3:
        raise ValueError("need at least three points to fit a + b ln(T)")
    if not (np.all(np.isfinite(T)) and np.all(np.isfinite(tf))):
        raise ValueError("non-finite values in the data")
    if np.any(T <= 0):
        raise ValueError("ln(T) needs positive temperatures")
    X = np.column_stack([np.ones_like(T), np.log(T)])
    if np.unique(T).size < 2 or np.linalg.matrix_rank(X) < 2:
        raise ValueError("degenerate design: all temperatures coincide")
    coef, *_ = np.linalg.lstsq(X, tf, rcond=None)
    resid = tf - X @ coef
    return LogFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2))), resid)


def alternative_fits(T, tf) -> Dict[str, dict]:
    """Competing smooth fits of a final-time curve, with their RMSE.

    Returns a dict keyed by family (``log``, ``quadratic``, ``exponential``)
    holding ``coefficients`` and ``rmse``, plus ``best`` naming the family with
    the lowest RMSE.
    """
    T = np.asarray(T, dtype=float)
    tf = np.asarray(tf, dtype=float)
    out: Dict[str, dict] = {}
    lf = fit_log_curve(T, tf)
    out["log"] = {"coefficients": [lf.a, lf.b], "rmse": lf.rmse}
    if np.unique(T).size >= 3:
        p = np.polyfit(T, tf, 2)
        out["quadratic"] = {"coefficients": p[::-1].tolist(),
                            "rmse": float(np.sqrt(np.mean((np.polyval(p, T) - tf) ** 2)))}
    if np.all(tf > 0):
        slope, icpt = np.polyfit(T, np.log(tf), 1)
        try:
            popt, _ = curve_fit(lambda x, a, b: a * np.exp(b * x), T, tf, p0=(math.exp(icpt), slope),
                                maxfev=10000)
            out["exponential"] = {"coefficients": popt.tolist(),
                                  "rmse": float(np.sqrt(np.mean((popt[0] * np.exp(popt[1] * T) - tf) ** 2)))}
        except RuntimeError:  # no convergence; the family is simply not reported
            pass
    out["best"] = min((name for name in out), key=lambda n: out[n]["rmse"])
    return out


def time_saving(curve, baseline) -> Tuple[float, float]:
    """``(min, max)`` over temperatures of ``1 - t_f / t_f_baseline``.

    Accepts arrays or :class:`TimeTradeoffCurve` objects (which must share
    their temperature grid).  Temperatures where either curve is undefined
    are skipped.
    """
    if isinstance(curve, TimeTradeoffCurve) and isinstance(baseline, TimeTradeoffCurve):
        if not np.array_equal(curve.temperatures, baseline.temperatures):
            raise ValueError("curves are on different temperature grids")
    tf = np.asarray(getattr(curve, "final_times", curve), dtype=float)
    base = np.asarray(getattr(baseline, "final_times", baseline), dtype=float)
    if tf.shape != base.shape:
        raise ValueError("curves have different lengths")
    if np.any(base == 0):
        raise ValueError("baseline final time is zero")
    ok = np.isfinite(tf) & np.isfinite(base)
    if not ok.any():
        raise ValueError("no temperature where both curves are defined")
    s = 1.0 - tf[ok] / base[ok]
    return float(s.min()), float(s.max())
