"""Wynn-Fedorov vertex-direction algorithm on a gridded design space.

Each iteration finds the grid point with the largest gain (for D the
generalised variance ``d(x)``), mixes a point mass there into the current
design, and then runs a few multiplicative reweighting rounds on the
current support.  Iterates scatter mass over neighbouring grid points, so
the final design is collapsed (merge near points, drop negligible weights)
and its weights are refined once more before the equivalence check.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import minimize, minimize_scalar

from .design import (
    ApproximateDesign,
    Criterion,
    DesignSpace,
    GetReport,
    InformationState,
    verify_optimality,
)
from .models import GrowthModel, model_gradient

__all__ = [
    "SolverOptions",
    "IterationRecord",
    "SolveTrace",
    "SolverError",
    "NonConvergenceWarning",
    "solve",
    "collapse_support",
    "refine_weights",
    "initial_design",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NonConvergenceWarning(UserWarning):
    pass


@dataclass
class SolverOptions:
    """Tuning knobs for :func:`solve`.

    ``tol`` defaults to ``1e-4 * k``.  ``step_rule`` defaults to the
    Fedorov-optimal step for D and the harmonic step ``1/(s+1)`` otherwise.
    ``tie_tol`` is the relative slack inside which grid points count as tied
    maximisers of the gain; ties go to the lexicographically smallest point,
    i.e. the earliest time on a flat plateau.  ``equivalence_tol`` merges
    support points whose parameter-scaled gradients agree to that relative
    tolerance (points the model cannot tell apart).  ``reduce_tol`` is the
    criterion loss (log-determinant for D, relative for c / L) accepted when
    dropping a support point from the final design; near-flat plateaus
    otherwise leave redundant points carrying weight.
    """

    max_iterations: int = 2000
    tol: Optional[float] = None
    step_rule: Optional[str] = None
    collapse_tol_x: float = 1e-3
    collapse_tol_w: float = 1e-4
    refine_rounds: int = 20
    final_refine_rounds: int = 20000
    initial_design: Optional[ApproximateDesign] = None
    tie_tol: float = 1e-9
    equivalence_tol: float = 1e-6
    max_phases: int = 4
    reduce_tol: float = 1e-6
    inner_tol_factor: float = 0.5

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.step_rule not in (None, "harmonic", "fedorov-optimal"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def resolved_tol(self, k: int) -> float:
        return 1e-4 * k if self.tol is None else self.tol

    def resolved_step(self, crit: Criterion) -> str:
        if self.step_rule is not None:
            return self.step_rule
        return "fedorov-optimal" if crit.kind == "D" else "harmonic"


@dataclass
class IterationRecord:
    iteration: int
    phase: int
    point: np.ndarray
    step: float
    criterion: float
    violation: float


@dataclass
class SolveTrace:
    records: List[IterationRecord] = field(default_factory=list)
    report: Optional[GetReport] = None
    converged: bool = False
    atwood_bound: Optional[float] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def criterion_values(self, phase: Optional[int] = None) -> np.ndarray:
        return np.array([r.criterion for r in self.records if phase is None or r.phase == phase])

    @property
    def phases(self) -> List[int]:
        return sorted({r.phase for r in self.records})


def _scaled_gradients(F: np.ndarray, theta) -> np.ndarray:
    scale = np.abs(np.asarray(theta, dtype=float))
    return F * np.where(scale > 0, scale, 1.0)


def _single_linkage(z: np.ndarray, tol: float) -> np.ndarray:
    if z.shape[0] < 2:
        return np.zeros(z.shape[0], dtype=int)
    return fcluster(linkage(z, method="single", metric="chebyshev"), t=tol, criterion="distance") - 1


def _centroid(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    c = (w[:, None] * p).sum(axis=0) / w.sum()
    # coordinates shared by every member stay exact (no rounding drift in T = 4, t = 0, ...)
    return np.where(np.ptp(p, axis=0) == 0, p[0], c)


def collapse_support(design: ApproximateDesign, tol_x: float = 1e-3, tol_w: float = 1e-4,
                     ranges=None, gradient_fn: Callable = None, tol_f: float = 1e-6) -> ApproximateDesign:
    """Merge nearby support points and prune negligible weights.

    Points whose coordinates all lie within ``tol_x * range`` of each other
    (single linkage) merge at their weight-weighted centroid.  With
    ``gradient_fn`` (points -> parameter-scaled gradients), points whose
    gradients agree within ``tol_f`` relative are merged into the
    lexicographically smallest of them.  Weights below ``tol_w`` are then
    removed and the rest renormalised.  The result is a fixed point:
    collapsing it again returns it unchanged.
    """
    pts = np.array(design.points, dtype=float)
    w = np.array(design.weights, dtype=float)
    if ranges is None:
        span = pts.max(axis=0) - pts.min(axis=0)
        ranges = np.where(span > 0, span, 1.0)
    ranges = np.asarray(ranges, dtype=float).reshape(-1)
    while True:
        n = w.size
        labels = _single_linkage(pts / ranges, tol_x * (1 + 1e-12))
        if labels.max(initial=-1) + 1 < n:
            groups = [np.flatnonzero(labels == g) for g in range(labels.max() + 1)]
            groups.sort(key=lambda g: tuple(pts[g].min(axis=0)))
            pts = np.array([_centroid(pts[g], w[g]) for g in groups])
            w = np.array([w[g].sum() for g in groups])
        if gradient_fn is not None and w.size > 1:
            G = np.asarray(gradient_fn(pts))
            scale = max(np.abs(G).max(), np.finfo(float).tiny)
            labels = _single_linkage(G / scale, tol_f)
            if labels.max() + 1 < w.size:
                new_pts, new_w = [], []
                for g in range(labels.max() + 1):
                    idx = np.flatnonzero(labels == g)
                    first = idx[np.lexsort(pts[idx].T[::-1])[0]]
                    new_pts.append(pts[first])
                    new_w.append(w[idx].sum())
                pts, w = np.array(new_pts), np.array(new_w)
        if w.size == n:
            break
    keep = w >= tol_w
    if not keep.any():
        raise ValueError("every support weight fell below the pruning threshold")
    if not keep.all():
        pts, w = pts[keep], w[keep] / w[keep].sum()
    order = np.lexsort(pts.T[::-1])
    return ApproximateDesign(pts[order], w[order])


def _refine(F: np.ndarray, w: np.ndarray, crit: Criterion, rounds: int, stop_tol: float = 1e-13,
            gap_tol: float = 1e-6):
    """Multiplicative reweighting of fixed-support weights; returns (w, state).

    Stops once the weights move less than ``stop_tol`` or every support gain is
    within ``gap_tol`` (relative) of the trace term, i.e. the fixed-support
    equivalence condition holds.
    """
    k = F.shape[1]
    state = InformationState.from_gradients(F, w)
    if (crit.kind == "D" and state.singular) or math.isinf(state.value(crit)):
        return w, state
    value = state.value(crit)
    for _ in range(rounds):
        g = state.gain(F, crit)
        tr = state.trace_term(crit)
        if np.max(np.abs(g - tr)) <= gap_tol * tr:
            break
        if crit.kind == "D":
            new = w * g / k
        else:
            new = w * np.sqrt(np.maximum(g, 0.0))
        total = new.sum()
        if not total > 0:
            break
        new = new / total
        new_state = InformationState.from_gradients(F, new)
        new_value = new_state.value(crit)
        if not new_value <= value + 1e-14 * abs(value) or new_state.singular:
            break
        delta = np.max(np.abs(new - w))
        w, state, value = new, new_state, new_value
        if delta <= stop_tol:
            break
    return w, state


def _exchange(F: np.ndarray, w: np.ndarray, state: InformationState, crit: Criterion, g_support: np.ndarray,
              f_new: np.ndarray, g_new: float):
    """Move mass from the weakest support point to the candidate point.

    Returns (w, f_new_weight, state) or None when no improving move exists.
    The D step has a closed form; c / L use a bounded scalar search.
    """
    i = int(np.argmin(g_support))
    if g_new <= g_support[i]:
        return None
    wi = w[i]
    if crit.kind == "D":
        di, dj = g_support[i], g_new
        dij = float(F[i] @ state.solve(f_new))
        curv = di * dj - dij * dij
        alpha = wi if curv <= 0 else min(wi, (dj - di) / (2.0 * curv))
    else:

        base = (F * w[:, None]).T @ F
        fi_out = np.outer(F[i], F[i])
        fj_in = np.outer(f_new, f_new)

        def value(a):
            return InformationState(base + a * (fj_in - fi_out)).value(crit)

        res = minimize_scalar(value, bounds=(0.0, wi), method="bounded", options={"xatol": 1e-12})
        alpha = float(res.x)
        if value(wi) <= res.fun:
            alpha = wi
    if alpha <= 0:
        return None
    new_w = w.copy()
    new_w[i] -= alpha
    if new_w[i] < 1e-12 * wi:
        new_w[i] = 0.0
    return new_w, alpha, i


def _fit_weights(F: np.ndarray, w: np.ndarray, crit: Criterion, rounds: int):
    """Optimal weights on a fixed support: a short multiplicative warm-up, then SLSQP.

    The multiplicative c / L rule crawls when the support is close to singular, so
    the small simplex-constrained problem is finished with the analytic gradient
    ``dPhi/dw_i = -gain_i``.  The polished weights are kept only if they improve
    the criterion without making the matrix singular.
    """
    w, state = _refine(F, w, crit, min(rounds, 200))
    if w.size < 2 or (crit.kind == "D" and state.singular) or math.isinf(state.value(crit)):
        return w, state
    v0 = abs(state.value(crit)) or 1.0

    def fun(x):
        st = InformationState.from_gradients(F, x)
        val = st.value(crit)
        if not np.isfinite(val) or st.singular:
            return 1e300, np.zeros_like(x)
        return val / v0, -st.gain(F, crit) / v0

    res = minimize(fun, w, jac=True, method="SLSQP", bounds=[(0.0, 1.0)] * w.size,
                   constraints=[{"type": "eq", "fun": lambda x: x.sum() - 1.0, "jac": lambda x: np.ones_like(x)}],
                   options={"ftol": 1e-15, "maxiter": 500})
    x = np.clip(res.x, 0.0, None)
    if x.sum() > 0:
        x = x / x.sum()
        trial = InformationState.from_gradients(F, x)
        if not trial.singular and trial.value(crit) < state.value(crit):
            w, state = x, trial
    return _refine(F, w, crit, rounds)


def _reduce_support(F: np.ndarray, w: np.ndarray, crit: Criterion, tol: float, rounds: int):
    """Drop support points whose removal costs at most ``tol`` in the criterion.

    Returns the boolean mask of kept points and the refined weights.
    """
    keep = np.ones(w.size, dtype=bool)
    w, state = _fit_weights(F, w, crit, rounds)
    value = state.value(crit)
    changed = True
    while changed and keep.sum() > 1:
        changed = False
        for i in np.argsort(np.where(keep, w, np.inf), kind="stable"):
            if not keep[i] or keep.sum() <= 1:
                continue
            trial_keep = keep.copy()
            trial_keep[i] = False
            tw = np.where(trial_keep, w, 0.0)
            tw = tw / tw.sum()
            sub_w, sub_state = _fit_weights(F[trial_keep], tw[trial_keep], crit, rounds)
            if sub_state.singular:
                continue
            sub_value = sub_state.value(crit)
            loss = sub_value - value if crit.kind == "D" else (sub_value - value) / abs(value)
            if loss <= tol:
                keep = trial_keep
                w = np.zeros_like(w)
                w[keep] = sub_w
                changed = True
                break
    return keep, w


def refine_weights(design: ApproximateDesign, model: GrowthModel, theta, crit: Criterion,
                   rounds: int = 100) -> ApproximateDesign:
    """Reweight a fixed support multiplicatively without ever worsening the criterion.

    D uses ``w_i <- w_i d(x_i) / k``; c and L use ``w_i <- w_i sqrt(gain_i)``
    renormalised, the square-root form being the monotone variant for these
    criteria.  Iteration stops early if an update would worsen the criterion
    or make the matrix singular; the last valid iterate is returned.
    """
    F = model_gradient(model, design.points, theta)
    w, _ = _refine(F, np.array(design.weights), crit, rounds)
    keep = w > 0
    return ApproximateDesign.normalised(design.points[keep], w[keep])


def initial_design(grid: np.ndarray, k: int) -> ApproximateDesign:
    """``k + 1`` equally spaced, equally weighted grid points."""
    idx = np.unique(np.round(np.linspace(0, grid.shape[0] - 1, k + 1)).astype(int))
    return ApproximateDesign.uniform(grid[idx])


def _tied_argmax(g: np.ndarray, slack: float) -> int:
    # grid rows are lexicographically ordered, so the first tied index is the smallest point
    return int(np.flatnonzero(g >= g.max() - slack)[0])


def _violation(g_max: float, trace_term: float, crit: Criterion) -> float:
    if crit.kind == "D":
        return g_max - trace_term
    return g_max / trace_term - 1.0


def _finish(raw, opts, crit, ranges, scaled, model, theta, space, tol, grid, F):
    """Collapse, reduce and verify the converged iterate.

    Singular optima are approximated by clusters of nearby points whose differences
    carry the missing directions; merging a cluster can then break the check.  The
    merge radius is shrunk (down to pruning only) until the collapsed design passes,
    otherwise the coarsest collapse is returned for another phase.
    """
    first = None
    # (merge-radius factor, pruning factor); merging a flat-peak cluster is usually harmless while
    # pruning can remove a small-weight point that keeps the criterion estimable
    for shrink, prune in ((1.0, 1.0), (1.0, 0.0), (1e-1, 0.0), (1e-2, 0.0), (0.0, 0.0)):
        design = collapse_support(raw, opts.collapse_tol_x * shrink, max(opts.collapse_tol_w * prune, 1e-12),
                                  ranges, scaled if shrink else None, opts.equivalence_tol * shrink)
        if shrink:
            Fd = model_gradient(model, design.points, theta)
            keep, wd = _reduce_support(Fd, np.array(design.weights), crit, opts.reduce_tol,
                                       opts.final_refine_rounds)
            design = ApproximateDesign.normalised(design.points[keep], wd[keep])
        else:
            Fd = model_gradient(model, design.points, theta)
            wd, _ = _fit_weights(Fd, np.array(design.weights), crit, opts.final_refine_rounds)
            design = ApproximateDesign.normalised(design.points[wd > 0], wd[wd > 0])
        design = design.sorted()
        report = verify_optimality(design, space, model, theta, crit, tol, grid=grid, grid_gradients=F)
        log.debug("collapse radius x%g, pruning x%g: violation %.3g on %d points", shrink, prune, report.max_violation,
                  len(design.weights))
        if report.passed:
            return design, report
        if first is None:
            first = (design, report)
    return first


def solve(model: GrowthModel, space: DesignSpace, crit: Criterion, theta,
          opts: SolverOptions = None, grid: np.ndarray = None,
          grid_gradients: np.ndarray = None):
    """Compute a locally optimal approximate design over the grid of ``space``.

    Returns
    -------
    design : ApproximateDesign
    trace : SolveTrace
        Per-iteration records, the final equivalence-theorem report and, when
        the tolerance was not reached, an efficiency lower bound.
    """
    opts = opts or SolverOptions()
    theta = np.asarray(theta, dtype=float)
    k = model.k
    tol = opts.resolved_tol(k)
    step_rule = opts.resolved_step(crit)
    if grid is None:
        grid = space.grid()
    if grid.shape[0] == 0:
        raise SolverError("empty design grid")
    F = model_gradient(model, grid, theta) if grid_gradients is None else grid_gradients
    scaled = lambda x: _scaled_gradients(model_gradient(model, x, theta), theta)
    ranges = space.ranges

    design = opts.initial_design or initial_design(grid, k)
    pts = np.array(design.points, dtype=float)
    w = np.array(design.weights, dtype=float)
    Fs = model_gradient(model, pts, theta)
    state = InformationState.from_gradients(Fs, w)
    if crit.kind == "D" and state.singular or math.isinf(state.value(crit)):
        # the initial design is degenerate; try the whole grid uniformly
        pts, w, Fs = grid.copy(), np.full(grid.shape[0], 1.0 / grid.shape[0]), F.copy()
        state = InformationState.from_gradients(Fs, w)
        if crit.kind == "D" and state.singular or math.isinf(state.value(crit)):
            raise SolverError("information matrix is singular for every design on this grid; "
                              "the model is not identifiable here")

    trace = SolveTrace()
    it = 0
    step_count = 0
    for phase in range(opts.max_phases):
        while it < opts.max_iterations:
            tr = state.trace_term(crit)
            g = state.gain(F, crit)
            viol = _violation(g.max(), tr, crit)
            if viol <= tol * opts.inner_tol_factor:
                trace.records.append(IterationRecord(it, phase, np.full(model.dim, np.nan), 0.0,
                                                     state.value(crit), viol))
                break
            j = _tied_argmax(g, opts.tie_tol * max(abs(g.max()), tr))
            gj = g[j]
            step_count += 1
            if step_rule == "fedorov-optimal" and crit.kind == "D":
                alpha = (gj - k) / (k * (gj - 1.0))
            else:
                alpha = 1.0 / (step_count + 1.0)
            w = w * (1.0 - alpha)
            hit = np.flatnonzero(np.all(pts == grid[j], axis=1))
            if hit.size:
                w[hit[0]] += alpha
            else:
                pts = np.vstack([pts, grid[j]])
                w = np.append(w, alpha)
                Fs = np.vstack([Fs, F[j]])
            w, state = _refine(Fs, w, crit, opts.refine_rounds)
            # away step: shift mass off the weakest support point towards the new maximiser
            g_sup = state.gain(Fs, crit)
            moved = _exchange(Fs, w, state, crit, g_sup, F[j], float(state.gain(F[j:j + 1], crit)[0]))
            if moved is not None:
                new_w, a, i = moved
                jj = np.flatnonzero(np.all(pts == grid[j], axis=1))[0]
                new_w[jj] += a
                trial = InformationState.from_gradients(Fs, new_w)
                if trial.value(crit) <= state.value(crit) and not trial.singular:
                    w, state = new_w, trial
            keep = w > 1e-14
            if not keep.all():
                pts, w, Fs = pts[keep], w[keep] / w[keep].sum(), Fs[keep]
                state = InformationState.from_gradients(Fs, w)
            trace.records.append(IterationRecord(it, phase, grid[j].copy(), float(alpha),
                                                 state.value(crit), viol))
            it += 1

        design, report = _finish(ApproximateDesign.normalised(pts, w), opts, crit, ranges, scaled,
                                 model, theta, space, tol, grid, F)
        trace.report = report
        if report.passed or it >= opts.max_iterations:
            break
        log.debug("phase %d: collapsed design fails the check (%.3g); resuming", phase, report.max_violation)
        pts = np.array(design.points)
        w = np.array(design.weights)
        Fs = model_gradient(model, pts, theta)
        state = InformationState.from_gradients(Fs, w)

    trace.converged = bool(trace.report.passed)
    if not trace.converged:
        from .design import atwood_lower_bound
        try:
            bound = atwood_lower_bound(design, space, model, theta, crit, grid=grid, grid_gradients=F)
        except np.linalg.LinAlgError:
            bound = 0.0  # the criterion is not even estimable under the returned design
        trace.atwood_bound = bound
        msg = (f"{crit.kind}-design did not reach tolerance {tol:.3g} "
               f"(violation {trace.report.max_violation:.3g}); efficiency >= {bound:.4f}")
        trace.warnings.append(msg)
        warnings.warn(msg, NonConvergenceWarning, stacklevel=2)
    return design, trace
