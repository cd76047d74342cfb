"""Approximate designs, Fisher information, optimality criteria and the
equivalence-theorem machinery built on them.

Criteria are expressed as minimisation of ``Phi[M]``:

* ``D`` : ``|M^-1|`` (handled as ``-log|M|``),
* ``c`` : ``c^T M^- c``,
* ``L`` : ``Tr[K^T M^- K]``.

For every criterion the *gain* at a candidate point ``x`` is the quantity the
sensitivity function subtracts, and the *trace term* is what it is compared
with: ``d(x) = f^T M^-1 f`` against ``k`` for D, ``(f^T M^- c)^2`` against
``c^T M^- c`` for c, and ``||K^T M^- f||^2`` against ``Tr[K^T M^- K]`` for L.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .models import GrowthModel, model_gradient

__all__ = [
    "ApproximateDesign",
    "DesignSpace",
    "Criterion",
    "GetReport",
    "InformationState",
    "design_state",
    "information_matrix",
    "criterion_value",
    "sensitivity",
    "verify_optimality",
    "efficiency",
    "atwood_lower_bound",
    "EffConvention",
]

EffConvention = str  # "raw" | "homogeneous"
ESTIMABILITY_RTOL = 1e-8
#: reciprocal condition number (of the equilibrated matrix) below which M counts as singular
SINGULAR_RCOND = 1e-14


@dataclass(frozen=True, eq=False)
class ApproximateDesign:
    """Finitely supported probability measure on the design space.

    Parameters
    ----------
    points : array_like, shape (n, dim)
    weights : array_like, shape (n,)
        Strictly positive and summing to one within 1e-12.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 1 and np.ndim(self.points) == 1:
            pts = pts.T  # 1-D list of times
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.size:
            raise ValueError(f"{pts.shape[0]} support points but {w.size} weights")
        if w.size == 0:
            raise ValueError("a design needs at least one support point")
        if np.any(~np.isfinite(pts)):
            raise ValueError("support points must be finite")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "ApproximateDesign":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def normalised(cls, points, weights) -> "ApproximateDesign":
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum())

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sorted(self) -> "ApproximateDesign":
        order = np.lexsort(self.points.T[::-1])
        return ApproximateDesign(self.points[order], self.weights[order])

    def __eq__(self, other):
        if not isinstance(other, ApproximateDesign):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    def __repr__(self):
        rows = ", ".join(
            f"({', '.join(f'{c:.6g}' for c in p)}): {w:.4g}" for p, w in zip(self.points, self.weights)
        )
        return f"ApproximateDesign({rows})"


@dataclass(frozen=True)
class DesignSpace:
    """Box-shaped design space discretised on a regular grid.

    Parameters
    ----------
    bounds : sequence of (low, high)
        One closed interval per coordinate, in model coordinate order.
    resolution : sequence of int
        Grid points per axis (>= 2).
    time_upper : callable, optional
        ``T -> t_ub(T)``; for two-coordinate spaces it replaces the upper
        bound of the last (time) axis temperature by temperature.
    """

    bounds: tuple
    resolution: tuple
    time_upper: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        res = tuple(int(r) for r in self.resolution)
        if len(bounds) != len(res):
            raise ValueError("bounds and resolution lengths differ")
        for lo, hi in bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid interval [{lo}, {hi}]")
        if any(r < 2 for r in res):
            raise ValueError("need at least 2 grid points per axis")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "resolution", res)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def ranges(self) -> np.ndarray:
        if self.dim == 2 and self.time_upper is not None:
            temps = np.linspace(*self.bounds[0], self.resolution[0])
            t_hi = max(self.bounds[1][1], max(self.time_upper(T) for T in temps))
            return np.array([self.bounds[0][1] - self.bounds[0][0], t_hi - self.bounds[1][0]])
        return np.array([hi - lo for lo, hi in self.bounds])

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(*self.bounds[i], self.resolution[i])

    def time_axis(self, T: Optional[float] = None) -> np.ndarray:
        lo, hi = self.bounds[-1]
        if T is not None and self.time_upper is not None:
            hi = float(self.time_upper(T))
        return np.linspace(lo, hi, self.resolution[-1])

    def grid(self) -> np.ndarray:
        """Grid points in lexicographic order, shape ``(n, dim)``."""
        if self.dim == 1:
            return self.axis(0)[:, None]
        if self.dim == 2:
            blocks = []
            for T in self.axis(0):
                t = self.time_axis(T)
                blocks.append(np.column_stack([np.full_like(t, T), t]))
            return np.vstack(blocks)
        mesh = np.meshgrid(*(self.axis(i) for i in range(self.dim)), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def contains(self, x, atol: float = 1e-9) -> bool:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = np.ones(x.shape[0], dtype=bool)
        for i, (lo, hi) in enumerate(self.bounds):
            if self.dim == 2 and i == 1 and self.time_upper is not None:
                hi = np.array([self.time_upper(T) for T in x[:, 0]])
            ok &= (x[:, i] >= lo - atol) & (x[:, i] <= hi + atol)
        return bool(ok.all())

    def with_resolution(self, *resolution) -> "DesignSpace":
        return DesignSpace(self.bounds, resolution, self.time_upper)


@dataclass(frozen=True)
class Criterion:
    """Optimality criterion: ``D``, ``c`` (vector) or ``L`` (k x m matrix)."""

    kind: str
    coef: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("D", "c", "L"):
            raise ValueError(f"unknown criterion {self.kind!r}")
        if self.kind == "D":
            return
        coef = np.asarray(self.coef, dtype=float)
        if self.kind == "c":
            coef = coef.ravel()
            if not np.any(coef):
                raise ValueError("c must be non-zero")
        else:
            if coef.ndim == 1:
                coef = coef[:, None]
            if np.linalg.matrix_rank(coef) < coef.shape[1]:
                raise ValueError("K must have full column rank")
        object.__setattr__(self, "coef", coef)

    @classmethod
    def D(cls) -> "Criterion":
        return cls("D")

    @classmethod
    def c(cls, vector) -> "Criterion":
        return cls("c", vector)

    @classmethod
    def L(cls, matrix) -> "Criterion":
        return cls("L", matrix)

    @property
    def K(self) -> np.ndarray:
        """Coefficient matrix; c-criteria are L-criteria with one column."""
        return self.coef[:, None] if self.kind == "c" else self.coef

    def __repr__(self):
        if self.kind == "D":
            return "Criterion(D)"
        return f"Criterion({self.kind}, {np.round(self.coef, 6).tolist()})"


class InformationState:
    """Factorised information matrix with the quantities criteria need.

    The matrix is Jacobi-equilibrated before factorisation; the extended
    model mixes parameters whose gradients differ by four orders of magnitude.
    A Cholesky factor is used when the matrix is positive definite, and an
    eigen-decomposition based Moore-Penrose inverse otherwise.
    """

    def __init__(self, M: np.ndarray, root: np.ndarray = None):
        M = 0.5 * (M + M.T)
        self.M = M
        self.k = M.shape[0]
        diag = np.diag(M)
        scale = np.where(diag > 0, diag, 1.0) ** -0.5
        self._s = scale
        self.singular = False
        try:
            if root is not None and root.shape[0] >= self.k:
                # QR of the square root avoids squaring its condition number
                qr, _, _, info = lapack.dgeqrf(root * scale)
                if info != 0:
                    raise linalg.LinAlgError("QR factorisation failed")
                L = qr[: self.k].T  # only the lower triangle is ever read
            else:
                L = linalg.cholesky(M * np.outer(scale, scale), lower=True, check_finite=False)
            self._cho = (L, True)
            ld = 2.0 * np.log(np.abs(L.diagonal())).sum()
            rcond, info = lapack.dtrcon(L, norm="1", uplo="L")
            if not np.isfinite(ld) or info != 0 or rcond ** 2 < SINGULAR_RCOND:
                raise linalg.LinAlgError("numerically singular")
            self.logdet = ld - 2.0 * np.sum(np.log(scale))
        except (linalg.LinAlgError, ValueError):
            self.singular = True
            self._cho = None
            self.logdet = -np.inf
            Ms = M * np.outer(scale, scale)
            vals, vecs = np.linalg.eigh(Ms)
            keep = vals > ESTIMABILITY_RTOL * max(vals.max(), 0.0) if vals.max() > 0 else np.zeros_like(vals, bool)
            self._range = vecs[:, keep]
            self._pinv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T

    @classmethod
    def from_gradients(cls, F: np.ndarray, w: np.ndarray) -> "InformationState":
        """State of ``M = F^T diag(w) F``, factorised through ``diag(sqrt(w)) F``."""
        A = np.asarray(F, dtype=float) * np.sqrt(np.asarray(w, dtype=float))[:, None]
        return cls(A.T @ A, root=A)

    def solve(self, B: np.ndarray) -> np.ndarray:
        """``M^- B`` (true inverse when nonsingular)."""
        B = np.asarray(B, dtype=float)
        s = self._s.reshape((-1,) + (1,) * (B.ndim - 1))
        if self._cho is not None:
            return s * linalg.cho_solve(self._cho, s * B, check_finite=False)
        return s * (self._pinv @ (s * B))

    def estimable(self, K: np.ndarray) -> bool:
        if not self.singular:
            return True
        Ks = np.asarray(K, dtype=float).reshape(self.k, -1) * self._s[:, None]
        proj = self._range @ (self._range.T @ Ks)
        return bool(np.linalg.norm(proj - Ks) <= 1e-6 * np.linalg.norm(Ks))

    def quad(self, F: np.ndarray) -> np.ndarray:
        """Row-wise ``f^T M^- f`` for an ``(n, k)`` array."""
        F = np.asarray(F, dtype=float)
        if self._cho is not None:
            # ||L^-1 f||^2: one triangular solve, nonnegative by construction
            Z = linalg.solve_triangular(self._cho[0], (F * self._s).T, lower=True, check_finite=False)
            return np.einsum("ij,ij->j", Z, Z)
        return np.einsum("ij,ij->i", F, self.solve(F.T).T)

    # criterion-generic pieces
    def trace_term(self, crit: Criterion) -> float:
        if crit.kind == "D":
            return float(self.k)
        K = crit.K
        if not self.estimable(K):
            return math.inf
        return float(np.trace(K.T @ self.solve(K)))

    def gain(self, F: np.ndarray, crit: Criterion) -> np.ndarray:
        if crit.kind == "D":
            if self.singular:
                raise np.linalg.LinAlgError("D-sensitivity undefined for a singular information matrix")
            return self.quad(F)
        MK = self.solve(crit.K)  # k x m
        return np.sum((F @ MK) ** 2, axis=1)

    def value(self, crit: Criterion) -> float:
        if crit.kind == "D":
            return -self.logdet
        return self.trace_term(crit)


def information_matrix(design: ApproximateDesign, model: GrowthModel, theta, F: np.ndarray = None) -> np.ndarray:
    """``M = sum_i w_i f(x_i) f(x_i)^T``; pass ``F`` to reuse precomputed gradients."""
    if F is None:
        F = model_gradient(model, design.points, theta)
    return (F * design.weights[:, None]).T @ F


def design_state(design: ApproximateDesign, model: GrowthModel, theta, F: np.ndarray = None) -> InformationState:
    """Factorised information matrix of ``design``; pass ``F`` to reuse support gradients."""
    if F is None:
        F = model_gradient(model, design.points, theta)
    return InformationState.from_gradients(F, design.weights)


def criterion_value(M: np.ndarray, crit: Criterion) -> float:
    """Value of ``Phi[M]`` to be minimised.

    D returns ``-log|M|`` (``log|M^-1|``); ``+inf`` flags a singular matrix
    under D or a non-estimable combination under c / L.
    """
    return InformationState(np.asarray(M, dtype=float)).value(crit)


def sensitivity(x, design: ApproximateDesign, model: GrowthModel, theta, crit: Criterion,
                normalise: bool = False) -> np.ndarray:
    """Sensitivity function ``phi(x, xi)`` at the rows of ``x``.

    ``D: k - d(x)``; ``c: c^T M^- c - (f^T M^- c)^2``; ``L`` the column-wise
    extension.  With ``normalise=True`` the c / L values are divided by the
    criterion value so that tolerances are scale free (D is unchanged).
    """
    state = design_state(design, model, theta)
    F = model_gradient(model, x, theta)
    return _phi(state, F, crit, normalise)


def _phi(state: InformationState, F, crit, normalise):
    tr = state.trace_term(crit)
    g = state.gain(F, crit)
    if crit.kind != "D" and normalise:
        return 1.0 - g / tr
    return tr - g


@dataclass
class GetReport:
    """Outcome of a grid check of the equivalence theorem."""

    max_violation: float
    argmax: np.ndarray
    support_values: np.ndarray
    passed: bool
    tol: float
    criterion: str = "D"

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "max_violation": float(self.max_violation),
            "argmax": [float(v) for v in np.ravel(self.argmax)],
            "support_values": [float(v) for v in self.support_values],
            "passed": bool(self.passed),
            "tol": float(self.tol),
        }


def _argmax_lex(values: np.ndarray) -> int:
    # ties resolve to the first index; grids are produced in lexicographic order
    return int(np.argmax(values))


def verify_optimality(design: ApproximateDesign, space: DesignSpace, model: GrowthModel, theta,
                      crit: Criterion, tol: float, grid: np.ndarray = None,
                      grid_gradients: np.ndarray = None) -> GetReport:
    """Scan the design-space grid for violations of ``phi(x, xi) >= 0``.

    The design passes when ``max(-phi) <= tol`` over the grid and
    ``|phi| <= tol`` at every support point.  c / L sensitivities are
    normalised by the criterion value.
    """
    if grid is None:
        grid = space.grid()
    F = model_gradient(model, grid, theta) if grid_gradients is None else grid_gradients
    Fs = model_gradient(model, design.points, theta)
    state = design_state(design, model, theta, Fs)
    if crit.kind == "D" and state.singular:
        return GetReport(math.inf, grid[0], np.full(design.size, np.nan), False, tol, crit.kind)
    phi = _phi(state, F, crit, normalise=True)
    neg = -phi
    j = _argmax_lex(neg)
    at_support = _phi(state, Fs, crit, normalise=True)
    passed = bool(neg[j] <= tol and np.all(np.abs(at_support) <= tol))
    return GetReport(float(neg[j]), grid[j], at_support, passed, tol, crit.kind)


def efficiency(design: ApproximateDesign, reference: ApproximateDesign, model: GrowthModel, theta,
               crit: Criterion, convention: EffConvention = "homogeneous") -> float:
    """Efficiency of ``design`` relative to ``reference``: ``Phi[M(ref)] / Phi[M(design)]``.

    ``raw`` applies the ratio to the criterion functions themselves (for D,
    ``|M(design)| / |M(ref)|``).  ``homogeneous`` takes the k-th root for D so
    the value scales like a sample-size ratio; c and L criteria are already
    homogeneous of degree one and both conventions coincide.
    """
    if convention not in ("raw", "homogeneous"):
        raise ValueError(f"unknown efficiency convention {convention!r}")
    s_ref = design_state(reference, model, theta)
    s = design_state(design, model, theta)
    return efficiency_from_states(s, s_ref, crit, convention)


def efficiency_from_states(s: InformationState, s_ref: InformationState, crit: Criterion,
                           convention: EffConvention = "homogeneous") -> float:
    if crit.kind == "D":
        if s.singular:
            return 0.0
        if s_ref.singular:
            return math.inf
        gap = s.logdet - s_ref.logdet
        return math.exp(gap / s.k if convention == "homogeneous" else gap)
    ref_val, val = s_ref.value(crit), s.value(crit)
    if math.isinf(ref_val):
        raise ValueError("criterion is not estimable under the reference design")
    return 0.0 if math.isinf(val) else ref_val / val


def atwood_lower_bound(design: ApproximateDesign, space: DesignSpace, model: GrowthModel, theta,
                       crit: Criterion, grid: np.ndarray = None, grid_gradients: np.ndarray = None) -> float:
    """Lower bound on the efficiency of ``design`` without knowing the optimum.

    ``Tr[M grad Phi] / max_x gain(x)``: ``k / max d(x)`` for D and
    ``c^T M^- c / max (f^T M^- c)^2`` for c (L analogously).  For D the bound
    applies to the homogeneous efficiency; the raw efficiency is bounded by
    its k-th power.
    """
    if grid is None:
        grid = space.grid()
    F = model_gradient(model, grid, theta) if grid_gradients is None else grid_gradients
    state = design_state(design, model, theta)
    if crit.kind == "D" and state.singular:
        raise np.linalg.LinAlgError("singular information matrix")
    tr = state.trace_term(crit)
    if math.isinf(tr):
        raise np.linalg.LinAlgError("criterion not estimable under this design")
    return float(tr / np.max(state.gain(F, crit)))
