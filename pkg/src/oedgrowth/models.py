"""Growth models used for design: Baranyi primary model, Ratkowsky secondary
model, and the two-variable model obtained by substituting one into the other.

All responses are vectorised over design points.  A design point is a row of
a ``(n, dim)`` array: ``(t,)`` for isothermal models and ``(T, t)`` for the
extended model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "LogConvention",
    "BaranyiParams",
    "RatkowskyParams",
    "ExtendedParams",
    "GrowthModel",
    "BaranyiModel",
    "ExtendedModel",
    "LinearModel",
    "baranyi_response",
    "ratkowsky_mu",
    "extended_response",
    "model_gradient",
    "FD_STEP_FACTOR",
]

FD_STEP_FACTOR = np.finfo(float).eps ** (1.0 / 3.0)
LN10 = math.log(10.0)


class LogConvention(str, Enum):
    """How the concentration columns of a parameter table are read.

    ``natural`` treats y0 and y_max as natural logarithms.  ``decimal`` treats
    them as log10 values, which rescales the growth amplitude ``y_max - y0``
    by ln(10) inside the model while keeping the response in log10 units.
    """

    natural = "natural"
    decimal = "decimal"

    @property
    def scale(self) -> float:
        return 1.0 if self is LogConvention.natural else LN10


@dataclass(frozen=True)
class BaranyiParams:
    y0: float
    y_max: float
    mu_max: float
    lam: float

    def __post_init__(self):
        if not self.y_max > self.y0:
            raise ValueError(f"y_max ({self.y_max}) must exceed y0 ({self.y0})")
        if not self.mu_max > 0:
            raise ValueError(f"mu_max must be positive, got {self.mu_max}")
        if not self.lam >= 0:
            raise ValueError(f"lag duration must be >= 0, got {self.lam}")

    def as_array(self) -> np.ndarray:
        return np.array([self.y0, self.y_max, self.mu_max, self.lam], dtype=float)


@dataclass(frozen=True)
class RatkowskyParams:
    b: float
    T_min: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")

    def as_array(self) -> np.ndarray:
        return np.array([self.b, self.T_min], dtype=float)


@dataclass(frozen=True)
class ExtendedParams:
    y0: float
    y_max: float
    lam: float
    b: float
    T_min: float

    def __post_init__(self):
        BaranyiParams(self.y0, self.y_max, 1.0, self.lam)
        RatkowskyParams(self.b, self.T_min)

    def as_array(self) -> np.ndarray:
        return np.array([self.y0, self.y_max, self.lam, self.b, self.T_min], dtype=float)


def _log_lag_term(a, l):
    # ln(exp(-a) + exp(-l) - exp(-a - l)) for a, l >= 0, factored around min(a, l)
    lo = np.minimum(a, l)
    hi = np.maximum(a, l)
    return -lo + np.log1p(np.exp(-(hi - lo)) - np.exp(-hi))


def _baranyi(t, y0, y_max, mu, lam):
    """Natural-log Baranyi curve with broadcasting over every argument."""
    a = mu * t
    growth = a + _log_lag_term(a, mu * lam)  # mu * F(t)
    amp = y_max - y0
    # ln(1 + (e^growth - 1) e^-amp) == logaddexp(growth - amp, ln(1 - e^-amp))
    return y0 + growth - np.logaddexp(growth - amp, np.log(-np.expm1(-amp)))


def baranyi_response(t, p: BaranyiParams, convention: LogConvention = LogConvention.natural):
    """Log-concentration of the Baranyi model at time(s) ``t`` (hours)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    s = LogConvention(convention).scale
    return _baranyi(t, p.y0 * s, p.y_max * s, p.mu_max, p.lam) / s


def ratkowsky_mu(T, p: RatkowskyParams):
    """Maximum growth rate from the square-root model, ``b^2 (T - T_min)^2``."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= p.T_min):
        raise ValueError(
            f"temperature must exceed T_min={p.T_min}; the square-root model is not "
            "defined below the minimum growth temperature"
        )
    mu = (p.b * (T - p.T_min)) ** 2
    return mu if mu.ndim else float(mu)


def extended_response(x, p: ExtendedParams, convention: LogConvention = LogConvention.natural):
    """Baranyi response with ``mu_max`` replaced by the square-root model.

    ``x`` is a ``(T, t)`` pair or an ``(n, 2)`` array of them.
    """
    x = np.asarray(x, dtype=float)
    T, t = x[..., 0], x[..., 1]
    mu = ratkowsky_mu(T, RatkowskyParams(p.b, p.T_min))
    return _baranyi_scaled(t, p.y0, p.y_max, mu, p.lam, convention)


def _baranyi_scaled(t, y0, y_max, mu, lam, convention):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    s = LogConvention(convention).scale
    return _baranyi(t, y0 * s, y_max * s, mu, lam) / s


@dataclass(frozen=True)
class GrowthModel:
    """A response function over design points together with its parameter names.

    Subclasses implement :meth:`response` taking an ``(n, dim)`` point array and
    a parameter vector, and :meth:`valid` describing the parameter domain.
    """

    param_names: tuple = ()
    coord_names: tuple = ()

    @property
    def k(self) -> int:
        return len(self.param_names)

    @property
    def dim(self) -> int:
        return len(self.coord_names)

    def response(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def valid(self, theta: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(theta)))

    def index(self, name: str) -> int:
        return self.param_names.index(name)

    def unit_vector(self, *names: str) -> np.ndarray:
        """Coefficient vector (or k x m matrix for several names) selecting parameters."""
        cols = np.zeros((self.k, len(names)))
        for j, name in enumerate(names):
            cols[self.index(name), j] = 1.0
        return cols[:, 0] if len(names) == 1 else cols


@dataclass(frozen=True)
class BaranyiModel(GrowthModel):
    """Isothermal Baranyi model, parameters ordered (y0, y_max, mu_max, lam)."""

    convention: LogConvention = LogConvention.natural
    param_names: tuple = ("y0", "y_max", "mu_max", "lam")
    coord_names: tuple = ("t",)

    def response(self, x, theta):
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        y0, y_max, mu, lam = theta
        return _baranyi_scaled(x[:, 0], y0, y_max, mu, lam, self.convention)

    def valid(self, theta):
        y0, y_max, mu, lam = theta
        return bool(y_max > y0 and mu > 0 and lam >= 0)


@dataclass(frozen=True)
class ExtendedModel(GrowthModel):
    """Two-variable model over (T, t), parameters ordered (y0, y_max, lam, b, T_min)."""

    convention: LogConvention = LogConvention.natural
    param_names: tuple = ("y0", "y_max", "lam", "b", "T_min")
    coord_names: tuple = ("T", "t")

    def response(self, x, theta):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        y0, y_max, lam, b, T_min = theta
        mu = (b * (x[:, 0] - T_min)) ** 2
        return _baranyi_scaled(x[:, 1], y0, y_max, mu, lam, self.convention)

    def valid(self, theta):
        y0, y_max, lam, b, T_min = theta
        return bool(y_max > y0 and lam >= 0 and b > 0)


@dataclass(frozen=True)
class LinearModel(GrowthModel):
    """``eta = sum_j theta_j * basis_j(x)`` over a single coordinate; handy for checks."""

    basis: Sequence[Callable] = field(default=(lambda x: np.ones_like(x), lambda x: x))
    param_names: tuple = ("theta1", "theta2")
    coord_names: tuple = ("x",)

    def response(self, x, theta):
        x = np.asarray(x, dtype=float).reshape(-1, 1)[:, 0]
        return sum(th * g(x) for th, g in zip(theta, self.basis))


def model_gradient(model: GrowthModel, x, theta, full_output: bool = False):
    """Parameter gradients ``f(x) = d eta / d theta`` at every design point.

    Central differences with step ``|theta_i| * eps**(1/3)`` (``eps**(1/3)`` for a
    zero parameter), so small parameters such as ``b`` get a proportionate step.  When a
    step would leave the model's parameter domain the one-sided difference
    towards the interior is used instead.

    Parameters
    ----------
    model : GrowthModel
    x : array_like, shape (n, dim) or (dim,)
    theta : array_like, shape (k,)
    full_output : bool
        Also return a dict with a boolean ``one_sided`` entry per parameter.

    Returns
    -------
    ndarray, shape (n, k)
    """
    theta = np.asarray(theta, dtype=float)
    if not model.valid(theta):
        raise ValueError(f"invalid parameter vector {theta.tolist()} for {type(model).__name__}")
    x = np.asarray(x, dtype=float).reshape(-1, model.dim)
    out = np.empty((x.shape[0], theta.size))
    one_sided = []
    for i in range(theta.size):
        h = (abs(theta[i]) or 1.0) * FD_STEP_FACTOR
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        ok_up, ok_down = model.valid(up), model.valid(down)
        if ok_up and ok_down:
            out[:, i] = (model.response(x, up) - model.response(x, down)) / (2 * h)
            one_sided.append(False)
        elif ok_up or ok_down:
            # second-order one-sided stencil
            sgn = 1.0 if ok_up else -1.0
            far = theta.copy()
            far[i] += 2 * sgn * h
            near = up if ok_up else down
            f0 = model.response(x, theta)
            out[:, i] = sgn * (-3 * f0 + 4 * model.response(x, near) - model.response(x, far)) / (2 * h)
            one_sided.append(True)
        else:
            raise ValueError(f"no admissible finite-difference step for parameter {model.param_names[i]}")
    if full_output:
        return out, {"one_sided": dict(zip(model.param_names, one_sided))}
    return out
