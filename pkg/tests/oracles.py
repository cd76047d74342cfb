"""Independent reference computations used by the tests.

Nothing here imports the package's numerical kernels: the Baranyi curve is
re-derived in high precision from its defining formulas with mpmath.
"""
import mpmath as mp
import numpy as np

mp.mp.dps = 40


def baranyi_mp(t, y0, y_max, mu, lam, scale=1):
    """Baranyi log-concentration evaluated directly from its definition.

    ``A(t) = t + ln(exp(-mu t) + exp(-mu lam) - exp(-mu t - mu lam)) / mu`` and
    ``y = y0 + mu A - ln(1 + (exp(mu A) - 1) / exp(y_max - y0))``, in natural-log
    units; ``scale`` = ln 10 handles decimal-log inputs.
    """
    t, y0, y_max, mu, lam = (mp.mpf(v) for v in (t, y0, y_max, mu, lam))
    s = mp.mpf(scale)
    y0, y_max = y0 * s, y_max * s
    A = t + mp.log(mp.exp(-mu * t) + mp.exp(-mu * lam) - mp.exp(-mu * t - mu * lam)) / mu
    y = y0 + mu * A - mp.log(1 + (mp.exp(mu * A) - 1) / mp.exp(y_max - y0))
    return y / s


def extended_mp(T, t, y0, y_max, lam, b, T_min, scale=1):
    mu = (mp.mpf(b) * (mp.mpf(T) - mp.mpf(T_min))) ** 2
    return baranyi_mp(t, y0, y_max, mu, lam, scale)


def gradient_mp(f, theta):
    """Exact (to working precision) partial derivatives of ``f(*theta)``."""
    theta = [mp.mpf(float(v)) for v in theta]
    out = []
    for i in range(len(theta)):
        def g(v, i=i):
            args = list(theta)
            args[i] = v
            return f(*args)
        out.append(float(mp.diff(g, theta[i])))
    return np.array(out)


def richardson_gradient(model, x, theta, h0=1e-2, levels=6):
    """Richardson-extrapolated central differences, step ``h0 * |theta_i|`` halved ``levels`` times."""
    theta = np.asarray(theta, dtype=float)
    x = np.atleast_2d(x)
    out = np.empty((x.shape[0], theta.size))
    for i in range(theta.size):
        def D(h):
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            return (model.response(x, up) - model.response(x, dn)) / (2 * h)
        hs = [h0 * (abs(theta[i]) or 1.0) / 2 ** j for j in range(levels)]
        tab = [[D(h)] for h in hs]
        for j in range(1, levels):
            for m in range(1, j + 1):
                tab[j].append(tab[j][m - 1] + (tab[j][m - 1] - tab[j - 1][m - 1]) / (4 ** m - 1))
        out[:, i] = tab[-1][-1]
    return out


def scaled_relative_error(g, ref, theta):
    """Norm-wise relative error of a gradient in parameter-scaled coordinates.

    ``max_i |g_i - r_i| |theta_i| / max_i |r_i| |theta_i|``: scaling by the
    parameter makes every component dimensionless (d eta / d ln theta_i) so
    components are comparable, and the norm-wise form does not blow up on
    components that vanish on the stationary plateau.
    """
    s = np.abs(np.asarray(theta, dtype=float))
    s = np.where(s > 0, s, 1.0)
    return float(np.max(np.abs(g - ref) * s) / np.max(np.abs(ref) * s))


def two_point_linear_optimum():
    """D-optimal design for ``theta1 + theta2 x`` on [-1, 1]: both endpoints, weight 1/2."""
    return np.array([[-1.0], [1.0]]), np.array([0.5, 0.5])
