"""Shared numerical helpers: quadrature weight matrices, finite differences,
row-vector ODE integration and dense matrix exponentials.

Everything here operates on uniform grids over [0, 1].
"""

import numpy as np
from scipy.linalg import expm


def uniform_grid(n):
    """n equally spaced nodes on [0, 1]; returns (x, h)."""
    x = np.linspace(0.0, 1.0, n)
    return x, x[1] - x[0]


def trapezoid_weights(n, h):
    """Composite trapezoid weights on a uniform grid of n nodes."""
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    if n == 1:
        w[0] = 0.0
    return w


def volterra_weight_matrix(n, h):
    """Row i holds trapezoid weights for integrating over [0, x_i].

    W[i, j] is the weight of node j in the quadrature of int_0^{x_i} f dy;
    rows with i == 0 are zero (empty interval).
    """
    w = np.zeros((n, n))
    for i in range(1, n):
        w[i, : i + 1] = h
        w[i, 0] = 0.5 * h
        w[i, i] = 0.5 * h
    return w


def cumtrapz_grid(f, h):
    """Cumulative trapezoid integral of samples f along the last axis."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    avg = 0.5 * (f[..., 1:] + f[..., :-1]) * h
    out[..., 1:] = np.cumsum(avg, axis=-1)
    return out


def deriv_x(f, h):
    """First derivative along the last axis: central interior, one-sided
    second-order at the ends.  Matches the stencils used by the simulator
    for u_y and by the H^1 seminorms."""
    f = np.asarray(f, dtype=float)
    d = np.empty_like(f)
    d[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * h)
    d[..., 0] = (-3.0 * f[..., 0] + 4.0 * f[..., 1] - f[..., 2]) / (2.0 * h)
    d[..., -1] = (3.0 * f[..., -1] - 4.0 * f[..., -2] + f[..., -3]) / (2.0 * h)
    return d


def one_sided_deriv_end(f, h):
    """Second-order one-sided derivative at the last node of f."""
    return (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)


def rk4_row_ode(rhs, y0, x):
    """Integrate a row-vector ODE y'(x) = rhs(x, y) on the nodes x.

    y0 has shape (k,); rhs must accept scalar x and a (k,) vector and may be
    evaluated at half-nodes.  Returns array of shape (len(x), k).
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    out = np.empty((len(x), y0.size))
    out[0] = y0
    y = y0.copy()
    for i in range(len(x) - 1):
        h = x[i + 1] - x[i]
        k1 = rhs(x[i], y)
        k2 = rhs(x[i] + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(x[i] + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(x[i] + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
    return out


def expm_with_forcing(A, dt):
    """Return (E, M) with E = exp(A dt) and M = int_0^dt exp(A s) ds.

    The pair gives the exact one-step update x(t+dt) = E x + M w for
    xdot = A x + w with w held constant over the step.  Computed through
    the augmented-matrix exponential, which is robust for singular A.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A * dt
    aug[:n, n:] = np.eye(n) * dt
    E_aug = expm(aug)
    return E_aug[:n, :n], E_aug[:n, n:]


def gauss_legendre(npts):
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def h1_norm_sq(f, h):
    """Discrete H^1 norm squared: trapezoid of f^2 + (f')^2 with the same
    difference stencils the simulator uses."""
    f = np.asarray(f, dtype=float)
    w = trapezoid_weights(len(f), h)
    fx = deriv_x(f, h)
    return float(np.sum(w * (f * f + fx * fx)))


def fit_log_slope(t, y):
    """Least-squares slope and r^2 of log(y) against t."""
    ly = np.log(y)
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit = A @ coef
    ss_res = np.sum((ly - fit) ** 2)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return coef[0], r2
