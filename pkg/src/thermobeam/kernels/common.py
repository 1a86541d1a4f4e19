"""Shared machinery for the kernel solvers: triangular grids, banded
trapezoid integrals, bivariate polynomial bases for the collocation method,
and characteristic-line integrators for the successive-approximation method.

Kernels on the triangle {0 <= y <= x <= 1} are stored as (ng, ng) arrays
with the strict upper part zeroed.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import map_coordinates


class ConvergenceError(RuntimeError):
    """A kernel iteration failed to contract at the requested grid."""


def kernel_grid(ng):
    x = np.linspace(0.0, 1.0, ng)
    return x, x[1] - x[0]


def band_integral(arow, bcol, h):
    """I[i, j] = int_{x_j}^{x_i} arow[i, z] bcol[z, j] dz (trapezoid), zero
    for j > i.  arow is indexed [i, z], bcol [z, j]."""
    ng = arow.shape[0]
    out = np.zeros((ng, ng))
    for j in range(ng):
        g = arow[:, j:] * bcol[j:, j]          # g[i, z-j]
        s = np.cumsum(g, axis=1)
        idx = np.arange(ng - j)
        rows = np.arange(j, ng)
        full = s[rows, idx]
        out[rows, j] = h * (full - 0.5 * g[rows, 0] - 0.5 * g[rows, idx])
    out[np.triu_indices(ng, 1)] = 0.0
    np.fill_diagonal(out, 0.0)
    return out


def suffix_band_integral(vals, h):
    """T[j] = int_{x_j}^{1} vals[z, j] dz (trapezoid over z >= j)."""
    ng = vals.shape[0]
    out = np.zeros(ng)
    for j in range(ng):
        col = vals[j:, j]
        if col.size >= 2:
            out[j] = h * (col.sum() - 0.5 * col[0] - 0.5 * col[-1])
    return out


def zero_upper(arr):
    out = np.array(arr, dtype=float)
    out[np.triu_indices(out.shape[0], 1)] = 0.0
    return out


def reflect_upper(arr):
    """Continuous extension of a lower-triangle field across the diagonal
    (upper part mirrored); used before bilinear sampling near y = x."""
    out = np.array(arr, dtype=float)
    iu = np.triu_indices(out.shape[0], 1)
    out[iu] = out.T[iu]
    return out


# ---------------------------------------------------------------------------
# bivariate Chebyshev basis of total degree <= N on [0,1]^2
# ---------------------------------------------------------------------------

def _cheb_and_deriv(u, deg):
    """Chebyshev polynomials T_0..T_deg and derivatives at u in [-1, 1]."""
    u = np.asarray(u, dtype=float)
    T = np.empty((deg + 1,) + u.shape)
    dT = np.empty_like(T)
    T[0] = 1.0
    dT[0] = 0.0
    if deg >= 1:
        T[1] = u
        dT[1] = 1.0
    for k in range(2, deg + 1):
        T[k] = 2.0 * u * T[k - 1] - T[k - 2]
        dT[k] = 2.0 * T[k - 1] + 2.0 * u * dT[k - 1] - dT[k - 2]
    return T, dT


class TriPolyBasis:
    """Products T_i(2x-1) T_j(2y-1) with i + j <= N."""

    def __init__(self, degree):
        self.degree = degree
        self.pairs = [(i, j) for i in range(degree + 1)
                      for j in range(degree + 1 - i)]
        self.size = len(self.pairs)

    def _tables(self, x, y):
        Tx, dTx = _cheb_and_deriv(2.0 * np.asarray(x) - 1.0, self.degree)
        Ty, dTy = _cheb_and_deriv(2.0 * np.asarray(y) - 1.0, self.degree)
        return Tx, 2.0 * dTx, Ty, 2.0 * dTy

    def eval(self, x, y):
        """Basis values at broadcastable points; output (..., size)."""
        Tx, _, Ty, _ = self._tables(x, y)
        return np.stack([Tx[i] * Ty[j] for i, j in self.pairs], axis=-1)

    def eval_dx(self, x, y):
        Tx, dTx, Ty, _ = self._tables(x, y)
        return np.stack([dTx[i] * Ty[j] for i, j in self.pairs], axis=-1)

    def eval_dy(self, x, y):
        Tx, _, Ty, dTy = self._tables(x, y)
        return np.stack([Tx[i] * dTy[j] for i, j in self.pairs], axis=-1)


@dataclass
class PolyKernel:
    """Polynomial kernel with coefficient vector in a TriPolyBasis."""

    basis: TriPolyBasis
    coef: np.ndarray

    def __call__(self, x, y):
        return self.basis.eval(x, y) @ self.coef

    def dx(self, x, y):
        return self.basis.eval_dx(x, y) @ self.coef

    def dy(self, x, y):
        return self.basis.eval_dy(x, y) @ self.coef


def cheb_nodes(n):
    """Chebyshev points of the second kind mapped to [0, 1], ascending."""
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(np.pi * k / (n - 1)))


# ---------------------------------------------------------------------------
# characteristic-line integrators on the uniform triangle grid
# ---------------------------------------------------------------------------

def _sample_bilinear(grid_vals, xs, ys, h):
    """Bilinear samples of a grid field at (xs, ys) in [0,1]^2."""
    coords = np.vstack([xs.ravel() / h, ys.ravel() / h])
    out = map_coordinates(grid_vals, coords, order=1, mode="nearest")
    return out.reshape(xs.shape)


def char_from_diagonal(rhs_grid, x, ratio, diag_data, n_samples=None):
    """Integrate w_x - ratio * w_y = rhs along characteristics that leave the
    diagonal y = x, for every lower-triangle grid point.

    diag_data is a callable g(x) giving w(x, x).  rhs_grid holds rhs samples
    on the full grid (values above the diagonal are extrapolated from the
    nearest node, which only matters at round-off distance from y = x).
    """
    ng = len(x)
    h = x[1] - x[0]
    if n_samples is None:
        n_samples = max(ng, 33)
    X, Y = np.meshgrid(x, x, indexing="ij")
    start = (np.minimum(Y + ratio * X, X * (1.0 + ratio))) / (1.0 + ratio)
    span = X - start
    tau = np.linspace(0.0, 1.0, n_samples)
    S = start[..., None] + span[..., None] * tau          # s along the line
    Yc = Y[..., None] + ratio * (X[..., None] - S)
    vals = _sample_bilinear(rhs_grid, S, np.clip(Yc, 0.0, 1.0), h)
    w = np.full(n_samples, 1.0 / (n_samples - 1))
    w[0] = w[-1] = 0.5 / (n_samples - 1)
    integral = span * np.einsum("ijq,q->ij", vals, w)
    out = diag_data(start) + integral
    return zero_upper(out)


def char_from_bottom(rhs_grid, x, bottom_data, n_samples=None):
    """Integrate w_x + w_y = rhs along unit-slope characteristics starting
    on y = 0 where w(x, 0) = bottom_data(x)."""
    ng = len(x)
    h = x[1] - x[0]
    if n_samples is None:
        n_samples = max(ng, 33)
    X, Y = np.meshgrid(x, x, indexing="ij")
    start = X - Y
    tau = np.linspace(0.0, 1.0, n_samples)
    S = start[..., None] + Y[..., None] * tau
    Yc = S - start[..., None]
    vals = _sample_bilinear(rhs_grid, S, np.clip(Yc, 0.0, 1.0), h)
    w = np.full(n_samples, 1.0 / (n_samples - 1))
    w[0] = w[-1] = 0.5 / (n_samples - 1)
    integral = Y * np.einsum("ijq,q->ij", vals, w)
    out = bottom_data(start) + integral
    return zero_upper(out)


def char_from_right(rhs_grid, x, right_data, n_samples=None):
    """Integrate w_x + w_y = rhs backward from the edge x = 1 where
    w(1, y) = right_data(y):  w(x, y) = data(y+1-x) - int_x^1 rhs."""
    ng = len(x)
    h = x[1] - x[0]
    if n_samples is None:
        n_samples = max(ng, 33)
    X, Y = np.meshgrid(x, x, indexing="ij")
    span = 1.0 - X
    tau = np.linspace(0.0, 1.0, n_samples)
    S = X[..., None] + span[..., None] * tau
    Yc = Y[..., None] + (S - X[..., None])
    vals = _sample_bilinear(rhs_grid, S, np.clip(Yc, 0.0, 1.0), h)
    w = np.full(n_samples, 1.0 / (n_samples - 1))
    w[0] = w[-1] = 0.5 / (n_samples - 1)
    integral = span * np.einsum("ijq,q->ij", vals, w)
    out = right_data(Y + 1.0 - X) - integral
    return zero_upper(out)
