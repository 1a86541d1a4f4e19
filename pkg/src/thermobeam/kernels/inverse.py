"""Inverse backstepping kernels from the composition identity.

Substituting the inverse transform into the forward one and demanding the
identity on every state channel gives

    rho(x,y)    = k(x,y) + int_y^x k(x,s) rho(s,y) ds
    sigma(x,y)  = l(x,y) + int_y^x rho(x,s) l(s,y) ds
    varrho(x,y) = p(x,y) + int_0^x rho(x,s) p(s,y) ds
    lambda(x)   = gamma(x) + int_0^x rho(x,y) gamma(y) dy
    vartheta(x) = Upsilon(x) + int_0^x rho(x,y) Upsilon(y) dy.

Two discretizations of the same relations are produced:

* pointwise kernels by a direct Volterra march (uniformly second order,
  including the x = 1 traces and their derivatives that the gain synthesis
  consumes); plain Picard iteration is avoided because its intermediate
  terms overflow double precision for kernels of this size;

* the weighted operator form R = (I - Tk)^{-1} Tk etc., which inverts the
  trapezoid-discretized forward transform exactly and is what the
  round-trip transform uses.
"""

import numpy as np

from ..numerics import trapezoid_weights, volterra_weight_matrix
from .common import ConvergenceError, band_integral, zero_upper
from .sets import InverseKernelSet, KernelSet


def _resolvent_march(kmat, h):
    """Pointwise rho from rho = k + int_y^x k(x,s) rho(s,y) ds."""
    ng = kmat.shape[0]
    rho = np.zeros_like(kmat)
    for j in range(ng):
        rho[j, j] = kmat[j, j]
        for i in range(j + 1, ng):
            w = np.full(i - j + 1, h)
            w[0] = w[-1] = 0.5 * h
            acc = np.dot(w[:-1] * kmat[i, j:i], rho[j:i, j])
            rho[i, j] = (kmat[i, j] + acc) / (1.0 - w[-1] * kmat[i, i])
    return rho


def solve_inverse_kernels(direct: KernelSet, tol=1e-8) -> InverseKernelSet:
    ng = len(direct.x)
    h = direct.h
    W = volterra_weight_matrix(ng, h)
    tw = trapezoid_weights(ng, h)

    rho = _resolvent_march(direct.k, h)
    WR = W * rho
    sigma = zero_upper(direct.l + band_integral(rho, direct.l, h))
    varrho = direct.p + WR @ direct.p
    lam = direct.gamma + WR @ direct.gamma
    vartheta = direct.Upsilon + WR @ direct.Upsilon

    # residual of the pointwise composition relation (banded trapezoid)
    comp = zero_upper(rho - direct.k - band_integral(direct.k, rho, h))
    scale = 1.0 + np.abs(rho).max()
    res = np.abs(comp).max() / scale
    if res > tol:
        raise ConvergenceError(
            f"inverse kernel composition residual {res:.2e} exceeds {tol:g}")

    # exact inverse of the discrete forward transform, for round trips
    Tk = W * direct.k
    M = np.linalg.solve(np.eye(ng) - Tk, np.eye(ng))
    ops = {
        "R": M - np.eye(ng),
        "S": M @ (W * direct.l),
        "P": M @ (direct.p * tw[None, :]),
        "lam": M @ direct.gamma,
        "theta": M @ direct.Upsilon,
    }
    return InverseKernelSet(
        x=direct.x, rho=rho, sigma=sigma, varrho=varrho, lam=lam,
        vartheta=vartheta,
        meta={"composition_residual": res, "ops": ops})
