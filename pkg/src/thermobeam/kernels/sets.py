"""Kernel containers produced by the solvers and consumed by gain synthesis
and the backstepping transforms.

All bivariate kernels are sampled on a uniform grid over the unit square;
k, l, rho, sigma, psi, phi live on the lower triangle (upper part zero),
p and varrho on the full square.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..numerics import deriv_x


@dataclass
class KernelSet:
    """Control kernels (k, l, gamma, p, Upsilon) with retained traces."""

    x: np.ndarray
    k: np.ndarray
    l: np.ndarray
    gamma: np.ndarray          # (ng, n)
    p: np.ndarray
    Upsilon: np.ndarray        # (ng, m)
    p_y0: np.ndarray           # p_y(x, 0)
    K: np.ndarray
    method: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def h(self):
        return self.x[1] - self.x[0]

    # traces at x = 1 used by the gain formulas
    @property
    def k1(self):
        return self.k[-1]

    @property
    def l1(self):
        return self.l[-1]

    @property
    def p1(self):
        return self.p[-1]


@dataclass
class InverseKernelSet:
    """Inverse-transform kernels, discretely consistent with the direct set:
    re-applying the trapezoid rule to the sampled values reproduces the exact
    inverse of the discrete forward transform."""

    x: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    varrho: np.ndarray
    lam: np.ndarray            # (ng, n)
    vartheta: np.ndarray       # (ng, m)
    meta: dict = field(default_factory=dict)

    @property
    def h(self):
        return self.x[1] - self.x[0]

    @property
    def rho_y1(self):
        return deriv_x(self.rho[-1], self.h)

    @property
    def sigma_y1(self):
        return deriv_x(self.sigma[-1], self.h)

    @property
    def varrho_y1(self):
        return deriv_x(self.varrho[-1], self.h)


@dataclass
class ObserverKernelSet:
    """Observer kernels (psi, phi, M) with the traces the gain formulas use
    (psi(., 0), phi(., 0), psi(1, .), phi(1, .))."""

    x: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    M: np.ndarray
    L_z: float
    method: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def h(self):
        return self.x[1] - self.x[0]

    @property
    def psi_x0(self):
        return self.psi[:, 0]

    @property
    def phi_x0(self):
        return self.phi[:, 0]

    @property
    def psi1(self):
        return self.psi[-1]

    @property
    def phi1(self):
        return self.phi[-1]


def resample_bivariate(vals, x_old, x_new, triangle=False):
    """Bilinear resampling of a square-grid kernel onto a new uniform grid.

    Lower-triangle kernels are reflected across the diagonal first so the
    zeroed upper part cannot leak into near-diagonal values.
    """
    from scipy.interpolate import RegularGridInterpolator
    if triangle:
        from .common import reflect_upper
        vals = reflect_upper(vals)
    itp = RegularGridInterpolator((x_old, x_old), vals, method="linear")
    XN, YN = np.meshgrid(x_new, x_new, indexing="ij")
    pts = np.stack([XN.ravel(), YN.ravel()], axis=-1)
    return itp(pts).reshape(len(x_new), len(x_new))


def resample_kernels(ks: KernelSet, x_new) -> KernelSet:
    """Sample a kernel set onto another uniform grid (used to move kernels
    from the solver grid onto the simulation grid)."""
    from .common import zero_upper

    def rs1(arr):
        out = np.empty((len(x_new), arr.shape[1]))
        for c in range(arr.shape[1]):
            out[:, c] = np.interp(x_new, ks.x, arr[:, c])
        return out

    return KernelSet(
        x=np.asarray(x_new, dtype=float),
        k=zero_upper(resample_bivariate(ks.k, ks.x, x_new, triangle=True)),
        l=zero_upper(resample_bivariate(ks.l, ks.x, x_new, triangle=True)),
        gamma=rs1(ks.gamma),
        p=resample_bivariate(ks.p, ks.x, x_new),
        Upsilon=rs1(ks.Upsilon),
        p_y0=np.interp(x_new, ks.x, ks.p_y0),
        K=ks.K, method=ks.method,
        meta=dict(ks.meta, resampled_from=len(ks.x)))


def resample_observer_kernels(obsK: ObserverKernelSet, x_new) -> ObserverKernelSet:
    from .common import zero_upper

    return ObserverKernelSet(
        x=np.asarray(x_new, dtype=float),
        psi=zero_upper(resample_bivariate(obsK.psi, obsK.x, x_new, triangle=True)),
        phi=zero_upper(resample_bivariate(obsK.phi, obsK.x, x_new, triangle=True)),
        M=np.interp(x_new, obsK.x, obsK.M),
        L_z=obsK.L_z, method=obsK.method,
        meta=dict(obsK.meta, resampled_from=len(obsK.x)))
