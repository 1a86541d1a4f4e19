"""Independent residual evaluation for kernel sets.

Polynomial kernel sets are differentiated exactly and their Volterra terms
integrated with Gauss quadrature on a fresh Chebyshev mesh; grid kernel sets
are checked with centered finite differences and banded trapezoid sums.
The parabolic kernel is checked off a diagonal band (the Dirac line y = x
carries a derivative jump instead of a pointwise equation) plus an estimate
of that jump against its analytic height mu2(x)/(eps2 kappa0).
"""

import numpy as np

from ..numerics import deriv_x, gauss_legendre, volterra_weight_matrix
from .common import band_integral, cheb_nodes
from .control import gamma_from_tables, half_grid, upsilon_from_tables, \
    _tables_from_grids
from .sets import KernelSet, ObserverKernelSet


def _poly_mesh(n):
    u = cheb_nodes(n)[1:-1]
    X = np.repeat(u, len(u))
    Y = (cheb_nodes(n)[1:-1][None, :] * u[:, None]).ravel()
    return X, Y


def _gl_band(integrand, X, Y, quad_n=24):
    """int_Y^X integrand(z) dz rowwise; integrand maps the (P, Q) node array
    Z to integrand values (the caller closes over X and Y broadcasts)."""
    zq, wq = gauss_legendre(quad_n)
    span = X - Y
    Z = Y[:, None] + span[:, None] * zq[None, :]
    wts = span[:, None] * wq[None, :]
    return np.einsum("pq,pq->p", wts, integrand(Z))


def control_kernel_residual(ks: KernelSet, spec, mesh_n=31) -> dict:
    """Sup residuals of the control-kernel equations and data rows."""
    r = spec.eps2 / spec.eps1
    out = {}

    poly_k = ks.meta.get("poly_k")
    poly_l = ks.meta.get("poly_l")
    if poly_k is not None:
        X, Y = _poly_mesh(mesh_n)

        def XB(Z):
            return np.broadcast_to(X[:, None], Z.shape)

        def YB(Z):
            return np.broadcast_to(Y[:, None], Z.shape)

        ik_f22 = _gl_band(lambda Z: spec.f22(Z, YB(Z)) * poly_k(XB(Z), Z), X, Y)
        il_f12 = _gl_band(lambda Z: spec.f12(Z, YB(Z)) * poly_l(XB(Z), Z), X, Y)
        ik_f21 = _gl_band(lambda Z: spec.f21(Z, YB(Z)) * poly_k(XB(Z), Z), X, Y)
        il_f11 = _gl_band(lambda Z: spec.f11(Z, YB(Z)) * poly_l(XB(Z), Z), X, Y)
        c1y = np.asarray(spec.c1_fn(Y), dtype=float)
        c2y = np.asarray(spec.c2_fn(Y), dtype=float)
        res_k = (poly_k.dx(X, Y) + poly_k.dy(X, Y) + spec.f22(X, Y)
                 - ik_f22 - r * il_f12 - r * poly_l(X, Y) * c1y)
        res_l = (poly_l.dx(X, Y) - r * poly_l.dy(X, Y) + spec.f21(X, Y)
                 - ik_f21 - r * il_f11 - poly_k(X, Y) * c2y)
        out["k_pde"] = float(np.abs(res_k).max())
        out["l_pde"] = float(np.abs(res_l).max())
    else:
        x, h = ks.x, ks.h
        ng = len(x)
        X2, Y2 = np.meshgrid(x, x, indexing="ij")
        F11 = np.asarray(spec.f11(X2, Y2), dtype=float)
        F12 = np.asarray(spec.f12(X2, Y2), dtype=float)
        F21 = np.asarray(spec.f21(X2, Y2), dtype=float)
        F22 = np.asarray(spec.f22(X2, Y2), dtype=float)
        c1v = np.asarray(spec.c1_fn(x), dtype=float)
        c2v = np.asarray(spec.c2_fn(x), dtype=float)
        kx = np.gradient(ks.k, h, axis=0)
        ky = np.gradient(ks.k, h, axis=1)
        lx = np.gradient(ks.l, h, axis=0)
        ly = np.gradient(ks.l, h, axis=1)
        res_k = (kx + ky + F22 - band_integral(ks.k, F22, h)
                 - r * band_integral(ks.l, F12, h) - r * ks.l * c1v[None, :])
        res_l = (lx - r * ly + F21 - band_integral(ks.k, F21, h)
                 - r * band_integral(ks.l, F11, h) - ks.k * c2v[None, :])
        ii, jj = np.meshgrid(np.arange(ng), np.arange(ng), indexing="ij")
        interior = (jj >= 1) & (jj <= ii - 2) & (ii <= ng - 2)
        out["k_pde"] = float(np.abs(res_k[interior]).max()) if interior.any() else 0.0
        out["l_pde"] = float(np.abs(res_l[interior]).max()) if interior.any() else 0.0

    x, h = ks.x, ks.h
    # data rows
    diag_target = -spec.eps1 / (spec.eps1 + spec.eps2) \
        * np.asarray(spec.c2_fn(x), dtype=float)
    out["l_diag"] = float(np.abs(np.diagonal(ks.l) - diag_target).max())
    out["gamma0"] = float(np.abs(ks.gamma[0] + ks.K).max())

    W = volterra_weight_matrix(len(x), h)
    g1v = np.asarray(spec.g1(x), dtype=float)
    g2v = np.asarray(spec.g2(x), dtype=float)
    kb = (ks.k[:, 0] - r * ks.l[:, 0]
          + spec.eps2 * (ks.gamma @ np.asarray(spec.B, dtype=float))
          - (W * (ks.k * g2v[None, :] + r * ks.l * g1v[None, :])).sum(axis=1)
          + g2v)
    out["k_bnd"] = float(np.abs(kb).max())

    # gamma / Upsilon ODE residuals against freshly built tables
    l0h, IL1, IK2, IKG2, ILG1 = _tables_from_grids(spec, x, ks.k, ks.l)
    xh = half_grid(x)
    p_y0_h = np.interp(xh, x, ks.p_y0)
    g_ref = gamma_from_tables(spec, ks.K, x, l0h, IL1, IK2, p_y0_h)
    out["gamma_ode"] = float(np.abs(ks.gamma - g_ref).max())
    u_ref = upsilon_from_tables(spec, x, p_y0_h, IKG2, ILG1)
    out["upsilon_ode"] = float(np.abs(ks.Upsilon - u_ref).max())
    out["upsilon0"] = float(np.abs(ks.Upsilon[0]).max())

    # parabolic kernel: boundary rows, off-band interior equation, jump
    out["p_bnd"] = float(max(np.abs(ks.p[:, 0]).max(), np.abs(ks.p[:, -1]).max(),
                             np.abs(ks.p[0]).max()))
    out.update(_p_interior_residual(ks, spec))

    scale = max(1.0, np.abs(ks.k).max(), np.abs(ks.l).max())
    out["scale"] = scale
    out["k_pde_rel"] = out["k_pde"] / scale
    out["l_pde_rel"] = out["l_pde"] / scale
    return out


def _p_interior_residual(ks, spec, band=0.08):
    x, h = ks.x, ks.h
    ng = len(x)
    r = spec.eps2 / spec.eps1
    px = np.gradient(ks.p, h, axis=0)
    pyy = (ks.p[:, 2:] - 2.0 * ks.p[:, 1:-1] + ks.p[:, :-2]) / h ** 2
    X2, Y2 = np.meshgrid(x, x, indexing="ij")
    mu1y = np.asarray(spec.mu1(x), dtype=float)
    mu2y = np.asarray(spec.mu2(x), dtype=float)
    H = (r * ks.l * mu1y[None, :] + ks.k * mu2y[None, :]
         - np.asarray(spec.f23(X2, Y2), dtype=float)
         + band_integral(ks.k, np.asarray(spec.f23(X2, Y2), dtype=float), h)
         + r * band_integral(ks.l, np.asarray(spec.f13(X2, Y2), dtype=float), h))
    forcing = np.where(X2 > Y2, H, 0.0)
    res = px[:, 1:-1] - spec.eps2 * spec.kappa0 * pyy - forcing[:, 1:-1]
    mask = (np.abs(X2 - Y2)[:, 1:-1] >= band)
    mask[0, :] = mask[-1, :] = False
    p_smooth = float(np.abs(res[mask]).max()) if mask.any() else 0.0

    # jump of p_y across y = x versus mu2(x)/(eps2 kappa0)
    jumps = []
    target = mu2y / (spec.eps2 * spec.kappa0)
    for i in range(3, ng - 3):
        left = (3 * ks.p[i, i] - 4 * ks.p[i, i - 1] + ks.p[i, i - 2]) / (2 * h)
        right = (-3 * ks.p[i, i] + 4 * ks.p[i, i + 1] - ks.p[i, i + 2]) / (2 * h)
        jumps.append(right - left - target[i])
    tscale = max(1e-30, np.abs(target).max())
    p_jump_rel = float(np.abs(jumps).max() / tscale) if jumps else 0.0
    return {"p_smooth": p_smooth, "p_jump_rel": p_jump_rel}


def observer_kernel_residual(obsK: ObserverKernelSet, spec, mesh_n=31) -> dict:
    """Sup residuals of the observer-kernel equations and data rows."""
    r = spec.eps1 / spec.eps2
    out = {}
    poly_psi = obsK.meta.get("poly_psi")
    poly_phi = obsK.meta.get("poly_phi")
    if poly_psi is not None:
        X, Y = _poly_mesh(mesh_n)

        def XB(Z):
            return np.broadcast_to(X[:, None], Z.shape)

        def YB(Z):
            return np.broadcast_to(Y[:, None], Z.shape)

        i_f11_phi = _gl_band(lambda Z: spec.f11(XB(Z), Z) * poly_phi(Z, YB(Z)), X, Y)
        i_f12_psi = _gl_band(lambda Z: spec.f12(XB(Z), Z) * poly_psi(Z, YB(Z)), X, Y)
        i_f22_psi = _gl_band(lambda Z: spec.f22(XB(Z), Z) * poly_psi(Z, YB(Z)), X, Y)
        i_f21_phi = _gl_band(lambda Z: spec.f21(XB(Z), Z) * poly_phi(Z, YB(Z)), X, Y)
        c1x = np.asarray(spec.c1_fn(X), dtype=float)
        c2x = np.asarray(spec.c2_fn(X), dtype=float)
        res_phi = (poly_phi.dx(X, Y) - r * poly_phi.dy(X, Y)
                   - spec.f12(X, Y) - c1x * poly_psi(X, Y)
                   - i_f11_phi - i_f12_psi)
        res_psi = (poly_psi.dx(X, Y) + poly_psi.dy(X, Y)
                   + spec.f22(X, Y) + c2x * poly_phi(X, Y)
                   + i_f22_psi + i_f21_phi)
        out["phi_pde"] = float(np.abs(res_phi).max())
        out["psi_pde"] = float(np.abs(res_psi).max())
    else:
        x, h = obsK.x, obsK.h
        ng = len(x)
        X2, Y2 = np.meshgrid(x, x, indexing="ij")
        F11 = np.asarray(spec.f11(X2, Y2), dtype=float)
        F12 = np.asarray(spec.f12(X2, Y2), dtype=float)
        F21 = np.asarray(spec.f21(X2, Y2), dtype=float)
        F22 = np.asarray(spec.f22(X2, Y2), dtype=float)
        c1v = np.asarray(spec.c1_fn(x), dtype=float)
        c2v = np.asarray(spec.c2_fn(x), dtype=float)
        res_phi = (np.gradient(obsK.phi, h, axis=0) - r * np.gradient(obsK.phi, h, axis=1)
                   - F12 - c1v[:, None] * obsK.psi
                   - band_integral(F11, obsK.phi, h) - band_integral(F12, obsK.psi, h))
        res_psi = (np.gradient(obsK.psi, h, axis=0) + np.gradient(obsK.psi, h, axis=1)
                   + F22 + c2v[:, None] * obsK.phi
                   + band_integral(F22, obsK.psi, h) + band_integral(F21, obsK.phi, h))
        ii, jj = np.meshgrid(np.arange(ng), np.arange(ng), indexing="ij")
        interior = (jj >= 1) & (jj <= ii - 2) & (ii <= ng - 2)
        out["phi_pde"] = float(np.abs(res_phi[interior]).max()) if interior.any() else 0.0
        out["psi_pde"] = float(np.abs(res_psi[interior]).max()) if interior.any() else 0.0

    x, h = obsK.x, obsK.h
    diag_target = spec.eps1 / (spec.eps1 + spec.eps2) \
        * np.asarray(spec.c1_fn(x), dtype=float)
    out["phi_diag"] = float(np.abs(np.diagonal(obsK.phi) - diag_target).max())
    out["psi_edge"] = float(np.abs(obsK.psi1 + spec.q1 * obsK.phi1
                                   - spec.q0 * obsK.M).max())
    out["M_end"] = float(abs(obsK.M[-1] - spec.eps2 * (obsK.L_z / spec.q0
                                                       + spec.c1_scalar)))
    Mx = deriv_x(obsK.M, h)
    out["M_ode"] = float(np.abs(Mx[1:-1] + spec.eps2 * spec.c0 * obsK.M[1:-1]
                                + spec.eps2 * spec.c1_scalar
                                * obsK.psi1[1:-1]).max())
    scale = max(1.0, np.abs(obsK.psi).max(), np.abs(obsK.phi).max())
    out["scale"] = scale
    out["phi_pde_rel"] = out["phi_pde"] / scale
    out["psi_pde_rel"] = out["psi_pde"] / scale
    return out
