"""Observer kernels (psi, phi) and the boundary weight M.

On the working triangle {0 <= y <= x <= 1} the kernels satisfy

    phi_x - (eps1/eps2) phi_y = f12(x,y) + c1(x) psi(x,y)
                                + int_y^x [f11(x,z) phi(z,y) + f12(x,z) psi(z,y)] dz
    psi_x + psi_y            = -f22(x,y) - c2(x) phi(x,y)
                                - int_y^x [f22(x,z) psi(z,y) + f21(x,z) phi(z,y)] dz
    phi(x,x) = eps1 c1(x) / (eps1 + eps2)
    psi(1,y) = -q1 phi(1,y) + q0 M(y)
    M'(x) + eps2 c0 M(x) + eps2 c1 psi(1,x) = 0,  M(1) = eps2 (L_z/q0 + c1)

(c1 in the M equations is the scalar rotor coupling).  phi propagates from
the diagonal, psi backward from the x = 1 edge; the psi <-> M boundary
coupling is resolved by fixed-point sweeps and disappears for c1 = 0, where
M(x) = M(1) exp(eps2 c0 (1-x)) explicitly.

``solve_observer_kernels`` uses the same least-squares polynomial
collocation as the control kernels; ``solve_observer_kernels_iterative``
integrates along characteristics on the grid.
"""

import numpy as np

from ..numerics import gauss_legendre
from .common import (ConvergenceError, PolyKernel, TriPolyBasis, band_integral,
                     cheb_nodes, char_from_diagonal, char_from_right,
                     kernel_grid, reflect_upper, zero_upper)
from .control import half_grid
from .sets import ObserverKernelSet


def gain_condition_ok(spec, L_z):
    return L_z > spec.c0


def solve_M(spec, L_z, x, psi1=None):
    """Backward integration of the M equation on the grid; psi1 is the
    current psi(1, .) sample (zero coupling when c1_scalar = 0)."""
    if not gain_condition_ok(spec, L_z):
        raise ConvergenceError(f"observer gain condition violated: "
                               f"L_z = {L_z} <= c0 = {spec.c0}")
    M1 = spec.eps2 * (L_z / spec.q0 + spec.c1_scalar)
    if psi1 is None or spec.c1_scalar == 0.0:
        return M1 * np.exp(spec.eps2 * spec.c0 * (1.0 - x))
    # M(x) = M(1) e^{eps2 c0 (1-x)} + int_x^1 e^{eps2 c0 (s-x)} eps2 c1 psi(1,s) ds
    xh = half_grid(x)
    psi1_h = np.interp(xh, x, psi1)
    M = np.empty(len(x))
    M[-1] = M1
    h = x[1] - x[0]
    a = spec.eps2 * spec.c0
    g = spec.eps2 * spec.c1_scalar * psi1_h
    for i in range(len(x) - 2, -1, -1):
        # RK4 for M' = -(a M + g(x)) integrated backward with step -h
        def rhs(ih, m):
            return -(a * m + g[ih])
        k1 = rhs(2 * i + 2, M[i + 1])
        k2 = rhs(2 * i + 1, M[i + 1] - 0.5 * h * k1)
        k3 = rhs(2 * i + 1, M[i + 1] - 0.5 * h * k2)
        k4 = rhs(2 * i, M[i + 1] - h * k3)
        M[i] = M[i + 1] - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return M


def solve_observer_kernels(spec, L_z, degree=10, tol=1e-8, max_sweeps=30,
                           grid_n=201, colloc_n=24, quad_n=20,
                           data_weight=1e6) -> ObserverKernelSet:
    """Observer kernels by least-squares polynomial collocation."""
    basis = TriPolyBasis(degree)
    nb = basis.size
    r = spec.eps1 / spec.eps2
    zq, wq = gauss_legendre(quad_n)

    u = cheb_nodes(colloc_n)
    Xc = np.repeat(u, colloc_n)
    Yc = (cheb_nodes(colloc_n)[None, :] * u[:, None]).ravel()
    span = Xc - Yc
    Z = Yc[:, None] + span[:, None] * zq[None, :]
    ZY = np.broadcast_to(Yc[:, None], Z.shape)
    XcB = np.broadcast_to(Xc[:, None], Z.shape)
    wts = span[:, None] * wq[None, :]
    Bzy = basis.eval(Z, ZY)                       # basis(z, y) under the integral

    def band_rows(fvals):
        return np.einsum("pq,pqn->pn", wts * fvals, Bzy)

    Bv = basis.eval(Xc, Yc)
    Bx = basis.eval_dx(Xc, Yc)
    By = basis.eval_dy(Xc, Yc)
    c1x = np.asarray(spec.c1_fn(Xc), dtype=float)
    c2x = np.asarray(spec.c2_fn(Xc), dtype=float)

    # phi rows:  phi_x - r phi_y - int f11(x,z) phi(z,y) - c1(x) psi - int f12(x,z) psi(z,y) = f12(x,y)
    rows_P_phi = Bx - r * By - band_rows(np.asarray(spec.f11(XcB, Z), dtype=float))
    rows_P_psi = -(c1x[:, None] * Bv) - band_rows(np.asarray(spec.f12(XcB, Z), dtype=float))
    rhs_P = np.asarray(spec.f12(Xc, Yc), dtype=float)

    # psi rows:  psi_x + psi_y + c2(x) phi + int f22 psi + int f21 phi = -f22(x,y)
    rows_S_psi = Bx + By + band_rows(np.asarray(spec.f22(XcB, Z), dtype=float))
    rows_S_phi = c2x[:, None] * Bv + band_rows(np.asarray(spec.f21(XcB, Z), dtype=float))
    rhs_S = -np.asarray(spec.f22(Xc, Yc), dtype=float)

    xb = cheb_nodes(max(2 * degree + 3, colloc_n))
    rows_D_phi = data_weight * basis.eval(xb, xb)
    rhs_D = data_weight * (spec.eps1 / (spec.eps1 + spec.eps2)
                           * np.asarray(spec.c1_fn(xb), dtype=float))
    ones_b = np.ones_like(xb)
    rows_E_psi = data_weight * basis.eval(ones_b, xb)
    rows_E_phi = data_weight * spec.q1 * basis.eval(ones_b, xb)

    zp = np.zeros((len(xb), nb))
    A_mat = np.vstack([
        np.hstack([rows_P_psi, rows_P_phi]),
        np.hstack([rows_S_psi, rows_S_phi]),
        np.hstack([zp, rows_D_phi]),
        np.hstack([rows_E_psi, rows_E_phi]),
    ])

    x, _ = kernel_grid(grid_n)
    M = solve_M(spec, L_z, x)
    psi_poly = PolyKernel(basis, np.zeros(nb))
    phi_poly = PolyKernel(basis, np.zeros(nb))
    prev = None
    delta = np.inf
    for sweep in range(1, max_sweeps + 1):
        if spec.c1_scalar == 0.0:
            Mb = solve_M(spec, L_z, xb)       # explicit, exact at the nodes
        else:
            from scipy.interpolate import CubicSpline
            Mb = CubicSpline(x, M)(xb)
        rhs_E = data_weight * spec.q0 * Mb
        rhs = np.concatenate([rhs_P, rhs_S, rhs_D, rhs_E])
        coef, *_ = np.linalg.lstsq(A_mat, rhs, rcond=None)
        psi_poly = PolyKernel(basis, coef[:nb])
        phi_poly = PolyKernel(basis, coef[nb:])
        M = solve_M(spec, L_z, x, psi1=psi_poly(np.ones_like(x), x))
        cur = np.concatenate([coef, M])
        if prev is not None:
            delta = np.max(np.abs(cur - prev)) / (1.0 + np.max(np.abs(cur)))
            if delta <= tol:
                break
        prev = cur
    else:
        raise ConvergenceError(
            f"observer kernel fixed point not converged ({delta:.2e})")

    X2, Y2 = np.meshgrid(x, x, indexing="ij")
    return ObserverKernelSet(
        x=x, psi=zero_upper(psi_poly(X2, Y2)), phi=zero_upper(phi_poly(X2, Y2)),
        M=M, L_z=L_z, method="series",
        meta={"degree": degree, "poly_psi": psi_poly, "poly_phi": phi_poly,
              "delta": delta})


def solve_observer_kernels_iterative(spec, L_z, m_iter=60, tol=1e-8,
                                     grid_n=121) -> ObserverKernelSet:
    """Observer kernels by full-forcing sweeps along characteristic lines."""
    x, h = kernel_grid(grid_n)
    ng = len(x)
    r = spec.eps1 / spec.eps2
    X2, Y2 = np.meshgrid(x, x, indexing="ij")
    F11 = np.asarray(spec.f11(X2, Y2), dtype=float)
    F12 = np.asarray(spec.f12(X2, Y2), dtype=float)
    F21 = np.asarray(spec.f21(X2, Y2), dtype=float)
    F22 = np.asarray(spec.f22(X2, Y2), dtype=float)
    c1v = np.asarray(spec.c1_fn(x), dtype=float)
    c2v = np.asarray(spec.c2_fn(x), dtype=float)

    def phi_diag(s):
        return (spec.eps1 / (spec.eps1 + spec.eps2)
                * np.asarray(spec.c1_fn(s), dtype=float))

    psi = np.zeros((ng, ng))
    phi = np.zeros((ng, ng))
    M = solve_M(spec, L_z, x)
    prev = None
    delta = np.inf
    for sweep in range(1, m_iter + 1):
        # integral terms carry the unknown kernels at (z, y), f's at (x, z)
        rhs_phi = (c1v[:, None] * psi + F12
                   + band_integral(F11, phi, h) + band_integral(F12, psi, h))
        phi_new = char_from_diagonal(reflect_upper(rhs_phi), x, r, phi_diag)
        psi1 = -spec.q1 * phi_new[-1] + spec.q0 * M
        rhs_psi = -(F22 + c2v[:, None] * phi_new
                    + band_integral(F22, psi, h) + band_integral(F21, phi_new, h))
        psi_new = char_from_right(reflect_upper(rhs_psi), x,
                                  lambda yy: np.interp(yy, x, psi1))
        M = solve_M(spec, L_z, x, psi1=psi_new[-1])

        cur = np.concatenate([psi_new.ravel(), phi_new.ravel(), M])
        if prev is not None:
            delta = np.max(np.abs(cur - prev)) / (1.0 + np.max(np.abs(cur)))
            if delta <= tol:
                psi, phi = psi_new, phi_new
                break
        prev = cur
        psi, phi = psi_new, phi_new
    else:
        raise ConvergenceError(
            f"observer kernel sweeps not converged after {m_iter} "
            f"(last change {delta:.2e})")

    return ObserverKernelSet(x=x, psi=psi, phi=phi, M=M, L_z=L_z,
                             method="iterative",
                             meta={"sweeps": sweep, "delta": delta})
