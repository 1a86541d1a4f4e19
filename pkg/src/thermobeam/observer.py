"""Extended-state observer: a copy of the plant driven by boundary output
error injections, estimating the distributed states and the disturbance.

Measured signals are xi(0,t), u(0,t) and CX(t).  The distributed injections
are -Gamma^xi(x) e0 and -Gamma^eta(x) e0 with e0 = xi_hat(0) - xi(0); the
rotor copy is injected with -Gamma^z e0, the tip ODE with -L_x C (Xhat - X),
and the disturbance model with -L_d (u_hat(0) - u(0)).  The field updates
reuse the plant discretization verbatim, so an observer started on the
plant state reproduces it to round-off.
"""

from dataclasses import dataclass, field

import numpy as np

from .control import SynthesisError, place_observer_gain
from .kernels.sets import ObserverKernelSet
from .numerics import h1_norm_sq, volterra_weight_matrix
from .plant import PlantState, PlantStepper

ObserverState = PlantState


@dataclass
class ObserverGainSet:
    """Boundary-injection gains of the observer."""

    L_z: float
    L_x: np.ndarray
    L_d: np.ndarray
    Gamma_z: float
    Gamma_eta: np.ndarray
    Gamma_xi: np.ndarray
    x: np.ndarray
    meta: dict = field(default_factory=dict)


def synthesize_observer_gains(spec, obsK: ObserverKernelSet, L_z,
                              x_poles=(-2.0,), d_poles=(-2.0, -3.0)) -> ObserverGainSet:
    """Injection gains from the observer kernels plus dual pole placement
    for the tip-ODE and disturbance estimators."""
    if L_z <= spec.c0:
        raise SynthesisError(f"L_z = {L_z} must exceed c0 = {spec.c0}")
    g1v = np.asarray(spec.g1(obsK.x), dtype=float)
    g2v = np.asarray(spec.g2(obsK.x), dtype=float)
    Gamma_z = obsK.M[0] / spec.eps2
    Gamma_eta = (spec.eps1 / spec.eps2) * obsK.phi_x0 + g1v
    Gamma_xi = obsK.psi_x0 + g2v
    L_x = place_observer_gain(spec.A, spec.C, np.asarray(x_poles))
    L_d = place_observer_gain(spec.Ad, spec.q_row, np.asarray(d_poles))
    for name, Acl in (("A - L_x C", np.atleast_2d(spec.A) - np.outer(L_x, spec.C)),
                      ("Ad - L_d q", np.atleast_2d(spec.Ad) - np.outer(L_d, spec.q_row))):
        if np.max(np.linalg.eigvals(Acl).real) >= 0.0:
            raise SynthesisError(f"{name} is not Hurwitz")
    return ObserverGainSet(L_z=L_z, L_x=L_x, L_d=L_d, Gamma_z=Gamma_z,
                           Gamma_eta=Gamma_eta, Gamma_xi=Gamma_xi, x=obsK.x)


class ObserverRun:
    """Observer state plus its stepping rule, suitable for attaching to
    plant.simulate.  Measurement tuples are (xi0, u0, CX)."""

    def __init__(self, spec, grid, gains: ObserverGainSet, initial: PlantState,
                 heat_scheme="explicit"):
        self.spec = spec
        self.grid = grid
        self.gains = gains
        self.stepper = PlantStepper(spec, grid, heat_scheme)
        self.Gxi = np.interp(grid.x, gains.x, gains.Gamma_xi)
        self.Geta = np.interp(grid.x, gains.x, gains.Gamma_eta)
        self.state = initial.copy()
        self._started = False

    def start(self, meas):
        """Project the initial observer state onto its boundary relations
        using the initial plant measurements."""
        xi0, u0, CX = meas
        s = self.state
        s.xi[-1] = -self.spec.q1 * s.eta[-1] + self.spec.q0 * s.z
        s.eta[0] = xi0 + CX
        s.u[0] = float(np.dot(self.spec.q_row, s.d)
                       + np.dot(self.spec.p2_acute, s.X))
        s.u[-1] = 0.0
        self._started = True
        return self.state

    def step(self, meas_old, meas_new, U):
        spec, grid, st = self.spec, self.grid, self.stepper
        obs = self.state
        xi0_m, u0_m, CX_m = meas_old
        e0 = obs.xi[0] - xi0_m

        rhs_xi = st.coupling_xi(obs) - self.Gxi * e0
        rhs_eta = st.coupling_eta(obs) - self.Geta * e0
        xi, eta = st._transport_update(obs, rhs_xi, rhs_eta)

        z = obs.z + grid.dt * (spec.c0 * obs.z + spec.c1_scalar * obs.xi[-1]
                               - self.gains.Gamma_z * e0 + U)
        wX = -self.gains.L_x * (float(np.dot(spec.C, obs.X)) - CX_m)
        X = st.EX @ obs.X + st.MX @ (spec.B * xi0_m + wX)
        wd = -self.gains.L_d * (obs.u[0] - u0_m)
        d = st.Ed @ obs.d + st.Md @ wd

        u0_new = float(np.dot(spec.q_row, d) + np.dot(spec.p2_acute, X))
        u = st._heat_update_value(obs.u, u0_new)

        xi[-1] = -spec.q1 * eta[-1] + spec.q0 * z
        xi0_new, _, CX_new = meas_new
        eta[0] = xi0_new + CX_new

        self.state = PlantState(obs.t + grid.dt, z, xi, eta, u, X, d)
        return self.state


def observer_step(spec, grid, obs, meas_old, meas_new, U,
                  gains: ObserverGainSet, heat_scheme="explicit"):
    """One observer step (convenience wrapper around ObserverRun)."""
    run = ObserverRun(spec, grid, gains, obs, heat_scheme)
    return run.step(meas_old, meas_new, U)


def error_norm_Omega_e(plant_state: PlantState, obs_state: PlantState,
                       grid) -> float:
    """|z~|^2 + ||eta~||_H1^2 + ||xi~||_H1^2 + |X~|^2 + ||u~||_H1^2 + |d~|^2."""
    if len(plant_state.xi) != len(obs_state.xi):
        raise ValueError("plant and observer grids differ")
    dx = grid.dx
    return float(
        (obs_state.z - plant_state.z) ** 2
        + h1_norm_sq(obs_state.eta - plant_state.eta, dx)
        + h1_norm_sq(obs_state.xi - plant_state.xi, dx)
        + np.sum((obs_state.X - plant_state.X) ** 2)
        + h1_norm_sq(obs_state.u - plant_state.u, dx)
        + np.sum((obs_state.d - plant_state.d) ** 2))


@dataclass
class ObserverTargetCoeffs:
    """Coefficient fields of the transformed observer-error system."""

    x: np.ndarray
    G1cal: np.ndarray
    G3cal: np.ndarray
    S11: np.ndarray
    S13: np.ndarray
    S21: np.ndarray
    S23: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    N3: np.ndarray
    N4: np.ndarray


def _volterra_march(psi, free, h):
    """Solve S(x,y) = free(x,y) - int_y^x psi(x,z) S(z,y) dz by marching in x
    (free and S share the lower-triangle layout)."""
    ng = psi.shape[0]
    S = np.zeros_like(free)
    for j in range(ng):
        S[j, j] = free[j, j]
        for i in range(j + 1, ng):
            w = np.full(i - j + 1, h)
            w[0] = w[-1] = 0.5 * h
            acc = np.dot(w[:-1] * psi[i, j:i], S[j:i, j])
            S[i, j] = (free[i, j] - acc) / (1.0 + w[-1] * psi[i, i])
    return S


def _volterra_march_rows(psi, free_rows, h):
    """Row-valued variant: N(x) = free(x) - int_0^x psi(x,y) N(y) dy."""
    ng = psi.shape[0]
    N = np.zeros_like(free_rows)
    N[0] = free_rows[0]
    for i in range(1, ng):
        w = np.full(i + 1, h)
        w[0] = w[-1] = 0.5 * h
        acc = (w[:-1, None] * psi[i, :i, None] * N[:i]).sum(axis=0)
        N[i] = (free_rows[i] - acc) / (1.0 + w[-1] * psi[i, i])
    return N


def compute_observer_target_coeffs(spec, obsK: ObserverKernelSet) -> ObserverTargetCoeffs:
    from .kernels.common import band_integral, suffix_band_integral

    x, h = obsK.x, obsK.h
    ng = len(x)
    X2, Y2 = np.meshgrid(x, x, indexing="ij")
    r = spec.eps1 / spec.eps2
    c2y = np.asarray(spec.c2_fn(x), dtype=float)
    mu2y = np.asarray(spec.mu2(x), dtype=float)
    W = volterra_weight_matrix(ng, h)

    S21 = _volterra_march(obsK.psi,
                          np.asarray(spec.f21(X2, Y2), dtype=float)
                          - c2y[None, :] * obsK.psi, h)
    S23 = _volterra_march(obsK.psi,
                          np.asarray(spec.f23(X2, Y2), dtype=float)
                          - mu2y[None, :] * obsK.psi, h)
    S11 = (np.asarray(spec.f11(X2, Y2), dtype=float)
           - r * c2y[None, :] * obsK.phi - r * band_integral(obsK.phi, S21, h))
    S13 = (np.asarray(spec.f13(X2, Y2), dtype=float)
           - r * mu2y[None, :] * obsK.phi - r * band_integral(obsK.phi, S23, h))
    for arr in (S21, S23, S11, S13):
        arr[np.triu_indices(ng, 1)] = 0.0

    D1v = np.asarray(spec.D1(x), dtype=float).reshape(ng, spec.n)
    D2v = np.asarray(spec.D2(x), dtype=float).reshape(ng, spec.n)
    G1v = np.asarray(spec.G1(x), dtype=float).reshape(ng, spec.m)
    G2v = np.asarray(spec.G2(x), dtype=float).reshape(ng, spec.m)
    N2 = _volterra_march_rows(obsK.psi, D2v, h)
    N4 = _volterra_march_rows(obsK.psi, G2v, h)
    N1 = D1v - r * (W * obsK.phi) @ N2
    N3 = G1v - r * (W * obsK.phi) @ N4

    G1cal = -(obsK.M * c2y + suffix_band_integral(S21 * obsK.M[:, None], h)) / spec.eps2
    G3cal = -(obsK.M * mu2y + suffix_band_integral(S23 * obsK.M[:, None], h)) / spec.eps2
    return ObserverTargetCoeffs(x=x, G1cal=G1cal, G3cal=G3cal, S11=S11,
                                S13=S13, S21=S21, S23=S23,
                                N1=N1, N2=N2, N3=N3, N4=N4)
