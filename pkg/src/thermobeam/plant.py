"""Data model and explicit finite-difference time stepping for the coupled
transport / heat / ODE plant

    zdot      = c0 z + c1 xi(1) + U
    eps1 eta_t = -eta_x + c1(x) xi + D1 X + int f12 xi + g1 xi(0)
                 + int f11 eta + mu1 u + int f13 u + G1 d
    eps2 xi_t  =  xi_x + c2(x) eta + D2 X + int f22 xi + g2 xi(0)
                 + int f21 eta + mu2 u + int f23 u + G2 d
    xi(1) = -q1 eta(1) + q0 z,   eta(0) = xi(0) + C X
    Xdot  = A X + B xi(0)
    u_t   = kappa0 u_xx,  u(0) = q d + p2 X,  u(1) = 0
    ddot  = Ad d

The hyperbolic pair is discretized with upwind differences (xi carries data
from x = 1, eta from x = 0), integral terms with trapezoid quadrature at the
old time level, the heat equation explicitly (or backward Euler on request),
and the X / d ODEs with the exact matrix exponential over one step.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .numerics import expm_with_forcing, volterra_weight_matrix


class PlantSpecError(ValueError):
    """A structural assumption on the plant data is violated."""


class DivergenceError(RuntimeError):
    """Raised when a simulation produces non-finite values."""

    def __init__(self, t):
        super().__init__(f"non-finite state detected at t = {t:.6f}")
        self.t = t


def _rank(mat):
    return np.linalg.matrix_rank(mat, tol=1e-9 * max(1.0, np.abs(mat).max()))


def controllable(A, B):
    A = np.atleast_2d(A)
    B = np.asarray(B, dtype=float).reshape(-1, 1)
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return _rank(np.hstack(blocks)) == n


def observable(A, C):
    return controllable(np.atleast_2d(A).T, np.asarray(C, dtype=float))


@dataclass(frozen=True)
class GeneralPlantSpec:
    """Coefficient bundle of the general plant.

    Scalar coefficients are plain floats, matrices are numpy arrays
    (B, C, p2_acute as 1-d vectors of length n, q_row of length m), and the
    coefficient functions are vectorized callables: c1_fn(x) etc. map a node
    array to samples, D1/D2 to (len(x), n), G1/G2 to (len(x), m), and the
    f_ij to arrays broadcast over meshgrids of (x, y).
    """

    eps1: float
    eps2: float
    c0: float
    c1_scalar: float
    q0: float
    q1: float
    kappa0: float
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    p2_acute: np.ndarray
    Ad: np.ndarray
    q_row: np.ndarray
    c1_fn: Callable = None
    c2_fn: Callable = None
    g1: Callable = None
    g2: Callable = None
    mu1: Callable = None
    mu2: Callable = None
    D1: Callable = None
    D2: Callable = None
    G1: Callable = None
    G2: Callable = None
    f11: Callable = None
    f12: Callable = None
    f13: Callable = None
    f21: Callable = None
    f22: Callable = None
    f23: Callable = None

    @property
    def n(self):
        return np.atleast_2d(self.A).shape[0]

    @property
    def m(self):
        return np.atleast_2d(self.Ad).shape[0]

    def validate(self):
        for name in ("eps1", "eps2", "kappa0"):
            if getattr(self, name) <= 0.0:
                raise PlantSpecError(f"{name} must be positive")
        if self.q1 == 0.0:
            raise PlantSpecError("q1 must be nonzero")
        if not controllable(self.A, self.B):
            raise PlantSpecError("(A, B) is not controllable")
        if not observable(self.A, self.C):
            raise PlantSpecError("(A, C) is not observable")
        if not observable(self.Ad, self.q_row):
            raise PlantSpecError("(Ad, q_row) is not observable")
        Ad = np.atleast_2d(self.Ad)
        lam, V = np.linalg.eig(Ad)
        scale = 1.0 + np.abs(Ad).max()
        if np.abs(lam.real).max() > 1e-9 * scale:
            raise PlantSpecError("Ad must have purely imaginary spectrum")
        if np.linalg.cond(V) > 1e12:
            raise PlantSpecError("Ad must be diagonalizable")
        return self


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on [0, 1] x [0, t_final]."""

    nx: int
    dt: float
    t_final: float

    @property
    def dx(self):
        return 1.0 / (self.nx - 1)

    @property
    def nt(self):
        return int(round(self.t_final / self.dt))

    @property
    def x(self):
        return np.linspace(0.0, 1.0, self.nx)

    def check(self, spec, heat_scheme="explicit"):
        lim = min(spec.eps1, spec.eps2) * self.dx
        if self.dt > lim + 1e-15:
            raise PlantSpecError(
                f"transport CFL violated: dt = {self.dt} > {lim:.6g}")
        if heat_scheme == "explicit":
            r = spec.kappa0 * self.dt / self.dx ** 2
            if r > 0.5 + 1e-12:
                raise PlantSpecError(
                    f"explicit heat scheme unstable: kappa0*dt/dx^2 = {r:.4f} > 1/2")


@dataclass
class PlantState:
    t: float
    z: float
    xi: np.ndarray
    eta: np.ndarray
    u: np.ndarray
    X: np.ndarray
    d: np.ndarray

    def copy(self):
        return PlantState(self.t, self.z, self.xi.copy(), self.eta.copy(),
                          self.u.copy(), self.X.copy(), self.d.copy())


def impose_boundaries(spec, state):
    """Overwrite the boundary nodes so the algebraic boundary relations hold.

    Applied to initial data before stepping; the stepper re-imposes the same
    relations after every update.
    """
    s = state.copy()
    s.xi[-1] = -spec.q1 * s.eta[-1] + spec.q0 * s.z
    s.eta[0] = s.xi[0] + float(np.dot(spec.C, s.X))
    s.u[0] = float(np.dot(spec.q_row, s.d) + np.dot(spec.p2_acute, s.X))
    s.u[-1] = 0.0
    return s


class PlantStepper:
    """Precomputed one-step update operator for a (spec, grid) pair."""

    def __init__(self, spec, grid, heat_scheme="explicit"):
        grid.check(spec, heat_scheme)
        self.spec = spec
        self.grid = grid
        self.heat_scheme = heat_scheme
        x = grid.x
        nx = grid.nx
        self.x = x

        self.c1v = np.asarray(spec.c1_fn(x), dtype=float)
        self.c2v = np.asarray(spec.c2_fn(x), dtype=float)
        self.g1v = np.asarray(spec.g1(x), dtype=float)
        self.g2v = np.asarray(spec.g2(x), dtype=float)
        self.mu1v = np.asarray(spec.mu1(x), dtype=float)
        self.mu2v = np.asarray(spec.mu2(x), dtype=float)
        self.D1v = np.asarray(spec.D1(x), dtype=float).reshape(nx, spec.n)
        self.D2v = np.asarray(spec.D2(x), dtype=float).reshape(nx, spec.n)
        self.G1v = np.asarray(spec.G1(x), dtype=float).reshape(nx, spec.m)
        self.G2v = np.asarray(spec.G2(x), dtype=float).reshape(nx, spec.m)

        W = volterra_weight_matrix(nx, grid.dx)
        X2, Y2 = np.meshgrid(x, x, indexing="ij")
        self.K11 = np.asarray(spec.f11(X2, Y2), dtype=float) * W
        self.K12 = np.asarray(spec.f12(X2, Y2), dtype=float) * W
        self.K13 = np.asarray(spec.f13(X2, Y2), dtype=float) * W
        self.K21 = np.asarray(spec.f21(X2, Y2), dtype=float) * W
        self.K22 = np.asarray(spec.f22(X2, Y2), dtype=float) * W
        self.K23 = np.asarray(spec.f23(X2, Y2), dtype=float) * W

        self.EX, self.MX = expm_with_forcing(spec.A, grid.dt)
        self.Ed, self.Md = expm_with_forcing(spec.Ad, grid.dt)

        self.r_heat = spec.kappa0 * grid.dt / grid.dx ** 2
        if heat_scheme == "implicit":
            # banded (I - dt kappa0 Lap) on interior nodes
            ni = nx - 2
            ab = np.zeros((3, ni))
            ab[0, 1:] = -self.r_heat
            ab[1, :] = 1.0 + 2.0 * self.r_heat
            ab[2, :-1] = -self.r_heat
            self._heat_band = ab

    # -- right-hand sides of the transport equations (old time level) -----
    def coupling_xi(self, state):
        return (self.c2v * state.eta + self.D2v @ state.X
                + self.K22 @ state.xi + self.g2v * state.xi[0]
                + self.K21 @ state.eta + self.mu2v * state.u
                + self.K23 @ state.u + self.G2v @ state.d)

    def coupling_eta(self, state):
        return (self.c1v * state.xi + self.D1v @ state.X
                + self.K12 @ state.xi + self.g1v * state.xi[0]
                + self.K11 @ state.eta + self.mu1v * state.u
                + self.K13 @ state.u + self.G1v @ state.d)

    def _transport_update(self, state, rhs_xi, rhs_eta):
        """Upwind interior update of the transport pair (boundaries are
        written afterwards); shared verbatim by the observer."""
        spec, grid = self.spec, self.grid
        dt, dx = grid.dt, grid.dx
        xi = state.xi.copy()
        eta = state.eta.copy()
        # xi carries information from x = 1: forward difference
        xi[:-1] = state.xi[:-1] + (dt / spec.eps2) * (
            (state.xi[1:] - state.xi[:-1]) / dx + rhs_xi[:-1])
        # eta carries information from x = 0: backward difference
        eta[1:] = state.eta[1:] + (dt / spec.eps1) * (
            -(state.eta[1:] - state.eta[:-1]) / dx + rhs_eta[1:])
        return xi, eta

    def _heat_update_value(self, u_old, u0_new):
        u = u_old.copy()
        if self.heat_scheme == "explicit":
            u[1:-1] = u_old[1:-1] + self.r_heat * (
                u_old[2:] - 2.0 * u_old[1:-1] + u_old[:-2])
        else:
            rhs = u_old[1:-1].copy()
            rhs[0] += self.r_heat * u0_new
            u[1:-1] = solve_banded((1, 1), self._heat_band, rhs)
        u[0] = u0_new
        u[-1] = 0.0
        return u

    def step(self, state, U):
        """Advance one time step."""
        spec, grid = self.spec, self.grid
        dt = grid.dt

        xi, eta = self._transport_update(state, self.coupling_xi(state),
                                         self.coupling_eta(state))
        z = state.z + dt * (spec.c0 * state.z + spec.c1_scalar * state.xi[-1] + U)
        X = self.EX @ state.X + self.MX @ (spec.B * state.xi[0])
        d = self.Ed @ state.d

        u0 = float(np.dot(spec.q_row, d) + np.dot(spec.p2_acute, X))
        u = self._heat_update_value(state.u, u0)

        xi[-1] = -spec.q1 * eta[-1] + spec.q0 * z
        eta[0] = xi[0] + float(np.dot(spec.C, X))

        new = PlantState(state.t + dt, z, xi, eta, u, X, d)
        if not (np.isfinite(z) and np.all(np.isfinite(xi))
                and np.all(np.isfinite(eta)) and np.all(np.isfinite(u))
                and np.all(np.isfinite(X)) and np.all(np.isfinite(d))):
            raise DivergenceError(new.t)
        return new


def step(spec, grid, state, U, heat_scheme="explicit"):
    """One explicit time step of the plant (convenience wrapper)."""
    return PlantStepper(spec, grid, heat_scheme).step(state, U)


@dataclass
class Trace:
    """Complete time history of a simulation run."""

    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    U: np.ndarray
    X: np.ndarray
    d: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    u: np.ndarray
    z_hat: Optional[np.ndarray] = None
    X_hat: Optional[np.ndarray] = None
    d_hat: Optional[np.ndarray] = None
    xi_hat: Optional[np.ndarray] = None
    eta_hat: Optional[np.ndarray] = None
    u_hat: Optional[np.ndarray] = None
    diverged: bool = False
    diverged_at: Optional[float] = None

    @property
    def nt(self):
        return len(self.t) - 1

    def state_at(self, k):
        return PlantState(self.t[k], self.z[k], self.xi[k].copy(),
                          self.eta[k].copy(), self.u[k].copy(),
                          self.X[k].copy(), self.d[k].copy())


def simulate(spec, grid, initial, controller=None, observer=None,
             heat_scheme="explicit"):
    """Run the plant (optionally with an attached observer) to t_final.

    controller: None for open loop, otherwise a callable
        controller(plant_state, observer_state_or_None) -> U.
    observer: an object with attributes  state  and a method
        step(meas_old, meas_new, U)  advancing its own copy of the plant
        (see thermobeam.observer.ObserverRun).

    Initial data are projected onto the boundary relations before the first
    step.  On divergence the partial trace is returned with the flag set.
    """
    stepper = PlantStepper(spec, grid, heat_scheme)
    nt, nx = grid.nt, grid.nx
    state = impose_boundaries(spec, initial)

    tr = Trace(
        t=np.linspace(0.0, nt * grid.dt, nt + 1), x=grid.x,
        z=np.zeros(nt + 1), U=np.zeros(nt + 1),
        X=np.zeros((nt + 1, spec.n)), d=np.zeros((nt + 1, spec.m)),
        xi=np.zeros((nt + 1, nx)), eta=np.zeros((nt + 1, nx)),
        u=np.zeros((nt + 1, nx)))
    if observer is not None:
        tr.z_hat = np.zeros(nt + 1)
        tr.X_hat = np.zeros((nt + 1, spec.n))
        tr.d_hat = np.zeros((nt + 1, spec.m))
        tr.xi_hat = np.zeros((nt + 1, nx))
        tr.eta_hat = np.zeros((nt + 1, nx))
        tr.u_hat = np.zeros((nt + 1, nx))

    def record(k, st, obs):
        tr.z[k] = st.z
        tr.X[k] = st.X
        tr.d[k] = st.d
        tr.xi[k] = st.xi
        tr.eta[k] = st.eta
        tr.u[k] = st.u
        if obs is not None:
            tr.z_hat[k] = obs.z
            tr.X_hat[k] = obs.X
            tr.d_hat[k] = obs.d
            tr.xi_hat[k] = obs.xi
            tr.eta_hat[k] = obs.eta
            tr.u_hat[k] = obs.u

    obs_state = None
    if observer is not None:
        obs_state = observer.start(measurements(spec, state))
    record(0, state, obs_state)
    for k in range(nt):
        U = 0.0 if controller is None else float(controller(state, obs_state))
        tr.U[k] = U
        try:
            new = stepper.step(state, U)
            if observer is not None:
                obs_state = observer.step(measurements(spec, state),
                                          measurements(spec, new), U)
        except DivergenceError as err:
            tr.diverged = True
            tr.diverged_at = err.t
            k_end = k + 1
            tr.t = tr.t[:k_end]
            for name in ("z", "U", "X", "d", "xi", "eta", "u", "z_hat",
                         "X_hat", "d_hat", "xi_hat", "eta_hat", "u_hat"):
                arr = getattr(tr, name)
                if arr is not None:
                    setattr(tr, name, arr[:k_end])
            return tr
        state = new
        record(k + 1, state, obs_state)
    tr.U[nt] = tr.U[nt - 1] if nt > 0 else 0.0
    return tr


def measurements(spec, state):
    """Boundary measurements available to the observer: xi(0), u(0), CX."""
    return (state.xi[0], state.u[0], float(np.dot(spec.C, state.X)))


def residual(spec, grid, trace):
    """Space-time L2 residual of every plant equation on a computed trace.

    Centered second-order stencils (independent of the upwind scheme) are
    used, so the residual measures the truncation error of the trace and
    vanishes at first order under grid refinement.
    """
    if len(trace.t) < 3:
        raise ValueError("trace too short for residual evaluation (need >= 3 levels)")
    # only the coupling tables are needed; skip the explicit-heat CFL check
    stepper = PlantStepper(spec, grid, heat_scheme="implicit")
    dt, dx = grid.dt, grid.dx
    nt = len(trace.t) - 1

    res = {k: [] for k in ("xi", "eta", "u", "z", "X", "d")}
    for nstep in range(1, nt):
        st = trace.state_at(nstep)
        rx = stepper.coupling_xi(st)
        re = stepper.coupling_eta(st)
        xi_t = (trace.xi[nstep + 1] - trace.xi[nstep - 1]) / (2 * dt)
        eta_t = (trace.eta[nstep + 1] - trace.eta[nstep - 1]) / (2 * dt)
        u_t = (trace.u[nstep + 1] - trace.u[nstep - 1]) / (2 * dt)
        xi_x = (trace.xi[nstep, 2:] - trace.xi[nstep, :-2]) / (2 * dx)
        eta_x = (trace.eta[nstep, 2:] - trace.eta[nstep, :-2]) / (2 * dx)
        u_xx = (trace.u[nstep, 2:] - 2 * trace.u[nstep, 1:-1]
                + trace.u[nstep, :-2]) / dx ** 2
        res["xi"].append(spec.eps2 * xi_t[1:-1] - xi_x - rx[1:-1])
        res["eta"].append(spec.eps1 * eta_t[1:-1] + eta_x - re[1:-1])
        res["u"].append(u_t[1:-1] - spec.kappa0 * u_xx)
        res["z"].append((trace.z[nstep + 1] - trace.z[nstep - 1]) / (2 * dt)
                        - (spec.c0 * trace.z[nstep]
                           + spec.c1_scalar * trace.xi[nstep, -1]
                           + trace.U[nstep]))
        res["X"].append((trace.X[nstep + 1] - trace.X[nstep - 1]) / (2 * dt)
                        - (np.atleast_2d(spec.A) @ trace.X[nstep]
                           + spec.B * trace.xi[nstep, 0]))
        res["d"].append((trace.d[nstep + 1] - trace.d[nstep - 1]) / (2 * dt)
                        - np.atleast_2d(spec.Ad) @ trace.d[nstep])

    out = {}
    for key, vals in res.items():
        arr = np.asarray(vals)
        out[key] = float(np.sqrt(np.mean(arr ** 2))) if arr.size else 0.0
    return out
