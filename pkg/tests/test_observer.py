"""Observer: gain synthesis, plant-lock, error-system oracle, error norms
and transformed-coefficient reductions."""

import numpy as np
import pytest

from conftest import const_fn, make_zero_spec, row_fn
from thermobeam.control import SynthesisError
from thermobeam.kernels import solve_observer_kernels
from thermobeam.numerics import volterra_weight_matrix
from thermobeam.observer import (ObserverRun, compute_observer_target_coeffs,
                                 error_norm_Omega_e, synthesize_observer_gains)
from thermobeam.plant import (Grid, PlantState, impose_boundaries,
                              measurements, simulate)


def test_gain_formulas(blade, blade_observer):
    _, _, spec = blade
    _, obsK, og = blade_observer
    assert og.Gamma_z == pytest.approx(obsK.M[0] / spec.eps2, rel=1e-12)
    want_eta = spec.eps1 / spec.eps2 * obsK.phi_x0 + spec.g1(obsK.x)
    want_xi = obsK.psi_x0 + spec.g2(obsK.x)
    assert np.allclose(og.Gamma_eta, want_eta)
    assert np.allclose(og.Gamma_xi, want_xi)


def test_dual_placement_spectrum(blade_observer):
    spec, obsK, og = blade_observer
    lam = np.linalg.eigvals(spec.Ad - np.outer(og.L_d, spec.q_row))
    assert np.allclose(sorted(lam.real), [-3.0, -2.0], atol=1e-8)
    assert np.abs(lam.imag).max() < 1e-8
    lamx = np.linalg.eigvals(np.atleast_2d(spec.A) - np.outer(og.L_x, spec.C))
    assert lamx[0].real == pytest.approx(-2.0, abs=1e-8)


def test_gain_condition_rejected(blade_observer):
    spec, obsK, og = blade_observer
    with pytest.raises(SynthesisError, match="L_z"):
        synthesize_observer_gains(spec, obsK, spec.c0 / 2.0)


def test_exact_copy_lock(blade, blade_design, blade_observer):
    # observer initialized on the plant state follows it to round-off
    _, _, spec = blade
    _, _, _, gains = blade_design
    _, _, og = blade_observer
    from thermobeam.control import output_feedback_U, state_feedback_U
    grid = Grid(nx=21, dt=1e-3, t_final=1.0)
    x = grid.x
    rng = np.random.default_rng(2)
    st = impose_boundaries(spec, PlantState(
        0.0, 0.5, np.sin(2 * np.pi * x), 0.5 * np.sin(np.pi * x),
        0.1 * np.sin(np.pi * x), np.array([0.7]), np.array([2.0, -1.0])))
    obs = ObserverRun(spec, grid, og, st.copy())
    tr = simulate(spec, grid, st,
                  lambda s, o: output_feedback_U(s.xi[0], o, gains, grid),
                  observer=obs)
    err = max(np.abs(tr.xi - tr.xi_hat).max(), np.abs(tr.eta - tr.eta_hat).max(),
              np.abs(tr.u - tr.u_hat).max(), np.abs(tr.X - tr.X_hat).max(),
              np.abs(tr.d - tr.d_hat).max(), np.abs(tr.z - tr.z_hat).max())
    assert err <= 1e-9
    # controller consistency along the locked run
    for k in range(0, len(tr.t), 100):
        s = tr.state_at(k)
        o = PlantState(tr.t[k], tr.z_hat[k], tr.xi_hat[k], tr.eta_hat[k],
                       tr.u_hat[k], tr.X_hat[k], tr.d_hat[k])
        U = state_feedback_U(s, gains, grid)
        U_of = output_feedback_U(s.xi[0], o, gains, grid)
        assert abs(U_of - U) <= 1e-9 * (1 + abs(U))


def test_error_system_oracle(blade, blade_observer):
    # zero plant, zero measurements: the observer state IS the error state;
    # an independently coded error-system step must reproduce it
    _, _, spec = blade
    _, _, og = blade_observer
    grid = Grid(nx=21, dt=1e-3, t_final=0.2)
    x = grid.x
    nx = grid.nx
    rng = np.random.default_rng(21)
    obs0 = PlantState(0.0, 0.3, rng.normal(size=nx), rng.normal(size=nx),
                      rng.normal(size=nx), np.array([0.5]),
                      np.array([1.0, -0.5]))
    zero_plant = PlantState(0.0, 0.0, np.zeros(nx), np.zeros(nx),
                            np.zeros(nx), np.zeros(1), np.zeros(2))
    meas0 = measurements(spec, zero_plant)
    run = ObserverRun(spec, grid, og, obs0)
    run.start(meas0)

    # independent explicit coding of the injected error dynamics
    from scipy.linalg import expm
    from thermobeam.numerics import expm_with_forcing
    dt, dx = grid.dt, grid.dx
    W = volterra_weight_matrix(nx, dx)
    X2, Y2 = np.meshgrid(x, x, indexing="ij")
    K11, K12 = spec.f11(X2, Y2) * W, spec.f12(X2, Y2) * W
    K13, K21 = spec.f13(X2, Y2) * W, spec.f21(X2, Y2) * W
    K22, K23 = spec.f22(X2, Y2) * W, spec.f23(X2, Y2) * W
    c1v, c2v = spec.c1_fn(x), spec.c2_fn(x)
    g1v, g2v = spec.g1(x), spec.g2(x)
    mu1v, mu2v = spec.mu1(x), spec.mu2(x)
    D1v = spec.D1(x).reshape(nx, 1)
    D2v = spec.D2(x).reshape(nx, 1)
    G1v = spec.G1(x).reshape(nx, 2)
    G2v = spec.G2(x).reshape(nx, 2)
    Gxi = np.interp(x, og.x, og.Gamma_xi)
    Geta = np.interp(x, og.x, og.Gamma_eta)
    EX, MX = expm_with_forcing(spec.A, dt)
    Ed, Md = expm_with_forcing(spec.Ad, dt)

    st = run.state.copy()
    for _ in range(int(round(grid.t_final / dt))):
        e0 = st.xi[0]
        rxi = (c2v * st.eta + D2v @ st.X + K22 @ st.xi + g2v * st.xi[0]
               + K21 @ st.eta + mu2v * st.u + K23 @ st.u + G2v @ st.d
               - Gxi * e0)
        reta = (c1v * st.xi + D1v @ st.X + K12 @ st.xi + g1v * st.xi[0]
                + K11 @ st.eta + mu1v * st.u + K13 @ st.u + G1v @ st.d
                - Geta * e0)
        xi = st.xi.copy()
        eta = st.eta.copy()
        xi[:-1] += (dt / spec.eps2) * ((st.xi[1:] - st.xi[:-1]) / dx + rxi[:-1])
        eta[1:] += (dt / spec.eps1) * (-(st.eta[1:] - st.eta[:-1]) / dx
                                       + reta[1:])
        z = st.z + dt * (spec.c0 * st.z + spec.c1_scalar * st.xi[-1]
                         - og.Gamma_z * e0)
        X = EX @ st.X + MX @ (-og.L_x * float(spec.C @ st.X))
        d = Ed @ st.d + Md @ (-og.L_d * st.u[0])
        u0 = float(spec.q_row @ d + spec.p2_acute @ X)
        u = st.u.copy()
        r = spec.kappa0 * dt / dx ** 2
        u[1:-1] = st.u[1:-1] + r * (st.u[2:] - 2 * st.u[1:-1] + st.u[:-2])
        u[0], u[-1] = u0, 0.0
        xi[-1] = -spec.q1 * eta[-1] + spec.q0 * z
        eta[0] = 0.0
        st = PlantState(st.t + dt, z, xi, eta, u, X, d)
        got = run.step(meas0, meas0, 0.0)
    assert np.abs(got.xi - st.xi).max() < 1e-12
    assert np.abs(got.eta - st.eta).max() < 1e-12
    assert np.abs(got.u - st.u).max() < 1e-12
    assert got.z == pytest.approx(st.z, abs=1e-12)


def test_omega_e_values(blade):
    _, _, spec = blade
    grid = Grid(nx=21, dt=1e-3, t_final=1.0)
    nx = grid.nx
    st = PlantState(0.0, 0.2, np.ones(nx), np.ones(nx), np.ones(nx),
                    np.array([0.3]), np.array([1.0, 2.0]))
    assert error_norm_Omega_e(st, st.copy(), grid) == 0.0
    obs = st.copy()
    obs.z = st.z + 1.0
    assert error_norm_Omega_e(st, obs, grid) == pytest.approx(1.0)
    # hand quadrature of a sine offset: ||sin||^2 + ||(sin)'||^2
    obs = st.copy()
    obs.xi = st.xi + np.sin(2 * np.pi * grid.x)
    from thermobeam.numerics import h1_norm_sq
    want = h1_norm_sq(np.sin(2 * np.pi * grid.x), grid.dx)
    assert error_norm_Omega_e(st, obs, grid) == pytest.approx(want, rel=1e-12)


def test_observer_target_coeff_reductions():
    # with psi = phi = 0 the Volterra relations collapse:
    # N2 = D2, N1 = D1, G1cal = -M c2 / eps2
    from thermobeam.kernels.sets import ObserverKernelSet
    ng = 41
    x = np.linspace(0, 1, ng)
    spec = make_zero_spec(validate=True, C=np.array([0.8]), c1_scalar=0.0,
                          D1=row_fn([0.6]), D2=row_fn([0.9]),
                          c2_fn=const_fn(0.7))
    M = 1.0 + 0.5 * x
    obsK = ObserverKernelSet(x=x, psi=np.zeros((ng, ng)),
                             phi=np.zeros((ng, ng)), M=M, L_z=1.0)
    tc = compute_observer_target_coeffs(spec, obsK)
    assert np.allclose(tc.N2, 0.9, atol=1e-12)
    assert np.allclose(tc.N1, 0.6, atol=1e-12)
    assert np.allclose(tc.G1cal, -M * 0.7 / spec.eps2, atol=1e-12)


def test_observer_target_volterra_resolvent():
    # constant psi and D2: N2 solves N2 = D2 - psibar int_0^x N2, so
    # N2(x) = D2 exp(-psibar x)
    from thermobeam.kernels.sets import ObserverKernelSet
    ng = 401
    x = np.linspace(0, 1, ng)
    psibar, d2 = 0.8, 1.3
    spec = make_zero_spec(validate=True, C=np.array([0.8]),
                          D2=row_fn([d2]))
    obsK = ObserverKernelSet(
        x=x, psi=np.tril(np.full((ng, ng), psibar)),
        phi=np.zeros((ng, ng)), M=np.ones(ng), L_z=1.0)
    tc = compute_observer_target_coeffs(spec, obsK)
    oracle = d2 * np.exp(-psibar * x)
    assert np.abs(tc.N2[:, 0] - oracle).max() < 1e-6
