"""Gain synthesis: pole placement, target coefficients, boundary-identity
gains, the feedback laws and the decay-parameter certificate."""

import numpy as np
import pytest

from conftest import const_fn, make_toy_spec, make_zero_spec, row_fn
from thermobeam.control import (SynthesisError, check_c1, compute_h_gains,
                                compute_n_gains, compute_target_coeffs,
                                output_feedback_U, place_poles,
                                state_feedback_U, synthesize_gains)
from thermobeam.kernels import (solve_control_kernels_series,
                                solve_inverse_kernels)
from thermobeam.numerics import trapezoid_weights, deriv_x, one_sided_deriv_end
from thermobeam.plant import Grid, PlantState


def test_place_poles_scalar():
    K = place_poles(np.array([[0.7]]), np.array([2.0]), [-3.0])
    assert K[0] == pytest.approx((-3.0 - 0.7) / 2.0)


def test_place_poles_companion():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([0.0, 1.0])
    K = place_poles(A, B, [-1.0, -2.0])
    assert np.allclose(K, [-2.0, -3.0])
    assert np.allclose(sorted(np.linalg.eigvals(A + np.outer(B, K)).real),
                       [-2.0, -1.0], atol=1e-10)


def test_place_poles_identity_when_already_placed():
    # desired = spectrum(A): Cayley-Hamilton makes phi(A) = 0, so K = 0
    A = np.array([[-1.0, 0.3], [0.0, -2.0]])
    B = np.array([0.5, 1.0])
    K = place_poles(A, B, np.linalg.eigvals(A))
    assert np.abs(K).max() <= 1e-8


def test_place_poles_validation():
    with pytest.raises(SynthesisError, match="conjugation"):
        place_poles(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([0.0, 1.0]),
                    [-1.0 + 1j, -2.0])
    with pytest.raises(SynthesisError, match="controllable"):
        place_poles(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([1.0, 0.0]),
                    [-1.0, -2.0])


@pytest.fixture(scope="module")
def toy_design():
    spec = make_toy_spec()
    K = place_poles(spec.A, spec.B, [-1.5])
    ks = solve_control_kernels_series(spec, K, degree=8, grid_n=121)
    inv = solve_inverse_kernels(ks)
    gains = synthesize_gains(spec, ks, inv, c1_acute=3.0)
    return spec, ks, inv, gains


def test_target_coeffs_zero_inverse():
    spec = make_toy_spec()
    ks = solve_control_kernels_series(make_zero_spec(validate=True,
                                                     C=np.array([0.8])),
                                      np.zeros(1), degree=4, grid_n=61)
    inv = solve_inverse_kernels(ks)
    K = np.array([0.7])
    tc = compute_target_coeffs(spec, inv, K)
    x = tc.x
    X2, Y2 = np.meshgrid(x, x, indexing="ij")
    assert np.allclose(tc.F11, np.tril(spec.f11(X2, Y2)), atol=1e-9)
    D1v = spec.D1(x)
    g1v = spec.g1(x)
    assert np.allclose(tc.D1cal, D1v + np.outer(g1v, K), atol=1e-9)
    assert np.allclose(tc.D2cal, spec.G1(x), atol=1e-9)


def test_target_coeffs_requadrature(toy_design):
    spec, ks, inv, gains = toy_design
    tc = gains.target
    x = tc.x
    h = x[1] - x[0]
    rng = np.random.default_rng(11)
    for _ in range(10):
        i = rng.integers(5, len(x) - 1)
        j = rng.integers(0, i - 3)
        zi = np.arange(j, i + 1)
        w = np.full(len(zi), h)
        w[0] = w[-1] = h / 2
        val = (spec.f12(x[i], x[j])
               + np.sum(w * spec.f12(x[i], x[zi]) * inv.rho[zi, j])
               + spec.c1_fn(np.array([x[i]]))[0] * inv.rho[i, j])
        assert tc.F12[i, j] == pytest.approx(val, rel=1e-8, abs=1e-10)


def test_d1cal_independent_of_K_when_g1_zero():
    spec = make_toy_spec(g1=const_fn(0.0))
    ksz = solve_control_kernels_series(make_zero_spec(validate=True,
                                                      C=np.array([0.8])),
                                       np.zeros(1), degree=4, grid_n=61)
    inv = solve_inverse_kernels(ksz)
    a = compute_target_coeffs(spec, inv, np.array([0.3])).D1cal
    b = compute_target_coeffs(spec, inv, np.array([-5.0])).D1cal
    assert np.allclose(a, b)


def test_h_gain_reductions():
    # zero kernels, c1_scalar = 0, q1 = 1: h1 = h3 = c0, h4 = 0, H10 = 0
    spec = make_zero_spec(validate=True, C=np.array([0.8]), c1_scalar=0.0,
                          q1=1.0)
    ks = solve_control_kernels_series(spec, np.zeros(1), degree=4, grid_n=61)
    inv = solve_inverse_kernels(ks)
    tc = compute_target_coeffs(spec, inv, np.zeros(1))
    h1, h2, h3, h4, h5, h6, H7, H8, H9, H10 = compute_h_gains(
        spec, ks, inv, tc, np.zeros(1))
    assert h1 == pytest.approx(spec.c0, abs=1e-9)
    assert h3 == pytest.approx(spec.c0, abs=1e-9)
    assert h4 == pytest.approx(0.0, abs=1e-9)
    assert np.abs(H10).max() <= 1e-9


def test_h5_drops_integral_when_sigma_zero():
    spec = make_zero_spec(validate=True, C=np.array([0.8]), c1_scalar=0.0)
    K = np.array([0.4])
    ks = solve_control_kernels_series(spec, K, degree=4, grid_n=61)
    inv = solve_inverse_kernels(ks)
    tc = compute_target_coeffs(spec, inv, K)
    _, _, _, _, h5, *_ = compute_h_gains(spec, ks, inv, tc, K)
    Acl = spec.A + np.outer(spec.B, K)
    lam1 = inv.lam[-1]
    want = lam1 @ Acl - (spec.q0 * spec.c1_scalar + spec.c0) * lam1
    assert np.allclose(h5, want, atol=1e-8)


def test_n_gain_reductions(toy_design):
    spec, ks, inv, gains = toy_design
    assert gains.n6 == pytest.approx(-spec.q1 / (spec.eps1 * spec.q0), rel=1e-12)
    assert gains.n2 == pytest.approx(-gains.h3 / spec.q0, rel=1e-12)
    # zero kernels and vanishing h's: n1 reduces to (-c1' + (q1/e1) c1(1))/q0
    # (A Hurwitz so the zero feedback row is admissible)
    zspec = make_zero_spec(validate=True, A=np.array([[-0.5]]),
                           C=np.array([0.8]), c0=0.0,
                           c1_scalar=0.0, c1_fn=const_fn(0.9))
    ksz = solve_control_kernels_series(zspec, np.zeros(1), degree=4, grid_n=61)
    invz = solve_inverse_kernels(ksz)
    gz = synthesize_gains(zspec, ksz, invz, c1_acute=2.0)
    want = (-2.0 + zspec.q1 / zspec.eps1 * 0.9) / zspec.q0
    assert gz.n1 == pytest.approx(want, abs=1e-9)


def test_state_feedback_values(toy_design):
    spec, ks, inv, gains = toy_design
    grid = Grid(nx=21, dt=1e-3, t_final=1.0)
    nx = grid.nx
    zero = PlantState(0.0, 0.0, np.zeros(nx), np.zeros(nx), np.zeros(nx),
                      np.zeros(1), np.zeros(2))
    assert state_feedback_U(zero, gains, grid) == 0.0
    st = zero.copy()
    st.xi[0] = 1.0
    # xi(0) = 1 alone also contributes through the integral of N7 against
    # the single nonzero node; isolate n5 by subtracting it
    tw = trapezoid_weights(nx, grid.dx)
    N7 = np.interp(grid.x, gains.x, gains.N7)
    got = state_feedback_U(st, gains, grid)
    assert got - tw[0] * N7[0] == pytest.approx(gains.n5, rel=1e-12)


def test_state_feedback_term_by_term(blade_design):
    spec, ks, inv, gains = blade_design
    grid = Grid(nx=21, dt=1e-3, t_final=1.0)
    x = grid.x
    rng = np.random.default_rng(5)
    st = PlantState(0.0, 0.4, rng.normal(size=21), rng.normal(size=21),
                    rng.normal(size=21), rng.normal(size=1),
                    rng.normal(size=2))
    tw = trapezoid_weights(grid.nx, grid.dx)
    N7 = np.interp(x, gains.x, gains.N7)
    N8 = np.interp(x, gains.x, gains.N8)
    N9 = np.interp(x, gains.x, gains.N9)
    N10 = np.interp(x, gains.x, gains.N10)
    terms = [gains.n1 * st.xi[-1], gains.n2 * st.eta[-1],
             float(gains.n3 @ st.X), float(gains.n4 @ st.d),
             gains.n5 * st.xi[0],
             gains.n6 * one_sided_deriv_end(st.eta, grid.dx),
             float(np.sum(tw * N7 * st.xi)), float(np.sum(tw * N8 * st.eta)),
             float(np.sum(tw * N9 * st.u)),
             float(np.sum(tw * N10 * deriv_x(st.u, grid.dx)))]
    assert state_feedback_U(st, gains, grid) == pytest.approx(
        sum(terms), abs=1e-10 * (1 + abs(sum(terms))))


def test_output_feedback_consistency(blade_design):
    spec, ks, inv, gains = blade_design
    grid = Grid(nx=21, dt=1e-3, t_final=1.0)
    rng = np.random.default_rng(9)
    st = PlantState(0.0, 0.4, rng.normal(size=21), rng.normal(size=21),
                    rng.normal(size=21), rng.normal(size=1),
                    rng.normal(size=2))
    U = state_feedback_U(st, gains, grid)
    U_of = output_feedback_U(st.xi[0], st, gains, grid)
    assert U_of == U
    obs = st.copy()
    obs.xi = np.zeros(21)
    obs.eta = np.zeros(21)
    obs.u = np.zeros(21)
    obs.z = 0.0
    obs.X = np.zeros(1)
    obs.d = np.zeros(2)
    assert output_feedback_U(1.0, obs, gains, grid) == pytest.approx(gains.n5)


def test_output_feedback_delta(blade_design):
    # U_of - U equals the error combination with no n5 term
    spec, ks, inv, gains = blade_design
    grid = Grid(nx=21, dt=1e-3, t_final=1.0)
    x = grid.x
    rng = np.random.default_rng(13)
    st = PlantState(0.0, 0.4, rng.normal(size=21), rng.normal(size=21),
                    rng.normal(size=21), rng.normal(size=1),
                    rng.normal(size=2))
    obs = PlantState(0.0, 0.1, rng.normal(size=21), rng.normal(size=21),
                     rng.normal(size=21), rng.normal(size=1),
                     rng.normal(size=2))
    U = state_feedback_U(st, gains, grid)
    U_of = output_feedback_U(st.xi[0], obs, gains, grid)
    tw = trapezoid_weights(grid.nx, grid.dx)
    N7 = np.interp(x, gains.x, gains.N7)
    N8 = np.interp(x, gains.x, gains.N8)
    N9 = np.interp(x, gains.x, gains.N9)
    N10 = np.interp(x, gains.x, gains.N10)
    exi, eeta, eu = obs.xi - st.xi, obs.eta - st.eta, obs.u - st.u
    delta = (gains.n1 * exi[-1] + gains.n2 * eeta[-1]
             + float(gains.n3 @ (obs.X - st.X))
             + float(gains.n4 @ (obs.d - st.d))
             + gains.n6 * one_sided_deriv_end(eeta, grid.dx)
             + np.sum(tw * N7 * exi) + np.sum(tw * N8 * eeta)
             + np.sum(tw * N9 * eu)
             + np.sum(tw * N10 * deriv_x(eu, grid.dx)))
    assert U_of - U == pytest.approx(delta, abs=1e-10 * (1 + abs(delta)))


def test_check_c1_scalar_arithmetic():
    spec = make_zero_spec(validate=True, A=np.array([[0.0]]),
                          B=np.array([1.0]), C=np.array([1.0]))
    K = np.array([-1.0])          # A + BK = -1
    cert = check_c1(spec, K, 10.0)
    assert cert.h == pytest.approx(2.0)
    assert cert.threshold == pytest.approx(np.e + 0.5)
    assert cert.passed
    assert not check_c1(spec, K, 0.0).passed
    assert not check_c1(spec, K, 3.0).passed


def test_synthesize_rejects_bad_inputs(toy_design):
    spec, ks, inv, _ = toy_design
    with pytest.raises(SynthesisError, match="positive"):
        synthesize_gains(spec, ks, inv, c1_acute=0.0)
