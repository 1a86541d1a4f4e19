"""Gain synthesis and evaluation of the boundary feedback laws.

The dynamic right boundary of the transformed plant reads

    beta_t(1,t) = -q1 eta_t(1,t) + h1 beta(1) + h2 beta(0) + h3 eta(1)
                  + h4 eta(0) + h5 X + h6 d + q0 U
                  + int H7 beta + int H8 eta + int H9 u + int H10 u_y

and the control U cancels everything but -c1' beta(1).  Expressed in the
original states this becomes

    U = n1 xi(1) + n2 eta(1) + n3 X + n4 d + n5 xi(0) + n6 eta_x(1)
        + int N7 xi + int N8 eta + int N9 u + int N10 u_y.

Two closed-form corrections to the printed gain tables follow from
re-deriving the boundary identity: h3 carries the factor q1 on its c0 term
(coefficient of eta(1) in q0 zdot), and in n5 the transport factor q1/eps1
multiplies only the g1(1) term.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .kernels.common import band_integral, suffix_band_integral
from .kernels.sets import InverseKernelSet, KernelSet
from .numerics import deriv_x, one_sided_deriv_end, trapezoid_weights, \
    volterra_weight_matrix
from .plant import controllable


class SynthesisError(RuntimeError):
    """Gain synthesis could not be completed."""


def place_poles(A, B, poles):
    """Feedback row K with eig(A + B K) = poles (Ackermann, single input)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(-1)
    n = A.shape[0]
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    if len(poles) != n:
        raise SynthesisError(f"need {n} poles, got {len(poles)}")
    if not np.allclose(np.sort_complex(poles), np.sort_complex(poles.conj())):
        raise SynthesisError("desired poles must be closed under conjugation")
    if not controllable(A, B):
        raise SynthesisError("(A, B) is not controllable")

    coeffs = np.real(np.poly(poles))
    phiA = np.zeros_like(A)
    for c in coeffs:
        phiA = phiA @ A + c * np.eye(n)
    ctrb = np.column_stack([np.linalg.matrix_power(A, i) @ B for i in range(n)])
    last = np.zeros(n)
    last[-1] = 1.0
    K = -(last @ np.linalg.solve(ctrb, phiA))

    achieved = np.linalg.eigvals(A + np.outer(B, K))
    if np.max(np.abs(np.sort_complex(achieved) - np.sort_complex(poles))) > 1e-8 * (
            1.0 + np.abs(poles).max()):
        raise SynthesisError("pole placement failed to reach the target set")
    return K


def place_observer_gain(A, C, poles):
    """Injection column L with eig(A - L C) = poles (dual placement)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    K = place_poles(A.T, np.asarray(C, dtype=float), poles)
    return -K


@dataclass
class TargetCoeffs:
    """Coefficient fields of the transformed eta equation."""

    x: np.ndarray
    F11: np.ndarray
    F12: np.ndarray
    F13: np.ndarray
    D1cal: np.ndarray
    D2cal: np.ndarray


def compute_target_coeffs(spec, inv: InverseKernelSet, K) -> TargetCoeffs:
    x = inv.x
    h = inv.h
    ng = len(x)
    X2, Y2 = np.meshgrid(x, x, indexing="ij")
    F12v = np.asarray(spec.f12(X2, Y2), dtype=float)
    c1v = np.asarray(spec.c1_fn(x), dtype=float)
    g1v = np.asarray(spec.g1(x), dtype=float)
    W = volterra_weight_matrix(ng, h)

    F11 = (np.asarray(spec.f11(X2, Y2), dtype=float)
           + band_integral(F12v, inv.sigma, h) + c1v[:, None] * inv.sigma)
    F12 = F12v + band_integral(F12v, inv.rho, h) + c1v[:, None] * inv.rho
    F11[np.triu_indices(ng, 1)] = 0.0
    F12[np.triu_indices(ng, 1)] = 0.0
    step = np.where(X2 > Y2, 1.0, 0.0)
    F13 = (step * np.asarray(spec.f13(X2, Y2), dtype=float)
           + (W * F12v) @ inv.varrho + c1v[:, None] * inv.varrho)
    D1v = np.asarray(spec.D1(x), dtype=float).reshape(ng, spec.n)
    G1v = np.asarray(spec.G1(x), dtype=float).reshape(ng, spec.m)
    D1cal = (D1v - (W * F12v) @ inv.lam
             + np.outer(g1v, np.asarray(K, dtype=float))
             - c1v[:, None] * inv.lam)
    D2cal = G1v - c1v[:, None] * inv.vartheta - (W * F12v) @ inv.vartheta
    return TargetCoeffs(x=x, F11=F11, F12=F12, F13=F13,
                        D1cal=D1cal, D2cal=D2cal)


@dataclass
class GainSet:
    """Everything the feedback laws need, sampled on the kernel grid."""

    x: np.ndarray
    K: np.ndarray
    c1_acute: float
    h1: float
    h2: float
    h3: float
    h4: float
    h5: np.ndarray
    h6: np.ndarray
    H7: np.ndarray
    H8: np.ndarray
    H9: np.ndarray
    H10: np.ndarray
    n1: float
    n2: float
    n3: np.ndarray
    n4: np.ndarray
    n5: float
    n6: float
    N7: np.ndarray
    N8: np.ndarray
    N9: np.ndarray
    N10: np.ndarray
    target: TargetCoeffs = None
    meta: dict = field(default_factory=dict)

    def scalars(self):
        return {"h1": self.h1, "h2": self.h2, "h3": self.h3, "h4": self.h4,
                "n1": self.n1, "n2": self.n2, "n5": self.n5, "n6": self.n6,
                "c1_acute": self.c1_acute}


def compute_h_gains(spec, direct: KernelSet, inv: InverseKernelSet,
                    tc: TargetCoeffs, K):
    """Boundary-identity gains h1..h6, H7..H10 from the kernel traces."""
    x, h = inv.x, inv.h
    tw = trapezoid_weights(len(x), h)
    e1, e2 = spec.eps1, spec.eps2
    c0, c1s, q0, q1 = spec.c0, spec.c1_scalar, spec.q0, spec.q1
    g1v = np.asarray(spec.g1(x), dtype=float)
    c1v = np.asarray(spec.c1_fn(x), dtype=float)
    mu1v = np.asarray(spec.mu1(x), dtype=float)
    B = np.asarray(spec.B, dtype=float)
    Acl = np.atleast_2d(spec.A) + np.outer(B, np.asarray(K, dtype=float))

    sig1 = inv.sigma[-1]
    rho1 = inv.rho[-1]
    var1 = inv.varrho[-1]
    lam1 = inv.lam[-1]
    th1 = inv.vartheta[-1]

    h1 = c0 + q0 * c1s - rho1[-1] / e2
    h2 = rho1[0] / e2 + float(lam1 @ B) - np.sum(tw * sig1 * g1v) / e1
    # q0 zdot contributes c0*q1 to the eta(1) coefficient (q1 restored
    # against the printed table)
    h3 = sig1[-1] / e1 + c0 * q1
    h4 = -sig1[0] / e1
    h5 = (lam1 @ Acl - (tw * sig1) @ tc.D1cal / e1 - (q0 * c1s + c0) * lam1)
    h6 = (-(tw * sig1) @ tc.D2cal / e1 - (q0 * c1s + c0) * th1
          + th1 @ np.atleast_2d(spec.Ad))

    H7 = ((q0 * c1s + c0) * rho1 + inv.rho_y1 / e2 - c1v * sig1 / e1
          - suffix_band_integral(tc.F12 * sig1[:, None], h) / e1)
    H8 = (-inv.sigma_y1 / e1
          - suffix_band_integral(tc.F11 * sig1[:, None], h) / e1
          + (q0 * c1s + c0) * sig1)
    H9 = (-(tw * sig1) @ tc.F13 / e1 - sig1 * mu1v / e1
          + (q0 * c1s + c0) * var1)
    H10 = spec.kappa0 * inv.varrho_y1
    return h1, h2, h3, h4, h5, h6, H7, H8, H9, H10


def compute_n_gains(spec, direct: KernelSet, hs, c1_acute, K):
    """Original-state gains n1..n6, N7..N10 from the h table."""
    h1, h2, h3, h4, h5, h6, H7, H8, H9, H10 = hs
    x, h = direct.x, direct.h
    tw = trapezoid_weights(len(x), h)
    e1, q0, q1 = spec.eps1, spec.q0, spec.q1
    if q0 == 0.0:
        raise SynthesisError("q0 = 0: the input channel is absent")
    c1_1 = float(np.asarray(spec.c1_fn(np.array([1.0])), dtype=float)[0])
    g1_1 = float(np.asarray(spec.g1(np.array([1.0])), dtype=float)[0])
    D1_1 = np.asarray(spec.D1(np.array([1.0])), dtype=float).reshape(spec.n)
    f12_1 = np.asarray(spec.f12(np.ones_like(x), x), dtype=float)
    f11_1 = np.asarray(spec.f11(np.ones_like(x), x), dtype=float)
    f13_1 = np.asarray(spec.f13(np.ones_like(x), x), dtype=float)
    C = np.asarray(spec.C, dtype=float)

    ch1 = c1_acute + h1
    n1 = (-ch1 + (q1 / e1) * c1_1) / q0
    n2 = -h3 / q0
    n3 = (-ch1 * direct.gamma[-1] + (q1 / e1) * D1_1 - h2 * direct.gamma[0]
          - h4 * C - h5 - (tw * H7) @ direct.gamma) / q0
    n4 = (-ch1 * direct.Upsilon[-1] - h6 - (tw * H7) @ direct.Upsilon
          - h2 * direct.Upsilon[0]) / q0
    # the transport factor multiplies only the g1(1) term (parenthesis
    # corrected against the printed table)
    n5 = ((q1 / e1) * g1_1 - h2 - h4) / q0
    n6 = -q1 / (e1 * q0)
    N7 = (ch1 * direct.k1 + (q1 / e1) * f12_1 - H7
          + suffix_band_integral(direct.k * H7[:, None], h)) / q0
    N8 = (ch1 * direct.l1 + (q1 / e1) * f11_1 - H8
          + suffix_band_integral(direct.l * H7[:, None], h)) / q0
    N9 = (ch1 * direct.p1 + (q1 / e1) * f13_1 + (tw * H7) @ direct.p - H9) / q0
    N10 = H10 / q0
    return n1, n2, n3, n4, n5, n6, N7, N8, N9, N10


def synthesize_gains(spec, direct: KernelSet, inv: InverseKernelSet,
                     c1_acute=10.0) -> GainSet:
    """Full gain table for the state/output feedback laws."""
    if c1_acute <= 0.0:
        raise SynthesisError("c1_acute must be positive")
    K = direct.K
    Acl = np.atleast_2d(spec.A) + np.outer(np.asarray(spec.B, dtype=float), K)
    if np.max(np.linalg.eigvals(Acl).real) >= 0.0:
        raise SynthesisError("A + B K is not Hurwitz")
    tc = compute_target_coeffs(spec, inv, K)
    hs = compute_h_gains(spec, direct, inv, tc, K)
    ns = compute_n_gains(spec, direct, hs, c1_acute, K)
    h1, h2, h3, h4, h5, h6, H7, H8, H9, H10 = hs
    n1, n2, n3, n4, n5, n6, N7, N8, N9, N10 = ns
    return GainSet(x=direct.x, K=K, c1_acute=c1_acute,
                   h1=h1, h2=h2, h3=h3, h4=h4, h5=h5, h6=h6,
                   H7=H7, H8=H8, H9=H9, H10=H10,
                   n1=n1, n2=n2, n3=n3, n4=n4, n5=n5, n6=n6,
                   N7=N7, N8=N8, N9=N9, N10=N10, target=tc)


def _resample(gains: GainSet, x_new):
    return tuple(np.interp(x_new, gains.x, arr)
                 for arr in (gains.N7, gains.N8, gains.N9, gains.N10))


def state_feedback_U(state, gains: GainSet, grid) -> float:
    """Full-state boundary feedback evaluated on a plant state."""
    x = grid.x
    dx = grid.dx
    tw = trapezoid_weights(len(x), dx)
    N7, N8, N9, N10 = _resample(gains, x)
    eta_x1 = one_sided_deriv_end(state.eta, dx)
    u_y = deriv_x(state.u, dx)
    return float(
        gains.n1 * state.xi[-1] + gains.n2 * state.eta[-1]
        + gains.n3 @ state.X + gains.n4 @ state.d
        + gains.n5 * state.xi[0] + gains.n6 * eta_x1
        + np.sum(tw * N7 * state.xi) + np.sum(tw * N8 * state.eta)
        + np.sum(tw * N9 * state.u) + np.sum(tw * N10 * u_y))


def output_feedback_U(xi0_measured, obs_state, gains: GainSet, grid) -> float:
    """Observer-based feedback: the measured xi(0) replaces its estimate,
    every other state is the observer's."""
    x = grid.x
    dx = grid.dx
    tw = trapezoid_weights(len(x), dx)
    N7, N8, N9, N10 = _resample(gains, x)
    eta_x1 = one_sided_deriv_end(obs_state.eta, dx)
    u_y = deriv_x(obs_state.u, dx)
    return float(
        gains.n1 * obs_state.xi[-1] + gains.n2 * obs_state.eta[-1]
        + gains.n3 @ obs_state.X + gains.n4 @ obs_state.d
        + gains.n5 * xi0_measured + gains.n6 * eta_x1
        + np.sum(tw * N7 * obs_state.xi) + np.sum(tw * N8 * obs_state.eta)
        + np.sum(tw * N9 * obs_state.u) + np.sum(tw * N10 * u_y))


@dataclass
class C1Certificate:
    passed: bool
    h: float
    threshold: float
    lyapunov_P: np.ndarray
    note: str = ("sufficient condition only; c1_acute below the threshold "
                 "may still stabilize")


def check_c1(spec, K, c1_acute) -> C1Certificate:
    """Advisory certificate for the boundary decay parameter.

    Solves P (A+BK) + (A+BK)^T P = -I, takes h at its admissible infimum
    4|PB|^2/lmin + lmin and tests c1_acute > h e / 2 + lmin / 2.
    """
    B = np.asarray(spec.B, dtype=float)
    Acl = np.atleast_2d(spec.A) + np.outer(B, np.asarray(K, dtype=float))
    if np.max(np.linalg.eigvals(Acl).real) >= 0.0:
        raise SynthesisError("A + B K is not Hurwitz; Lyapunov equation "
                             "has no positive solution")
    Q = np.eye(spec.n)
    P = solve_continuous_lyapunov(Acl.T, -Q)
    lmin = 1.0
    h = 4.0 * float(np.dot(P @ B, P @ B)) / lmin + lmin
    threshold = h * np.e / 2.0 + lmin / 2.0
    passed = (c1_acute > 0.0) and (c1_acute > threshold)
    return C1Certificate(passed=passed, h=h, threshold=threshold, lyapunov_P=P)
