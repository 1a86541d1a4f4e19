"""Shared fixtures: toy plant factories and the blade design chain."""

import numpy as np
import pytest

from thermobeam.beam import (PhysicalBeamParams, build_general_spec,
                             nondimensionalize)
from thermobeam.control import place_poles, synthesize_gains
from thermobeam.kernels import (solve_control_kernels_series,
                                solve_inverse_kernels, solve_observer_kernels)
from thermobeam.observer import synthesize_observer_gains
from thermobeam.plant import GeneralPlantSpec


def const_fn(v):
    return lambda x: np.full_like(np.asarray(x, dtype=float), float(v))


def const_fn2(v):
    return lambda X, Y: np.full_like(
        np.asarray(X, dtype=float) * 1.0 + 0.0 * np.asarray(Y, dtype=float),
        float(v))


def row_fn(vals):
    vals = np.asarray(vals, dtype=float)
    return lambda x: np.tile(vals, (len(np.atleast_1d(x)), 1))


def make_toy_spec(validate=True, **overrides):
    """Mildly coupled two-speed plant with every channel populated."""
    base = dict(
        eps1=1.0, eps2=1.5, c0=0.3, c1_scalar=0.2, q0=2.0, q1=1.7, kappa0=1.0,
        A=np.array([[0.5]]), B=np.array([1.0]), C=np.array([0.8]),
        p2_acute=np.array([0.3]),
        Ad=np.array([[0.0, 1.0], [-1.0, 0.0]]), q_row=np.array([1.0, 1.0]),
        c1_fn=const_fn(0.5), c2_fn=const_fn(0.6),
        g1=const_fn(0.2), g2=const_fn(0.4),
        mu1=const_fn(0.3), mu2=const_fn(0.3),
        D1=row_fn([0.4]), D2=row_fn([0.4]),
        G1=row_fn([0.3, 0.2]), G2=row_fn([0.3, 0.2]),
        f11=const_fn2(-0.4), f12=const_fn2(0.5), f13=const_fn2(0.3),
        f21=const_fn2(-0.5), f22=const_fn2(0.5), f23=const_fn2(0.3))
    base.update(overrides)
    spec = GeneralPlantSpec(**base)
    return spec.validate() if validate else spec


def make_zero_spec(validate=False, **overrides):
    """Plant with every in-domain coupling switched off.  Not validated by
    default: pure-numerics toys routinely break Assumption-2 observability."""
    zero = dict(
        c1_fn=const_fn(0.0), c2_fn=const_fn(0.0), g1=const_fn(0.0),
        g2=const_fn(0.0), mu1=const_fn(0.0), mu2=const_fn(0.0),
        D1=row_fn([0.0]), D2=row_fn([0.0]),
        G1=row_fn([0.0, 0.0]), G2=row_fn([0.0, 0.0]),
        f11=const_fn2(0.0), f12=const_fn2(0.0), f13=const_fn2(0.0),
        f21=const_fn2(0.0), f22=const_fn2(0.0), f23=const_fn2(0.0))
    zero.update(overrides)
    return make_toy_spec(validate=validate, **zero)


@pytest.fixture(scope="session")
def blade():
    """Blade parameter set, dimensionless groups and general spec."""
    p = PhysicalBeamParams()
    d = nondimensionalize(p)
    return p, d, build_general_spec(d, p)


@pytest.fixture(scope="session")
def blade_design(blade):
    """Kernels, inverse kernels and gains for the blade instance."""
    _, _, spec = blade
    K = place_poles(spec.A, spec.B, [-2.0])
    ks = solve_control_kernels_series(spec, K, degree=10, grid_n=201)
    inv = solve_inverse_kernels(ks)
    gains = synthesize_gains(spec, ks, inv, c1_acute=10.0)
    return spec, ks, inv, gains


@pytest.fixture(scope="session")
def blade_observer(blade):
    _, _, spec = blade
    obsK = solve_observer_kernels(spec, 2.0, degree=10, grid_n=201)
    og = synthesize_observer_gains(spec, obsK, 2.0, (-2.0,), (-2.0, -3.0))
    return spec, obsK, og
