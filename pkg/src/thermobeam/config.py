"""Run configuration: sectioned key-value files, the restricted
initial-condition expression grammar, and construction of every object a
scenario needs (plant, grids, kernel-solver settings, gain knobs).

Initial conditions accept only sums of  a*sin(b*pi*x)  and constants, e.g.
``2*sin(2*pi*x) + sin(4*pi*x) - 0.5``; there is deliberately no general
expression evaluator.
"""

import configparser
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .beam import PhysicalBeamParams, build_general_spec, nondimensionalize
from .plant import GeneralPlantSpec, Grid, PlantSpecError


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or inconsistent."""


_SIN_TERM = re.compile(
    r"^(?:(?P<coef>[0-9.eE+-]+)\*)?sin\((?:(?P<freq>[0-9.eE+-]+)\*)?pi\*x\)$")
_CONST_TERM = re.compile(r"^[0-9.eE+-]+$")


def _split_terms(expr):
    """Split on top-level +/- signs (exponent signs are kept intact)."""
    terms = []
    cur = ""
    sign = 1.0
    prev = ""
    for ch in expr.replace(" ", ""):
        if ch in "+-" and cur and prev not in "eE*(+-":
            terms.append((sign, cur))
            sign = 1.0 if ch == "+" else -1.0
            cur = ""
        else:
            if ch in "+-" and not cur:
                sign *= 1.0 if ch == "+" else -1.0
            else:
                cur += ch
        prev = ch
    if cur:
        terms.append((sign, cur))
    return terms


def parse_profile(expr):
    """Compile an initial-condition expression into a vectorized callable."""
    expr = expr.strip()
    if not expr:
        raise ConfigError("empty initial-condition expression")
    parts = []
    for sign, term in _split_terms(expr):
        m = _SIN_TERM.match(term)
        if m:
            coef = float(m.group("coef")) if m.group("coef") else 1.0
            freq = float(m.group("freq")) if m.group("freq") else 1.0
            parts.append(("sin", sign * coef, freq))
            continue
        if _CONST_TERM.match(term):
            parts.append(("const", sign * float(term), 0.0))
            continue
        raise ConfigError(
            f"initial-condition term '{term}' not in the a*sin(b*pi*x)+c grammar")

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for kind, a, b in parts:
            out = out + (a * np.sin(b * np.pi * x) if kind == "sin" else a)
        return out

    return f


def _floats(text):
    try:
        return np.array([float(v) for v in text.replace(";", ",").split(",")
                         if v.strip() != ""])
    except ValueError as err:
        raise ConfigError(f"cannot parse number list '{text}': {err}") from None


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip() != ""]
    return np.array([[float(v) for v in r.split(",")] for r in rows])


@dataclass
class RunConfig:
    scenario: str
    grid: Grid
    spec: GeneralPlantSpec
    dimless: object            # DimensionlessParams for physical plants
    physical: object           # PhysicalBeamParams or None
    kernel_method: str
    kernel_degree: int
    kernel_m_iter: int
    n_fourier: int
    kernel_tol: float
    kernel_grid_n: int
    k_poles: np.ndarray
    c1_acute: float
    L_z: float
    x_poles: np.ndarray
    d_poles: np.ndarray
    disturbance_on: bool
    d0: np.ndarray
    initial: dict
    out_dir: str
    snapshot_stride: int
    heat_scheme: str
    eta_disturbance_profile: str
    raw: configparser.ConfigParser = field(repr=False, default=None)


_REQUIRED = {"scenario": ("mode",), "grid": ("dx", "dt", "t_final"),
             "plant": ("type",)}

_SCENARIOS = ("open-loop", "state-feedback", "output-feedback")


def default_config_path():
    """Path of the shipped blade configuration."""
    return str(resources.files("thermobeam") / "configs" / "blade.cfg")


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str            # keys are case-sensitive (E_star, L_z, ...)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except configparser.Error as err:
        raise ConfigError(f"parse error: {err}") from None

    missing = []
    for sec, keys in _REQUIRED.items():
        if not cp.has_section(sec):
            missing.extend(f"[{sec}] {k}" for k in keys)
            continue
        missing.extend(f"[{sec}] {k}" for k in keys if not cp.has_option(sec, k))
    if missing:
        raise ConfigError("missing required fields: " + ", ".join(missing))

    scenario = cp.get("scenario", "mode").strip()
    if scenario not in _SCENARIOS:
        raise ConfigError(f"scenario.mode must be one of {_SCENARIOS}")

    g = cp["grid"]
    dx = g.getfloat("dx")
    if dx <= 0 or dx > 0.5:
        raise ConfigError("grid.dx must lie in (0, 0.5]")
    nx = int(round(1.0 / dx)) + 1
    if abs((nx - 1) * dx - 1.0) > 1e-12:
        raise ConfigError(f"grid.dx = {dx} does not divide the unit interval")
    grid = Grid(nx=nx, dt=g.getfloat("dt"), t_final=g.getfloat("t_final"))

    heat_scheme = cp.get("grid", "heat_scheme", fallback="explicit").strip()
    if heat_scheme not in ("explicit", "implicit"):
        raise ConfigError("grid.heat_scheme must be explicit or implicit")

    spec, dimless, physical = _build_plant(cp)
    try:
        grid.check(spec, heat_scheme)
    except PlantSpecError as err:
        raise ConfigError(str(err)) from None

    kn = cp["kernels"] if cp.has_section("kernels") else {}
    method = (kn.get("method", "series") or "series").strip()
    if method not in ("series", "iterative"):
        raise ConfigError("kernels.method must be series or iterative")

    gains = cp["gains"] if cp.has_section("gains") else {}
    dist = cp["disturbance"] if cp.has_section("disturbance") else {}
    dist_on = str(dist.get("enabled", "on")).strip().lower() in ("1", "on",
                                                                 "true", "yes")
    d0 = _floats(dist.get("d0", "0")) if dist.get("d0") else np.zeros(spec.m)
    if len(d0) != spec.m:
        raise ConfigError(f"disturbance.d0 must have {spec.m} entries")
    if not dist_on:
        d0 = np.zeros(spec.m)

    init = dict(cp["initial"]) if cp.has_section("initial") else {}
    out = cp["output"] if cp.has_section("output") else {}

    return RunConfig(
        scenario=scenario, grid=grid, spec=spec, dimless=dimless,
        physical=physical,
        kernel_method=method,
        kernel_degree=int(kn.get("degree", 10)),
        kernel_m_iter=int(kn.get("m_iter", 40)),
        n_fourier=int(kn.get("n_fourier", 64)),
        kernel_tol=float(kn.get("tol", 1e-8)),
        kernel_grid_n=int(kn.get("grid_n", 201)),
        k_poles=_floats(gains.get("k_poles", "-2")),
        c1_acute=float(gains.get("c1_acute", 10.0)),
        L_z=float(gains.get("L_z", 2.0)),
        x_poles=_floats(gains.get("x_poles", "-2")),
        d_poles=_floats(gains.get("d_poles", "-2,-3")),
        disturbance_on=dist_on, d0=d0,
        initial=init,
        out_dir=out.get("directory", "out"),
        snapshot_stride=int(out.get("snapshot_stride", 1000)),
        heat_scheme=heat_scheme,
        eta_disturbance_profile=cp.get("plant", "eta_disturbance_profile",
                                       fallback="phi2"),
        raw=cp)


def _build_plant(cp):
    p = cp["plant"]
    ptype = p.get("type").strip()
    if ptype == "physical":
        kwargs = {}
        for name in ("E_star", "G_star", "rho_star", "A_star", "I_star",
                     "k_prime", "L_star", "R_star", "J_star", "alpha0", "S0",
                     "beta_star", "c_star", "kappa_acute", "k1", "k2", "Q1",
                     "Q2", "omega_d", "I0", "omega1_star", "eps_override"):
            if p.get(name) is not None:
                kwargs[name] = float(p.get(name))
        if p.get("Ad"):
            kwargs["Ad"] = _matrix(p.get("Ad"))
        if p.get("q_row"):
            kwargs["q_row"] = _floats(p.get("q_row"))
        try:
            phys = PhysicalBeamParams(**kwargs)
            dimless = nondimensionalize(phys)
            spec = build_general_spec(
                dimless, phys,
                eta_disturbance_profile=p.get("eta_disturbance_profile",
                                              "phi2"))
        except (PlantSpecError, ValueError) as err:
            raise ConfigError(f"plant: {err}") from None
        return spec, dimless, phys
    if ptype == "general":
        return _general_from_tables(p), None, None
    raise ConfigError("plant.type must be physical or general")


def _general_from_tables(p):
    """General plant from constants and sampled 1-d coefficient tables
    (tables are piecewise-linear on a uniform grid; the f_ij accept a single
    constant)."""

    def fn_1d(key, default=0.0):
        raw = p.get(key)
        if raw is None:
            return lambda x: np.full_like(np.asarray(x, dtype=float), default)
        vals = _floats(raw)
        if len(vals) == 1:
            v = float(vals[0])
            return lambda x: np.full_like(np.asarray(x, dtype=float), v)
        nodes = np.linspace(0.0, 1.0, len(vals))
        return lambda x: np.interp(np.asarray(x, dtype=float), nodes, vals)

    def fn_2d(key):
        v = float(p.get(key, 0.0))
        return lambda X, Y: np.full_like(np.asarray(X, dtype=float) * 1.0
                                         + 0.0 * np.asarray(Y, dtype=float), v)

    def row_fn(key, width):
        vals = _floats(p.get(key, ",".join(["0"] * width)))
        if len(vals) != width:
            raise ConfigError(f"plant.{key} must have {width} entries")
        return lambda x: np.tile(vals, (len(np.atleast_1d(x)), 1))

    A = _matrix(p.get("A", "0"))
    Ad = _matrix(p.get("Ad", "0"))
    n, m = A.shape[0], Ad.shape[0]
    try:
        spec = GeneralPlantSpec(
            eps1=float(p.get("eps1", 1.0)), eps2=float(p.get("eps2", 1.0)),
            c0=float(p.get("c0", 0.0)), c1_scalar=float(p.get("c1_scalar", 0.0)),
            q0=float(p.get("q0", 1.0)), q1=float(p.get("q1", 1.0)),
            kappa0=float(p.get("kappa0", 1.0)),
            A=A, B=_floats(p.get("B", "1")), C=_floats(p.get("C", "1")),
            p2_acute=_floats(p.get("p2_acute", ",".join(["0"] * n))),
            Ad=Ad, q_row=_floats(p.get("q_row", ",".join(["1"] * m))),
            c1_fn=fn_1d("c1_fn"), c2_fn=fn_1d("c2_fn"),
            g1=fn_1d("g1"), g2=fn_1d("g2"),
            mu1=fn_1d("mu1"), mu2=fn_1d("mu2"),
            D1=row_fn("D1", n), D2=row_fn("D2", n),
            G1=row_fn("G1", m), G2=row_fn("G2", m),
            f11=fn_2d("f11"), f12=fn_2d("f12"), f13=fn_2d("f13"),
            f21=fn_2d("f21"), f22=fn_2d("f22"), f23=fn_2d("f23"),
        ).validate()
    except PlantSpecError as err:
        raise ConfigError(f"plant: {err}") from None
    return spec


def initial_profiles(cfg: RunConfig):
    """Compiled initial-condition callables with the blade defaults."""
    init = cfg.initial

    def prof(key, default):
        return parse_profile(init.get(key, default))

    out = {
        "xi": prof("xi", "0"),
        "eta": prof("eta", "0"),
        "u": prof("u", "0"),
        "z": float(init.get("z", 0.0)),
        "X": _floats(init.get("X", "0")),
        "xi_hat": prof("xi_hat", init.get("xi", "0")),
        "eta_hat": prof("eta_hat", init.get("eta", "0")),
        "u_hat": prof("u_hat", init.get("u", "0")),
        "z_hat": float(init.get("z_hat", init.get("z", 0.0))),
        "X_hat": _floats(init.get("X_hat", init.get("X", "0"))),
        "d_hat": _floats(init.get("d_hat", "0")) if init.get("d_hat")
        else cfg.d0.copy(),
    }
    if len(out["d_hat"]) != cfg.spec.m:
        raise ConfigError(f"initial.d_hat must have {cfg.spec.m} entries")
    return out
