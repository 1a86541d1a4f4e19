"""Configuration loading, the CLI subcommands, artifact export and
determinism of the outputs."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from thermobeam.cli import main
from thermobeam.config import (ConfigError, default_config_path, load_config,
                               parse_profile)


def test_shipped_config_loads():
    cfg = load_config(default_config_path())
    assert cfg.scenario == "output-feedback"
    assert cfg.c1_acute == 10.0
    assert cfg.grid.dt == 1e-3
    assert cfg.grid.dx == pytest.approx(0.05)
    assert cfg.kernel_method == "series"
    assert cfg.kernel_degree == 10
    assert np.allclose(cfg.d0, [7400.0, 7400.0])


def test_profile_grammar():
    f = parse_profile("2*sin(2*pi*x) + sin(4*pi*x) - 0.5")
    x = np.linspace(0, 1, 11)
    want = 2 * np.sin(2 * np.pi * x) + np.sin(4 * np.pi * x) - 0.5
    assert np.allclose(f(x), want)
    assert np.allclose(parse_profile("0")(x), 0.0)
    assert np.allclose(parse_profile("-1.5e-2")(x), -0.015)
    with pytest.raises(ConfigError, match="grammar"):
        parse_profile("exp(x)")
    with pytest.raises(ConfigError, match="grammar"):
        parse_profile("x**2")


def test_empty_config_lists_required(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    with pytest.raises(ConfigError) as err:
        load_config(path)
    msg = str(err.value)
    for field in ("[scenario] mode", "[grid] dx", "[plant] type"):
        assert field in msg


def test_cfl_rejected_at_load(tmp_path):
    base = Path(default_config_path()).read_text()
    path = tmp_path / "bad.cfg"
    path.write_text(base.replace("dt = 0.001", "dt = 1.0"))
    with pytest.raises(ConfigError, match="CFL"):
        load_config(path)


def test_corrupt_config_exit_code(tmp_path):
    path = tmp_path / "broken.cfg"
    path.write_text("[scenario\nmode = open-loop\n")
    assert main(["simulate", "--config", str(path)]) == 2


def test_general_plant_tables(tmp_path):
    path = tmp_path / "general.cfg"
    path.write_text("""
[scenario]
mode = open-loop
[plant]
type = general
eps1 = 1.0
eps2 = 1.5
c0 = 0.1
q0 = 2.0
q1 = 1.5
A = 0.4
B = 1
C = 0.8
p2_acute = 0.2
Ad = 0,1;-1,0
q_row = 1,1
c2_fn = 0.2,0.4,0.6
f22 = 0.3
D2 = 0.5
[grid]
dx = 0.1
dt = 0.002
t_final = 0.2
[initial]
xi = sin(2*pi*x)
z = 0.1
X = 0.2
[disturbance]
enabled = off
[output]
directory = {out}
""".format(out=tmp_path / "out"))
    cfg = load_config(path)
    assert cfg.spec.n == 1 and cfg.spec.m == 2
    x = np.linspace(0, 1, 5)
    assert cfg.spec.c2_fn(np.array([0.5]))[0] == pytest.approx(0.4)
    assert np.allclose(cfg.spec.f22(x, x), 0.3)
    assert np.allclose(cfg.d0, 0.0)
    assert main(["simulate", "--config", str(path)]) == 0


def test_simulate_writes_artifacts_and_manifest(tmp_path):
    out = tmp_path / "run"
    rc = main(["simulate", "--scenario", "open-loop", "--t-final", "0.5",
               "--out", str(out)])
    assert rc == 0
    scalars = (out / "scalars.csv").read_text().splitlines()
    assert scalars[0].startswith("t,z,absX,X_0,U,omega0")
    assert len(scalars) == 502
    manifest = (out / "MANIFEST").read_text().splitlines()
    assert manifest[0] == "# status: ok"
    for line in manifest[1:]:
        name, digest, rows = line.split(",")
        data = (out / name).read_bytes()
        assert hashlib.sha256(data).hexdigest() == digest
        assert int(rows) == len(data.splitlines()) - 1


def test_simulate_deterministic(tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert main(["simulate", "--scenario", "open-loop", "--t-final",
                     "0.3", "--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]


def test_kernels_subcommand(tmp_path):
    out = tmp_path / "kern"
    assert main(["kernels", "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    for want in ("kernel_k.csv", "kernel_l.csv", "kernel_p.csv",
                 "kernel_gamma.csv", "kernel_upsilon.csv", "kernel_psi.csv",
                 "kernel_M.csv", "kernel_residuals.csv", "MANIFEST"):
        assert want in names
    rows = (out / "kernel_residuals.csv").read_text().splitlines()
    vals = dict(line.split(",") for line in rows[1:])
    assert float(vals["l_diag"]) <= 1e-6


def test_export_gains_subcommand(tmp_path):
    out = tmp_path / "gains"
    assert main(["export-gains", "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    for want in ("gains_scalar.csv", "gains_K.csv", "gains_functions.csv",
                 "gains_observer_scalar.csv", "gains_observer_functions.csv"):
        assert want in names
    rows = (out / "gains_functions.csv").read_text().splitlines()
    assert rows[0] == "y,N7,N8,N9,N10,H7,H8,H9,H10"
    assert len(rows) > 100


def test_verify_subcommand_kernel_suites(tmp_path):
    out = tmp_path / "ver"
    rc = main(["verify", "--suite", "transforms", "--out", str(out)])
    assert rc == 0
    rows = (out / "verification.csv").read_text().splitlines()
    assert rows[0] == "suite,check,value,threshold,verdict"
    assert all(line.endswith("pass") for line in rows[1:])
