"""Command-line front end: scenario orchestration and CSV artifact export.

Subcommands:
  simulate      build the design, run the configured scenario, export traces
  kernels       solve the kernel equations only, export kernels + residuals
  verify        run the verification suites and export the check table
  export-gains  synthesize and export the gain tables

Exit codes: 0 ok, 1 numerical divergence / failed verification,
2 configuration error, 3 synthesis error.
"""

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .beam import boundary_rescale, physical_initial_state
from .config import ConfigError, RunConfig, default_config_path, \
    initial_profiles, load_config
from .control import (SynthesisError, output_feedback_U, place_poles,
                      state_feedback_U, synthesize_gains)
from .kernels import (ConvergenceError, resample_kernels,
                      solve_control_kernels_iterative,
                      solve_control_kernels_series, solve_inverse_kernels,
                      solve_observer_kernels)
from .kernels.residuals import control_kernel_residual, observer_kernel_residual
from .kernels.sets import resample_observer_kernels
from .observer import ObserverRun, compute_observer_target_coeffs, \
    synthesize_observer_gains
from .plant import (DivergenceError, Grid, PlantSpecError, PlantState,
                    residual, simulate)


def _fmt(v):
    return format(float(v), ".12g")


class OutputDir:
    """CSV sink with a manifest of every emitted file."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.entries = []

    def write_csv(self, name, header, rows):
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(v) if not isinstance(v, str) else v
                                  for v in row))
        data = ("\n".join(lines) + "\n").encode()
        (self.root / name).write_bytes(data)
        self.entries.append((name, hashlib.sha256(data).hexdigest(), len(rows)))

    def manifest(self, status="ok"):
        lines = [f"# status: {status}"]
        for name, digest, rows in self.entries:
            lines.append(f"{name},{digest},{rows}")
        (self.root / "MANIFEST").write_text("\n".join(lines) + "\n")


def solve_kernels(cfg: RunConfig, K, method=None, degree=None):
    method = method or cfg.kernel_method
    if method == "series":
        return solve_control_kernels_series(
            cfg.spec, K, degree=degree or cfg.kernel_degree,
            n_fourier=cfg.n_fourier, tol=cfg.kernel_tol,
            grid_n=cfg.kernel_grid_n)
    return solve_control_kernels_iterative(
        cfg.spec, K, m_iter=cfg.kernel_m_iter, tol=cfg.kernel_tol,
        n_fourier=cfg.n_fourier)


def build_design(cfg: RunConfig):
    """Feedback gains (and observer gains when the scenario needs them)."""
    K = place_poles(cfg.spec.A, cfg.spec.B, cfg.k_poles)
    ks = solve_kernels(cfg, K)
    inv = solve_inverse_kernels(ks)
    gains = synthesize_gains(cfg.spec, ks, inv, c1_acute=cfg.c1_acute)
    obsK = obs_gains = None
    if cfg.scenario == "output-feedback":
        obsK = solve_observer_kernels(cfg.spec, cfg.L_z,
                                      degree=cfg.kernel_degree,
                                      grid_n=cfg.kernel_grid_n)
        obs_gains = synthesize_observer_gains(cfg.spec, obsK, cfg.L_z,
                                              cfg.x_poles, cfg.d_poles)
    return K, ks, inv, gains, obsK, obs_gains


def build_initial(cfg: RunConfig, grid=None):
    grid = grid or cfg.grid
    prof = initial_profiles(cfg)
    x = grid.x
    if cfg.dimless is not None:
        plant0 = physical_initial_state(
            cfg.dimless, cfg.spec, x, prof["xi"], prof["eta"], prof["u"],
            prof["X"], prof["z"], cfg.d0)
        s = boundary_rescale(cfg.dimless)
        obs0 = PlantState(0.0, prof["z_hat"], prof["xi_hat"](x),
                          s * prof["eta_hat"](x), prof["u_hat"](x),
                          np.atleast_1d(prof["X_hat"]).astype(float),
                          prof["d_hat"].astype(float))
    else:
        plant0 = PlantState(0.0, prof["z"], prof["xi"](x), prof["eta"](x),
                            prof["u"](x), np.atleast_1d(prof["X"]).astype(float),
                            cfg.d0.astype(float))
        obs0 = PlantState(0.0, prof["z_hat"], prof["xi_hat"](x),
                          prof["eta_hat"](x), prof["u_hat"](x),
                          np.atleast_1d(prof["X_hat"]).astype(float),
                          prof["d_hat"].astype(float))
    return plant0, obs0


def run_scenario(cfg: RunConfig, gains, obs_gains, grid=None):
    grid = grid or cfg.grid
    plant0, obs0 = build_initial(cfg, grid)
    observer = None
    controller = None
    if cfg.scenario == "state-feedback":
        controller = lambda st, ob: state_feedback_U(st, gains, grid)
    elif cfg.scenario == "output-feedback":
        observer = ObserverRun(cfg.spec, grid, obs_gains, obs0,
                               cfg.heat_scheme)
        controller = lambda st, ob: output_feedback_U(st.xi[0], ob, gains, grid)
    return simulate(cfg.spec, grid, plant0, controller, observer,
                    cfg.heat_scheme)


def export_trace(out: OutputDir, cfg: RunConfig, trace, norms, energies):
    header = ["t", "z", "absX"]
    header += [f"X_{i}" for i in range(trace.X.shape[1])]
    header += ["U", "omega0"]
    has_obs = trace.xi_hat is not None
    if has_obs:
        header += ["omega_e", "omega_a"]
    header += ["E_total"]
    rows = []
    for n in range(len(trace.t)):
        row = [trace.t[n], trace.z[n], np.linalg.norm(trace.X[n])]
        row += list(trace.X[n])
        row += [trace.U[n], norms["omega0"][n]]
        if has_obs:
            row += [norms["omega_e"][n], norms["omega_a"][n]]
        row += [energies["total"][n]]
        rows.append(row)
    out.write_csv("scalars.csv", header, rows)

    stride = max(1, cfg.snapshot_stride)
    fields = [("xi", trace.xi), ("eta", trace.eta), ("u", trace.u)]
    if has_obs:
        fields += [("hat_xi", trace.xi_hat), ("hat_eta", trace.eta_hat),
                   ("hat_u", trace.u_hat)]
    for n in range(0, len(trace.t), stride):
        for name, arr in fields:
            out.write_csv(f"{name}_{trace.t[n]:.6f}.csv", ["x", name],
                          list(zip(trace.x, arr[n])))


def export_kernels(out: OutputDir, ks, obsK=None):
    def dump(name, arr, x):
        rows = [(xi, yj, arr[i, j]) for i, xi in enumerate(x)
                for j, yj in enumerate(x)]
        out.write_csv(f"kernel_{name}.csv", ["x", "y", "value"], rows)

    dump("k", ks.k, ks.x)
    dump("l", ks.l, ks.x)
    dump("p", ks.p, ks.x)
    out.write_csv("kernel_gamma.csv", ["x"] + [f"gamma_{i}" for i in
                                               range(ks.gamma.shape[1])],
                  [(x,) + tuple(g) for x, g in zip(ks.x, ks.gamma)])
    out.write_csv("kernel_upsilon.csv", ["x"] + [f"upsilon_{i}" for i in
                                                 range(ks.Upsilon.shape[1])],
                  [(x,) + tuple(g) for x, g in zip(ks.x, ks.Upsilon)])
    if obsK is not None:
        dump("psi", obsK.psi, obsK.x)
        dump("phi", obsK.phi, obsK.x)
        out.write_csv("kernel_M.csv", ["x", "M"], list(zip(obsK.x, obsK.M)))


def export_gain_tables(out: OutputDir, gains, obs_gains=None):
    out.write_csv("gains_scalar.csv", ["name", "value"],
                  [(k, v) for k, v in sorted(gains.scalars().items())])
    out.write_csv("gains_K.csv", ["i", "K_i"],
                  [(i, v) for i, v in enumerate(gains.K)])
    out.write_csv("gains_n3_n4.csv", ["i", "value"],
                  [(f"n3_{i}", v) for i, v in enumerate(gains.n3)]
                  + [(f"n4_{i}", v) for i, v in enumerate(gains.n4)])
    rows = list(zip(gains.x, gains.N7, gains.N8, gains.N9, gains.N10,
                    gains.H7, gains.H8, gains.H9, gains.H10))
    out.write_csv("gains_functions.csv",
                  ["y", "N7", "N8", "N9", "N10", "H7", "H8", "H9", "H10"], rows)
    if obs_gains is not None:
        out.write_csv("gains_observer_scalar.csv", ["name", "value"],
                      [("L_z", obs_gains.L_z), ("Gamma_z", obs_gains.Gamma_z)]
                      + [(f"L_x_{i}", v) for i, v in enumerate(obs_gains.L_x)]
                      + [(f"L_d_{i}", v) for i, v in enumerate(obs_gains.L_d)])
        out.write_csv("gains_observer_functions.csv",
                      ["x", "Gamma_eta", "Gamma_xi"],
                      list(zip(obs_gains.x, obs_gains.Gamma_eta,
                               obs_gains.Gamma_xi)))


def _cmd_simulate(cfg: RunConfig):
    out = OutputDir(cfg.out_dir)
    stage = "design"
    try:
        K, ks, inv, gains, obsK, obs_gains = build_design(cfg)
        stage = "simulate"
        trace = run_scenario(cfg, gains, obs_gains)
        stage = "diagnostics"
        norms = diag.norm_series(trace, cfg.grid)
        if cfg.dimless is not None:
            energies = diag.energy_series(trace, cfg.dimless)
        else:
            energies = {"total": np.zeros(len(trace.t))}
        export_trace(out, cfg, trace, norms, energies)
        rate, r2 = (np.nan, np.nan)
        if not trace.diverged and norms["omega0"][-1] > 0:
            rate, r2 = diag.fit_decay(trace.t, np.maximum(norms["omega0"], 1e-300))
        out.write_csv("summary.csv", ["name", "value"], [
            ("scenario", cfg.scenario),
            ("diverged", int(trace.diverged)),
            ("omega0_final", norms["omega0"][-1]),
            ("omega0_rate", rate), ("omega0_fit_r2", r2),
            ("absX_final", float(np.linalg.norm(trace.X[-1]))),
            ("E_total_final", energies["total"][-1]),
        ])
        status = "diverged" if trace.diverged else "ok"
        out.manifest(status)
        return 1 if trace.diverged else 0
    except (SynthesisError, ConvergenceError, PlantSpecError) as err:
        print(f"synthesis error: {err}", file=sys.stderr)
        out.manifest(f"failed at {stage}")
        return 3
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        out.manifest(f"failed at {stage}")
        return 1


def _cmd_kernels(cfg: RunConfig):
    out = OutputDir(cfg.out_dir)
    try:
        K = place_poles(cfg.spec.A, cfg.spec.B, cfg.k_poles)
        ks = solve_kernels(cfg, K)
        obsK = solve_observer_kernels(cfg.spec, cfg.L_z,
                                      degree=cfg.kernel_degree,
                                      grid_n=cfg.kernel_grid_n)
        export_kernels(out, ks, obsK)
        res = control_kernel_residual(ks, cfg.spec)
        ores = observer_kernel_residual(obsK, cfg.spec)
        rows = [(k, v) for k, v in sorted(res.items())]
        rows += [(f"observer_{k}", v) for k, v in sorted(ores.items())]
        out.write_csv("kernel_residuals.csv", ["name", "value"], rows)
        out.manifest("ok")
        return 0
    except (SynthesisError, ConvergenceError, PlantSpecError) as err:
        print(f"synthesis error: {err}", file=sys.stderr)
        out.manifest("failed at kernels")
        return 3


def _cmd_export_gains(cfg: RunConfig):
    out = OutputDir(cfg.out_dir)
    try:
        K, ks, inv, gains, obsK, obs_gains = build_design(cfg)
        if obs_gains is None:
            obsK = solve_observer_kernels(cfg.spec, cfg.L_z,
                                          degree=cfg.kernel_degree,
                                          grid_n=cfg.kernel_grid_n)
            obs_gains = synthesize_observer_gains(cfg.spec, obsK, cfg.L_z,
                                                  cfg.x_poles, cfg.d_poles)
        export_gain_tables(out, gains, obs_gains)
        out.manifest("ok")
        return 0
    except (SynthesisError, ConvergenceError, PlantSpecError) as err:
        print(f"synthesis error: {err}", file=sys.stderr)
        out.manifest("failed at gains")
        return 3


def _refined(grid):
    return Grid(nx=2 * grid.nx - 1, dt=grid.dt / 2, t_final=grid.t_final)


def _cmd_verify(cfg: RunConfig, suites):
    out = OutputDir(cfg.out_dir)
    reports = []
    try:
        K = place_poles(cfg.spec.A, cfg.spec.B, cfg.k_poles)
        ks = solve_control_kernels_series(cfg.spec, K,
                                          degree=cfg.kernel_degree,
                                          n_fourier=cfg.n_fourier,
                                          grid_n=cfg.kernel_grid_n)
        obsK = solve_observer_kernels(cfg.spec, cfg.L_z,
                                      degree=cfg.kernel_degree,
                                      grid_n=cfg.kernel_grid_n)
        if "kernels" in suites:
            ks_it = solve_control_kernels_iterative(
                cfg.spec, K, m_iter=cfg.kernel_m_iter, n_fourier=cfg.n_fourier)
            reports.append(diag.verify_kernels(
                cfg.spec, ks, ks_it, obsK,
                series_solver=lambda deg: solve_control_kernels_series(
                    cfg.spec, K, degree=deg, n_fourier=cfg.n_fourier,
                    grid_n=cfg.kernel_grid_n)))
        if "transforms" in suites:
            reports.append(diag.verify_transforms(cfg.spec, ks, cfg.grid))
        if "target" in suites or "observer-target" in suites \
                or "convergence" in suites:
            inv = solve_inverse_kernels(ks)
            gains = synthesize_gains(cfg.spec, ks, inv, cfg.c1_acute)
            obs_gains = synthesize_observer_gains(cfg.spec, obsK, cfg.L_z,
                                                  cfg.x_poles, cfg.d_poles)
            if "target" in suites or "convergence" in suites:
                if cfg.dimless is None:
                    raise SynthesisError("target suite needs a physical plant")
                ratios = diag.target_certification(
                    cfg.spec, cfg.dimless, ks, gains, cfg.c1_acute)
                if "target" in suites:
                    reports.append(diag.verify_target(ratios))
                if "convergence" in suites:
                    reports.append(diag.verify_convergence(
                        *ratios["plant_residuals"]))
            if "observer-target" in suites:
                cfg_of = _with_scenario(cfg, "output-feedback")
                cfg_of.heat_scheme = "implicit"
                grid_c = Grid(nx=21, dt=1e-3, t_final=2.0)
                grid_f = _refined(grid_c)
                tr_c = run_scenario(cfg_of, gains, obs_gains, grid_c)
                tr_f = run_scenario(cfg_of, gains, obs_gains, grid_f)
                res_pair = []
                for tr, gr in ((tr_c, grid_c), (tr_f, grid_f)):
                    ob_g = resample_observer_kernels(obsK, gr.x)
                    coeffs = compute_observer_target_coeffs(cfg.spec, ob_g)
                    res_pair.append(diag.error_target_residuals(
                        tr, ob_g, cfg.spec, gr, coeffs))
                reports.append(diag.verify_observer_target(*res_pair))
    except (SynthesisError, ConvergenceError, PlantSpecError) as err:
        print(f"synthesis error: {err}", file=sys.stderr)
        out.manifest("failed at verify")
        return 3

    rows = []
    all_pass = True
    for rep in reports:
        for line in rep.lines():
            print(line)
        all_pass &= rep.passed
        for r in rep.rows:
            rows.append((rep.suite, r.name, r.value, r.threshold, r.verdict))
    out.write_csv("verification.csv",
                  ["suite", "check", "value", "threshold", "verdict"], rows)
    out.manifest("ok" if all_pass else "verification failures")
    return 0 if all_pass else 1


def _with_scenario(cfg: RunConfig, scenario):
    import copy
    new = copy.copy(cfg)
    new.scenario = scenario
    return new


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="thermobeam",
        description="Boundary control synthesis and simulation for the "
                    "thermally loaded rotating blade")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "kernels", "verify", "export-gains"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="config file (defaults to the shipped blade "
                            "scenario)")
        p.add_argument("--out", default=None, help="output directory")
        if name == "simulate":
            p.add_argument("--scenario", choices=("open-loop",
                                                  "state-feedback",
                                                  "output-feedback"))
            p.add_argument("--t-final", type=float)
            p.add_argument("--dt", type=float)
            p.add_argument("--dx", type=float)
            p.add_argument("--disturbance", choices=("on", "off"))
        if name == "verify":
            p.add_argument("--suite", default="all",
                           help="kernels, transforms, target, "
                                "observer-target, convergence, or all")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config or default_config_path())
        cfg = _apply_overrides(cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    if args.command == "simulate":
        return _cmd_simulate(cfg)
    if args.command == "kernels":
        return _cmd_kernels(cfg)
    if args.command == "export-gains":
        return _cmd_export_gains(cfg)
    suites = (("kernels", "transforms", "target", "observer-target",
               "convergence") if args.suite == "all"
              else tuple(s.strip() for s in args.suite.split(",")))
    return _cmd_verify(cfg, suites)


def _apply_overrides(cfg: RunConfig, args):
    import copy
    new = copy.copy(cfg)
    if getattr(args, "out", None):
        new.out_dir = args.out
    if getattr(args, "scenario", None):
        new.scenario = args.scenario
    grid = cfg.grid
    dt = getattr(args, "dt", None) or grid.dt
    t_final = getattr(args, "t_final", None) or grid.t_final
    dx = getattr(args, "dx", None)
    nx = grid.nx if dx is None else int(round(1.0 / dx)) + 1
    new.grid = Grid(nx=nx, dt=dt, t_final=t_final)
    try:
        new.grid.check(new.spec, new.heat_scheme)
    except PlantSpecError as err:
        raise ConfigError(str(err)) from None
    dist = getattr(args, "disturbance", None)
    if dist is not None:
        new.disturbance_on = dist == "on"
        if not new.disturbance_on:
            new.d0 = np.zeros(new.spec.m)
    return new


if __name__ == "__main__":
    sys.exit(main())
