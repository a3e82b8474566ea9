"""Command line: ``vacstar {equilibrium,simulate,sweep,check-eos} --config FILE``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import SWEEP_AXES, ConfigError, load_config
from .diagnostics import (
    PANEL_COLUMNS,
    SERIES_COLUMNS,
    FitError,
    fit_decay,
    series_quantity,
    series_row,
    theorem_rates,
)
from .equilibrium import (
    EquilibriumError,
    ShootingConfig,
    critical_mass_scan,
    enthalpy_distance_check,
    equilibrium_residual,
    integrate_profile,
    pressure_gradient_scale,
    solve_for_mass,
)
from .eos import verify_structure_conditions
from .io import snapshot_name, write_csv, write_json, write_json_atomic
from .simulator import AdmissibilityError, StateInvalidError, density_field, run

log = logging.getLogger("vacstar")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2
NUMERICAL_ERRORS = (EquilibriumError, ArithmeticError, StateInvalidError, FitError)


def version_string():
    return f"vacstar {__version__} ({kernels.BACKEND} kernels)"


def solve_profile(cfg, n_cells=None, grading_q=None):
    eq = cfg.equilibrium
    n = n_cells or cfg.sim.n_cells
    q = grading_q or cfg.sim.grading_q
    if eq.rho_c is not None:
        return integrate_profile(cfg.eos, eq.rho_c, eq.G, eq.ode_tol, n_cells=n, grading_q=q)
    shoot = ShootingConfig(eq.target_mass, (eq.rho_c_low, eq.rho_c_high), eq.tol_mass,
                           eq.ode_tol, eq.max_iter)
    return solve_for_mass(cfg.eos, shoot, eq.G, n_cells=n, grading_q=q)


def _manifest(command, cfg, started, status, exit_code, **extra):
    return {
        "command": command,
        "version": version_string(),
        "config": cfg.echo,
        "exit_status": exit_code,
        "status": status,
        "wall_clock_s": round(time.time() - started, 3),
        **extra,
    }


# ---------------------------------------------------------------------------
# equilibrium


def cmd_equilibrium(cfg, out, workers=1):
    started = time.time()
    profile = solve_profile(cfg)
    p = profile.pressure
    write_csv(out / "profile.csv", ["r", "rho", "phi", "i", "p"],
              zip(profile.xs, profile.rho_bar, profile.phi, profile.i_bar, p))
    residual = equilibrium_residual(profile)
    scale = pressure_gradient_scale(profile)
    check = enthalpy_distance_check(profile)
    report = {
        "R_bar": profile.R_bar,
        "M": profile.M,
        "rho_c": profile.rho_c,
        "error_estimate": {"R_bar": profile.error[0], "M": profile.error[1]},
        "residual": residual,
        "residual_scale": scale,
        "relative_residual": residual / scale,
        "enthalpy_distance": {"K8": check.K8, "K9": check.K9, "passed": check.passed,
                              "min_lower_margin": check.worst_lower,
                              "min_upper_margin": check.worst_upper},
    }
    write_json(out / "equilibrium_report.json", report)
    derived = {"gamma_bar": cfg.eos.gamma_bar, "R_bar": profile.R_bar, "M": profile.M,
               "rho_c": profile.rho_c}
    write_json_atomic(out / "manifest.json", _manifest(
        "equilibrium", cfg, started, "ok", EXIT_OK, derived=derived, report=report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def compute_fits(reports, dcfg, rates):
    t = np.array([r.t for r in reports])
    lo, hi = dcfg.fit_window
    sel = (t >= lo) & (t <= hi)
    records = []
    for qty, rate_name in dcfg.fits:
        predicted = rates.rates.get(rate_name)
        base = {"quantity": qty, "rate": rate_name, "window": [lo, hi], "predicted": predicted}
        if predicted is None:
            records.append({**base, "verdict": "skipped", "reason": "rate not defined"})
            continue
        if sel.sum() < 10:
            records.append({**base, "verdict": "skipped",
                            "reason": f"window holds {int(sel.sum())} samples"})
            continue
        values = series_quantity(reports, qty)
        if np.all(values[sel] == 0.0):
            records.append({**base, "fitted": None, "verdict": "pass",
                            "reason": "identically zero in window"})
            continue
        try:
            fit = fit_decay(t, values, (lo, hi), predicted, qty, dcfg.slack)
        except FitError as exc:
            records.append({**base, "fitted": None, "verdict": "fail", "reason": str(exc)})
            continue
        records.append({**base, **fit.as_record(), "rate": rate_name})
    return records


def simulate_into(cfg, out):
    """Run one simulation and write all outputs under ``out``; returns exit code."""
    started = time.time()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rates = theorem_rates(cfg.eos.gamma_bar, cfg.diagnostics.theta)
    try:
        profile = solve_profile(cfg)
    except NUMERICAL_ERRORS as exc:
        write_json_atomic(out / "manifest.json", _manifest(
            "simulate", cfg, started, f"equilibrium failed: {exc}", EXIT_NUMERICAL))
        return EXIT_NUMERICAL, {}
    try:
        traj = run(profile, cfg.perturbation, cfg.sim, cfg.diagnostics)
    except AdmissibilityError as exc:
        write_json_atomic(out / "manifest.json", _manifest(
            "simulate", cfg, started, f"inadmissible initial data: {exc}", EXIT_CONFIG))
        return EXIT_CONFIG, {"status": str(exc)}

    write_csv(out / "series.csv", SERIES_COLUMNS, (series_row(r) for r in traj.reports))
    for st in traj.snapshots:
        write_csv(out / "snapshots" / snapshot_name(st.t), ["x", "r", "v", "rho"],
                  zip(st.xs, st.r, st.v, density_field(st)))
    fits = compute_fits(traj.reports, cfg.diagnostics, rates)
    write_json(out / "fits.json", fits)

    r0 = traj.reports[0]
    lyap_inc = traj.lyapunov_increments()
    frak = np.array([r.frakE for r in traj.reports])
    derived = {
        "gamma_bar": rates.gamma_bar,
        "theta": rates.theta,
        "zeta": rates.zeta,
        "upsilon": rates.upsilon,
        "R_bar": profile.R_bar,
        "M": profile.M,
        "frakE0": r0.frakE,
        "frakE_max_ratio": float(frak.max() / frak[0]) if frak[0] > 0 else None,
        "lyapunov_max_relative_increase": float(lyap_inc.max()) if lyap_inc.size else 0.0,
        "steps": len(traj.step_t) - 1,
        "rejections": traj.rejections,
        "kernel_backend": kernels.BACKEND,
    }
    failed = traj.status != "ok"
    code = EXIT_NUMERICAL if failed else EXIT_OK
    write_json_atomic(out / "manifest.json", _manifest(
        "simulate", cfg, started, traj.status, code,
        derived=derived,
        failure_time=traj.failure_time,
        failure_message=traj.failure_message,
        small_regime_flags=traj.flags[:20],
        verdicts={f["quantity"]: f["verdict"] for f in fits},
    ))
    summary = {"frakE0": r0.frakE, "fits": fits, "status": traj.status}
    return code, summary


def cmd_simulate(cfg, out, workers=1):
    code, _ = simulate_into(cfg, out)
    return code


# ---------------------------------------------------------------------------
# sweep


def _sweep_point(args):
    cfg, axis, value, sub = args
    try:
        point = cfg.with_value(axis, value).validate()
    except ConfigError as exc:
        return EXIT_CONFIG, {"status": f"config error: {exc}"}
    try:
        return simulate_into(point, sub)
    except NUMERICAL_ERRORS as exc:
        return EXIT_NUMERICAL, {"status": f"failed: {exc}"}


def cmd_sweep(cfg, out, workers=1, axis=None, values=None):
    started = time.time()
    axis = axis or cfg.sweep.axis
    values = tuple(cfg.sweep.values if values is None else values)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}, got {axis!r}")
    if axis == "rho_c":
        curve = critical_mass_scan(cfg.eos, np.array(values), cfg.equilibrium.G,
                                   cfg.equilibrium.ode_tol, workers, cfg.scan.plateau_tol)
        rows = list(zip(curve.rho_c, curve.M, curve.R))
        write_csv(out / "mass_curve.csv", ["rho_c", "M", "R"], rows)
        write_csv(out / "summary.csv", ["rho_c", "M", "R", "running_max"],
                  zip(curve.rho_c, curve.M, curve.R, curve.running_max))
        extra = {
            "M_c_estimate": curve.M_c_estimate if len(values) else None,
            "last_decade_increment": curve.last_decade_increment if len(values) > 1 else None,
            "rising_at_edge": curve.rising_at_edge if len(values) > 1 else None,
            "failures": curve.failures,
        }
        write_json_atomic(out / "manifest.json", _manifest(
            "sweep", cfg, started, "ok", EXIT_OK, axis=axis, values=list(values), derived=extra))
        return EXIT_OK

    jobs = [(cfg, axis, float(v), out / f"{axis}_{k:03d}") for k, v in enumerate(values)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]

    fit_names = [q for q, _ in cfg.diagnostics.fits]
    header = ["value", "exit", "frakE0"]
    for q in fit_names:
        header += [f"{q}_fitted", f"{q}_predicted", f"{q}_pass"]
    rows = []
    for (_, _, value, _), (code, summary) in zip(jobs, results):
        row = [value, code, summary.get("frakE0", math.nan)]
        recs = {f["quantity"]: f for f in summary.get("fits", [])}
        for q in fit_names:
            rec = recs.get(q, {})
            fitted = rec.get("fitted")
            pred = rec.get("predicted")
            row += [math.nan if fitted is None else fitted,
                    math.nan if pred is None else pred,
                    int(rec.get("verdict") == "pass")]
        rows.append(row)
    write_csv(out / "summary.csv", header, rows)
    failures = [v for (_, _, v, _), (c, _) in zip(jobs, results) if c != EXIT_OK]
    write_json_atomic(out / "manifest.json", _manifest(
        "sweep", cfg, started, "ok", EXIT_OK, axis=axis, values=list(values),
        point_failures=failures))
    return EXIT_OK


# ---------------------------------------------------------------------------
# check-eos


def cmd_check_eos(cfg, out, workers=1):
    started = time.time()
    rep = verify_structure_conditions(cfg.eos, cfg.check.s_max, cfg.check.n_samples)
    write_csv(out / "check_eos.csv", ["s", "log_slope", "curvature"],
              zip(rep.s, rep.log_slope, rep.curvature))
    result = {
        "passed": rep.passed,
        "message": rep.message,
        "min_log_slope": rep.min_log_slope,
        "max_log_slope": rep.max_log_slope,
        "gamma_bar": rep.gamma_bar,
        "gamma_bar_empirical": rep.gamma_bar_empirical,
        "kappa_limit": rep.kappa_limit,
    }
    code = EXIT_OK if rep.passed else EXIT_NUMERICAL
    write_json_atomic(out / "manifest.json", _manifest(
        "check-eos", cfg, started, "pass" if rep.passed else "fail", code, derived=result))
    return code


COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "check-eos": cmd_check_eos,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="vacstar", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=version_string())
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--out", help="output directory (default: [output] dir or ./out)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            sp.add_argument("--axis", choices=SWEEP_AXES)
            sp.add_argument("--values", help="comma-separated values (overrides [sweep] values)")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = load_config(args.config, rates=args.command in ("simulate", "sweep"))
        out = Path(args.out or cfg.output or "out")
        out.mkdir(parents=True, exist_ok=True)
        kwargs = {}
        if args.command == "sweep":
            kwargs["axis"] = args.axis
            if args.values is not None:
                kwargs["values"] = [float(v) for v in args.values.split(",") if v.strip()]
        return COMMANDS[args.command](cfg, out, args.workers, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.command == "sweep" and "could not convert" in str(exc):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
