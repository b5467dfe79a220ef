"""Command-line entry point.

Exit codes: 0 ok, 1 configuration error, 2 assumption warning,
3 fixed point not converged.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfg
from . import export
from .agent_solver import (
    brute_force_tree_value,
    integral_residual,
    solve_infinite_horizon,
    solve_value,
    solve_value_lattice,
    solve_value_timechanged,
)
from .equilibrium import fixed_point, initial_measure, volatility_curve
from .errors import ConfigError, NoInteriorSolution
from .filtering import logit, worker_count
from .model import check_assumptions
from .population import TransformedBoundaries, hitting_cdf_mc, hitting_cdf_pde

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NOT_CONVERGED = 0, 1, 2, 3


def _emit(args, obj):
    if not args.quiet:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_check(problem, args) -> int:
    report = check_assumptions(problem.loss, problem.signal, problem.c)
    _emit(args, report.to_dict())
    if args.out:
        export.write_json(_out(args) / "assumptions.json", report.to_dict())
    return EXIT_OK if report.all_hold else EXIT_ASSUMPTION


def run_solve_agent(problem, args) -> int:
    eta, _ = volatility_curve(initial_measure(problem), problem)
    surface = solve_value(eta, problem.loss, problem.c, problem.T, problem.n_space,
                          problem.n_time, substeps=problem.substeps)
    out = _out(args)
    export.write_boundaries(out / "boundaries.csv", surface.boundaries)
    export.write_csv(out / "value_t0.csv", ["pi", "V"], [surface.pi, surface.V[0]])
    if args.surface:
        export.write_surface(out / "surface.csv", surface)
    _emit(args, {"value_at_prior": surface.value_at(0, problem.prior),
                 "b0": float(surface.b[0]), "B0": float(surface.B[0])})
    return EXIT_OK


def run_solve_infinite(problem, args) -> int:
    sig = problem.signal
    band = {}
    code = EXIT_OK
    for name, eta in (("h_lower", sig.lower_bound), ("h_upper", sig.upper_bound)):
        try:
            sol = solve_infinite_horizon(eta, problem.loss, problem.c, problem.n_space)
            band[name] = {"eta": eta, "b": sol.b, "B": sol.B,
                          "smooth_fit_residual": sol.smooth_fit_residual}
        except NoInteriorSolution as exc:
            band[name] = {"eta": eta, "no_interior_solution": str(exc)}
            code = EXIT_ASSUMPTION
        except ValueError as exc:
            raise ConfigError(str(exc), "loss.variant") from exc
    export.write_json(_out(args) / "infinite.json", band)
    _emit(args, band)
    return code


def _equilibrium_files(problem, out: Path, quiet: bool):
    def progress(k, d, bd):
        if not quiet:
            print(f"iter {k:3d}  kolmogorov {d:.3e}  boundary {bd:.3e}", file=sys.stderr)

    result = fixed_point(problem, callback=progress)
    result.write(out)
    return result


def run_equilibrium(problem, args) -> int:
    result = _equilibrium_files(problem, _out(args), args.quiet)
    s = result.summary()
    _emit(args, {k: s[k] for k in ("converged", "iterations", "value_at_prior")})
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _sweep_one(job):
    raw, out, quiet = job
    problem = cfg.from_dict(raw)
    result = _equilibrium_files(problem, Path(out), quiet)
    return {"converged": result.converged, "iterations": result.iterations,
            "value_at_prior": result.value_at_prior}


def run_sweep(problem, args) -> int:
    sweep = problem.raw.get("sweep")
    if not isinstance(sweep, dict) or "key" not in sweep or "values" not in sweep:
        raise ConfigError("sweep needs {'key': ..., 'values': [...]}", "sweep")
    key, values = sweep["key"], sweep["values"]
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values must be a non-empty list", "sweep.values")
    out = _out(args)
    base = {k: v for k, v in problem.raw.items() if k != "sweep"}
    jobs, entries = [], []
    for v in values:
        raw = cfg.apply_overrides(base, [f"{key}={json.dumps(v)}"])
        cfg.from_dict(raw)  # validate every point before running any
        name = f"{key}={v}"
        jobs.append((raw, str(out / name), args.quiet))
        entries.append({"value": v, "dir": name})
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    for e, r in zip(entries, results):
        e.update(r)
    manifest = {"key": key, "entries": entries}
    export.write_json(out / "manifest.json", manifest)
    _emit(args, manifest)
    return EXIT_OK if all(e["converged"] for e in entries) else EXIT_NOT_CONVERGED


def run_cross_check(problem, args) -> int:
    """Independent oracles on the configured problem with the initial measure's volatility."""
    loss, c, T = problem.loss, problem.c, problem.T
    eta, _ = volatility_curve(initial_measure(problem), problem)
    surface = solve_value(eta, loss, c, T, problem.n_space, problem.n_time,
                          substeps=problem.substeps)
    report = {}

    eta0 = float(eta.values[0])
    report["tree_vs_lattice"] = abs(brute_force_tree_value(eta0, loss, c, T, 4, problem.prior)
                                    - solve_value_lattice(eta0, loss, c, T, 4, problem.prior))

    tc = solve_value_timechanged(eta, loss, c, T, problem.n_space, problem.n_time)
    rows = surface.times <= T - 0.1
    cols = (surface.pi >= 0.05) & (surface.pi <= 0.95)
    report["timechange_sup"] = float(np.max(np.abs(tc.V - surface.V)[np.ix_(rows, cols)]))

    bounds = TransformedBoundaries.from_curves(surface.boundaries)
    L0 = logit(problem.prior)
    paths = min(problem.paths, 100_000)
    kd = 0.0
    for th in (0, 1):
        mc = hitting_cdf_mc(bounds, eta, L0, th, paths, problem.dt, problem.seed)
        pde = hitting_cdf_pde(bounds, eta, L0, th)
        kd = max(kd, float(np.max(np.abs(mc.cdf - pde.cdf))))
    report["mc_vs_pde_kolmogorov"] = kd

    if loss.smooth:
        r_lo, r_up, se_lo, se_up = integral_residual(surface.boundaries, eta, loss, c, 0.0,
                                                     paths, problem.seed)
        report["integral_residual"] = {"lower": r_lo, "upper": r_up,
                                       "se_lower": se_lo, "se_upper": se_up}
    export.write_json(_out(args) / "cross_check.json", report)
    _emit(args, report)
    return EXIT_OK


COMMANDS = {
    "check": run_check,
    "solve-agent": run_solve_agent,
    "solve-infinite": run_solve_infinite,
    "equilibrium": run_equilibrium,
    "sweep": run_sweep,
    "cross-check": run_cross_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mfg-seqtest", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON problem file")
    parser.add_argument("--out", default=None, help="output directory (created if absent)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override applied after the file, repeatable")
    parser.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (u64)")
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument("--surface", action="store_true",
                        help="solve-agent: also write the full surface as t,pi,V,stop")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out is None and args.command != "check":
        args.out = "out"
    try:
        problem = cfg.load(args.config, args.set, args.seed)
        return COMMANDS[args.command](problem, args)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
