"""Command-line harness: ground-state, landscape, solve, lift and verify.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.  Every
command writes CSV/JSON into the output directory plus a manifest JSON.
"""
import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import sympy
from scipy import fft

from . import __version__
from .ansatz import PeakSetup
from .config import default_xi_axes, load_config
from .errors import ConfigError, InvalidParameter, LsredError
from .fullsolve import continuation, corrected_ansatz, gamma_maximum, newton_solve, write_continuation_csv
from .grid import DiscreteField, PeriodicGrid
from .groundstate import energy_constant, profile_moment, solve_ground_state
from .lift import (hm_condition_check, lift_warped, revolution_scenario, warped_coefficients,
                   warped_product_from_expression, warped_projection_fiber)
from .manifold import build_circle, build_round_sphere
from .reduction import landscape, loglog_slope
from .verify import FAULTS, run_suite

HM_TOL = 1e-6


class NumericalFailure(Exception):
    """A command finished but its numerical outcome is a failure (exit code 1)."""


def _tag(eps):
    return f"{eps:g}"


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class Run:
    """Output directory, file list and timings of one command."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.timings = {}

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def timed(self, label, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timings[label] = time.perf_counter() - t0


def _profile(config, run):
    return run.timed("ground_state", solve_ground_state, config.n, config.p, tol=config.tol("shooting"))


def _periodic_manifold(config):
    manifold = config.build_manifold()
    if len(manifold.chart(0).periodic) != manifold.dim:
        raise ConfigError(f"kind = {config.manifold['kind']} has no fully periodic chart; "
                          "use flat_torus, circle or surface_of_revolution", key="kind")
    return manifold


def _setup_factory(config, manifold, profile, coeffs):
    def make(eps):
        grid = PeriodicGrid.for_epsilon(manifold, eps, config.nodes_per_eps)
        return PeakSetup(profile, grid, coeffs, eps, cutoff=config.cutoff)
    return make


# ---------------------------------------------------------------------------
# commands


def cmd_ground_state(config, run, args):
    prof = _profile(config, run)
    prof.to_files(run.path("ground_state.csv"), run.path("ground_state.json"))
    moment = profile_moment(prof, config.p)
    print(f"U(0) = {prof.center_value:.12g}")
    print(f"int U^p = {moment:.12g}")
    print(f"C_p = {energy_constant(prof):.12g}")
    return {"U0": prof.center_value, "int_U_p": moment, "C_p": energy_constant(prof)}


def cmd_landscape(config, run, args):
    manifold = _periodic_manifold(config)
    prof = _profile(config, run)
    coeffs = config.build_coefficients()
    make = _setup_factory(config, manifold, prof, coeffs)
    axes = default_xi_axes(config, manifold)
    gaps, summaries = [], []
    for eps in config.epsilons:
        setup = make(eps)
        land = run.timed(f"landscape_{_tag(eps)}", landscape, setup, axes, tol=config.tol("fixed_point"),
                         progress=_log)
        land.write(run.path(f"landscape_eps{_tag(eps)}.csv"), run.path(f"critical_eps{_tag(eps)}.json"))
        summary = land.fit_summary()
        summaries.append(summary)
        gaps.append(summary["max_abs_jtilde_minus_cp_gamma"])
        print(f"eps = {eps:g}: max |J~ - C_p Gamma| = {summary['max_abs_jtilde_minus_cp_gamma']}, "
              f"degenerate = {summary['degenerate']}, failed nodes = {summary['failed_nodes']}")
    slope = None
    usable = [(e, g) for e, g in zip(config.epsilons, gaps) if g is not None and g > 0]
    if len(usable) >= 2:
        slope = loglog_slope(*zip(*usable))
        print(f"fitted slope of max |J~ - C_p Gamma| versus eps: {slope:.4f}")
    degenerate = all(s["degenerate"] for s in summaries)
    if degenerate:
        print("landscape is degenerate (flat): no isolated critical points")
    result = {"per_eps": summaries, "slope": slope, "degenerate": degenerate}
    _write_json(run.path("landscape_summary.json"), result)
    return result


def _seed_xi(config, coeffs, manifold):
    if config.solve["seed_xi"] is not None:
        return np.asarray(config.solve["seed_xi"], dtype=float)
    xi, _ = gamma_maximum(coeffs, manifold, config.p)
    return xi


def cmd_solve(config, run, args):
    manifold = _periodic_manifold(config)
    prof = _profile(config, run)
    coeffs = config.build_coefficients()
    make = _setup_factory(config, manifold, prof, coeffs)
    xi0 = _seed_xi(config, coeffs, manifold)
    initial = config.solve["initial"]
    tol, max_iter = config.tol("newton"), config.solve["max_iter"]
    if initial == "zero":
        setup = make(config.epsilons[0])
        _, rep = run.timed("solve", newton_solve, setup, np.zeros(setup.grid.shape), tol=tol, max_iter=max_iter)
        rep.seed_xi = []
        reports, solutions = [rep], []
    else:
        first = None
        if initial != "ansatz":
            path = Path(initial)
            if not path.is_absolute() and config.path:
                path = Path(config.path).parent / path
            grid = make(config.epsilons[0]).grid
            first = DiscreteField.from_csv(path, grid)
        reports, solutions = run.timed("solve", continuation, make, config.epsilons, xi0, tol=tol,
                                       max_iter=max_iter, reseed=config.solve["reseed"], progress=_log,
                                       first_seed=first)
    for rep, u in zip(reports, solutions + [None] * (len(reports) - len(solutions))):
        rep.to_json(run.path(f"solve_eps{_tag(rep.eps)}.json"))
        if u is not None:
            u.to_csv(run.path(f"solution_eps{_tag(rep.eps)}.csv"), name="u")
        print(f"eps = {rep.eps:g}: {rep.status} in {rep.iterations} iterations, residual {rep.final_residual:.3e}, "
              f"peak {np.round(rep.peak, 6).tolist()}, height {rep.peak_height:.8g}")
    write_continuation_csv(reports, run.path("continuation.csv"))
    failed = [r for r in reports if not r.converged]
    if failed or len(reports) < len(config.epsilons):
        raise NumericalFailure(f"stage eps = {failed[0].eps:g} ended with status {failed[0].status}"
                               if failed else "continuation stopped early")
    return {"stages": [r.status for r in reports]}


def _warped_for(config):
    kind = config.manifold.get("kind")
    if kind == "surface_of_revolution":
        t, curve = config.curve()
        scen = revolution_scenario(t, curve, k=config.manifold.get("fiber_dim", 1), p=config.p)
        return scen.warped, scen
    if config.lift["f"] is None:
        raise ConfigError("lift needs kind = surface_of_revolution or a warping function", key="f")
    k = config.manifold.get("fiber_dim", 1)
    fiber = build_circle(1.0) if k == 1 else build_round_sphere(k, 1.0)
    return warped_product_from_expression(config.build_manifold(), fiber, config.lift["f"]), None


def cmd_lift(config, run, args):
    config.require_manifold()
    wp, scen = _warped_for(config)
    prof = _profile(config, run)
    coeffs = warped_coefficients(wp)
    eps = config.epsilons[-1]
    grid = PeriodicGrid.for_epsilon(wp.base, eps, config.nodes_per_eps)
    setup = PeakSetup(prof, grid, coeffs, eps, cutoff=config.cutoff)
    xi0 = _seed_xi(config, coeffs, wp.base)
    seed, _ = corrected_ansatz(setup, xi0)
    u, rep = run.timed("base_solve", newton_solve, setup, seed, tol=config.tol("newton"),
                       max_iter=config.solve["max_iter"])
    rep.to_json(run.path("base_solve.json"))
    if not rep.converged:
        raise NumericalFailure(f"base Newton solve ended with status {rep.status}")
    lifted, faxes, report = run.timed("lift", lift_warped, u, wp, eps, config.p, tol=10 * config.tol("newton"),
                                      samples=config.lift["samples"], seed=config.seed)
    report.to_csv(run.path("lift_residuals.csv"))
    power = config.lift["dilation_power"]
    hm = hm_condition_check(warped_projection_fiber(wp, power), seed=config.seed)
    payload = {"lift": report.as_dict(), "hm_fiber_projection": {"dilation_power": power, **hm.as_dict()},
               "bound": config.lift["bound"], "base_solve": {"status": rep.status, "peak": rep.peak}}
    if scen is not None:
        payload["scenario"] = scen.as_dict()
    _write_json(run.path("lift.json"), payload)
    print(f"source residual {report.source_sampled_residual:.3e}, lifted residual "
          f"{report.lifted_sampled_residual:.3e}, ratio {report.ratio:.4f} (bound {config.lift['bound']:g})")
    print(f"fiber projection with lam = f^-{power:g}: hm residual {hm.residual:.3e}")
    if report.ratio > config.lift["bound"]:
        raise NumericalFailure(f"lifted residual ratio {report.ratio:.3g} exceeds bound {config.lift['bound']:g}")
    if hm.residual > HM_TOL:
        raise NumericalFailure(f"dilation lam = f^-{power:g} fails the harmonic-morphism check "
                               f"(residual {hm.residual:.3g})")
    return payload


def cmd_verify(config, run, args):
    seed = args.seed if args.seed is not None else (config.seed if config else 0)
    results = run_suite(args.fault or (), mesh_factor=args.mesh_factor, seed=seed, progress=print)
    with run.path("verify.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["module", "check", "passed", "detail"])
        for r in results:
            writer.writerow([r.module, r.name, int(r.passed), r.detail])
    failures = sum(not r.passed for r in results)
    print(f"{len(results) - failures} passed, {failures} failed")
    return {"failures": failures, "checks": [r.__dict__ for r in results]}


COMMANDS = {"ground-state": cmd_ground_state, "landscape": cmd_landscape, "solve": cmd_solve,
            "lift": cmd_lift, "verify": cmd_verify}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration file")
    common.add_argument("--out", help="output directory (overrides [output] directory)")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("--seed", type=int, help="random seed (overrides [output] seed)")
    common.add_argument("--epsilon-override", help="comma-separated decreasing eps schedule")
    parser = argparse.ArgumentParser(prog="lsred", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lsred {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "verify":
            p.add_argument("--fault", action="append", choices=sorted(FAULTS),
                           help="inject a fault (negative control); repeatable")
            p.add_argument("--mesh-factor", type=float, default=1.0,
                           help="multiply nodes per eps (2 halves the mesh spacing)")
    return parser


def _apply_overrides(config, args):
    if args.epsilon_override:
        try:
            eps = [float(v) for v in args.epsilon_override.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--epsilon-override {args.epsilon_override!r} is not a number list") from None
        if not eps or min(eps) <= 0 or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("--epsilon-override must be positive and strictly decreasing")
        config.epsilons = eps
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.output = args.out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    config, run = None, None
    try:
        if args.config:
            config = load_config(args.config)
            _apply_overrides(config, args)
        elif args.command != "verify":
            raise ConfigError("--config is required for this command")
        out = args.out or (config.output if config else "out")
        run = Run(out)
        with fft.set_workers(max(1, args.threads)):
            result = COMMANDS[args.command](config, run, args)
        status, code = "ok", 0
        if args.command == "verify":
            code = min(result["failures"], 125)
            status = "ok" if code == 0 else "failures"
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InvalidParameter as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        status, code = "invalid-parameter", 2
    except (NumericalFailure, LsredError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        status, code = "numerical-failure", 1
    if run is None:
        return code
    manifest = {
        "command": args.command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "status": status,
        "exit_code": code,
        "config": config.echo() if config else None,
        "config_text": config.source if config else None,
        "versions": {"lsred": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "sympy": sympy.__version__},
        "timings": {**run.timings, "total": time.perf_counter() - t0},
        "files": run.files,
    }
    _write_json(run.out / f"manifest_{args.command}.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
