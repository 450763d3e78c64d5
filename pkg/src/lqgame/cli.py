"""Command-line entry point.

Exit codes: 0 ok, 1 invalid input, 2 definiteness condition fails,
3 Riccati blow-up, 4 a checked bound fails, 5 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, sim
from .duopoly import DuopolyParams, build_duopoly, compute_ring_j, duopoly_cost, emit_figures, explicit_closed_loop
from .errors import AcceptanceFailure, ConditionError, DataError, LQGameError, ValidationError
from .filter import discrete_kalman_oracle, run_filter, write_filter_csv
from .model import ProblemSpec, check_conditions, load_spec, validate_spec
from .solvers import check_sigma_psd, solve_game, write_solution_csvs
from .synthesis import build_laws, closed_loop, write_gains_csv

log = logging.getLogger("lqgame")

COMMANDS = ("solve", "simulate", "verify-saddle", "verify-identities", "filter-check", "duopoly")


# --------------------------------------------------------------------------
# helpers

def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _delta(text: str | None, grid, width: int):
    """A constant, or a CSV whose last column holds the N + 1 node values."""
    if text is None:
        return 0.0
    try:
        return float(text)
    except ValueError:
        pass
    header, data = io.read_csv(text)
    if data.ndim == 1:
        data = data[:, None]
    cols = data[:, -width:]
    if cols.shape[0] != grid.N + 1:
        raise DataError(f"{text}: perturbation has {cols.shape[0]} rows, grid needs {grid.N + 1}")
    return cols


def _load_problem(args) -> tuple[ProblemSpec, float, DuopolyParams | None]:
    """Spec from ``--spec`` or the built-in duopoly, regridded by ``--steps``."""
    if args.spec:
        spec = load_spec(args.spec)
        if args.steps:
            spec = spec.with_grid(args.steps)
        params, ring = None, 0.0
    else:
        params = DuopolyParams.load(args.params) if getattr(args, "params", None) else DuopolyParams.default()
        if args.steps:
            params = params.with_steps(args.steps)
        spec = build_duopoly(params)
        ring = compute_ring_j(params)
    result = validate_spec(spec)
    if not result.ok:
        raise ValidationError(result.violations)
    return spec, ring, params


def _config(args, spec: ProblemSpec) -> dict:
    opts = {k: v for k, v in vars(args).items() if k not in ("func", "out", "no_plots", "verbose")}
    return {"options": opts, "problem": spec.to_dict()}


def _meta(args, spec, seed=None) -> dict:
    meta = {"command": args.command, "config_digest": io.config_digest(_config(args, spec))}
    if seed is not None:
        meta["seed"] = seed
        meta["rng"] = sim.RNG_DESCRIPTION
    return meta


def _solve(spec, ring, form=None):
    report = check_conditions(spec)
    if form is not None and not report.holds(form):
        raise ConditionError(f"Condition ({form}) fails: {report.describe(form)}")
    if not (report.holds("I") or report.holds("II")):
        raise ConditionError(f"neither condition holds: {report.describe('I')}; {report.describe('II')}")
    solved = solve_game(spec, ring)
    check_sigma_psd(solved.sigma)
    laws = build_laws(spec, solved.theta, solved.nu, families={form} if form else None, report=report)
    return solved, laws, report


def _fail_if(failed: list[str]) -> None:
    if failed:
        raise AcceptanceFailure("bounds violated: " + ", ".join(failed))


# --------------------------------------------------------------------------
# commands

def cmd_solve(args) -> int:
    spec, ring, _ = _load_problem(args)
    solved, laws, report = _solve(spec, ring, args.form)
    out = Path(args.out)
    meta = _meta(args, spec)
    write_solution_csvs(solved, out, meta)
    write_gains_csv(out / "gains.csv", laws, meta)
    cl = closed_loop(spec, solved.theta, solved.nu)
    summary = {**meta, **solved.summary.as_dict(), "conditions": {"I": report.condI, "II": report.condII,
                                                                 "I&II": report.condIandII},
               "law_families": sorted(laws.families), "closed_loop_form": cl.form,
               "closed_loop_expanded_discrepancy": cl.expanded_discrepancy, "grid": {"T": spec.grid.T, "N": spec.grid.N}}
    io.write_json(out / "summary.json", summary)
    if not args.no_plots:
        from .plotting import render_solution
        render_solution(spec.grid.t, solved.P.values, solved.p.values, solved.sigma.values, out / "figures")
    print(f"Gamma = {solved.summary.gamma:.10g}  Jtilde = {solved.summary.jtilde:.10g}  "
          f"value = {solved.summary.value:.10g}")
    return 0


def _strategy(args, spec):
    if args.strategy == "saddle":
        return sim.Strategy.saddle()
    if args.strategy == "perturbed_p1":
        return sim.Strategy.perturbed_p1(_delta(args.delta1, spec.grid, spec.k1), spec.grid, spec.k1, args.form or "I")
    return sim.Strategy.perturbed_p2(_delta(args.delta2, spec.grid, spec.k2), spec.grid, spec.k2, args.form or "I")


def cmd_simulate(args) -> int:
    spec, ring, _ = _load_problem(args)
    solved, laws, _ = _solve(spec, ring, args.form if args.strategy != "saddle" else None)
    strategy = _strategy(args, spec)
    batch = sim.run_batch(solved, laws, strategy, args.paths, args.seed, keep=True, workers=args.workers)
    out = Path(args.out)
    meta = _meta(args, spec, args.seed)
    sim.write_costs_csv(out / "costs.csv", batch, meta)
    b = batch.bundle.path(0)
    write_filter_csv(out / "trajectory.csv", spec.grid.t, b.xhat[0], b.What[0], meta)
    est = sim.estimate_cost(spec, batch) if args.paths >= 2 else {}
    summary = {**meta, **solved.summary.as_dict(), "strategy": strategy.tag, "paths": args.paths,
               "grid": {"T": spec.grid.T, "N": spec.grid.N},
               "estimates": {k: v.as_dict() for k, v in est.items()}}
    if strategy.tag != "saddle":
        summary["predicted_gap"] = sim.predicted_gap(spec, strategy)
    io.write_json(out / "summary.json", summary)
    if not args.no_plots:
        from .plotting import render_trajectory
        render_trajectory(spec.grid.t, b.xhat[0], b.u[0], out / "figures", k1=spec.k1)
    for k, v in est.items():
        print(f"{k:>9}: {v.mean:.6g} +/- {v.std_error:.2g}")
    return 0


def cmd_verify_saddle(args) -> int:
    spec, ring, _ = _load_problem(args)
    form = args.form or "I"
    solved, laws, _ = _solve(spec, ring, form)
    d1 = _delta(args.delta1, spec.grid, spec.k1)
    d2 = _delta(args.delta2, spec.grid, spec.k2)
    rep = sim.verify_saddle(solved, laws, d1, d2, args.paths, args.seed, form, workers=args.workers)
    out = Path(args.out)
    meta = _meta(args, spec, args.seed)
    doc = {**meta, **rep.as_dict()}
    io.write_json(out / "saddle_report.json", doc)
    rows = [[str(g["player"]), g["measured"], g["paired_se"], g["predicted"], g["z"]] for g in doc["gaps"]]
    io.write_csv(out / "gaps.csv", ["player", "measured", "paired_se", "predicted", "z"], rows, meta)
    if not args.no_plots:
        from .plotting import render_gap_table
        render_gap_table(doc, out / "figures")
    print(f"{'player':>6} {'measured':>12} {'paired SE':>10} {'predicted':>10} {'z':>7}")
    for g in doc["gaps"]:
        print(f"{g['player']:>6} {g['measured']:>12.6f} {g['paired_se']:>10.2e} {g['predicted']:>10.6f} {g['z']:>7.2f}")
    for name, ok in rep.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    _fail_if([k for k, ok in rep.checks.items() if not ok])
    return 0


def cmd_verify_identities(args) -> int:
    spec, ring, _ = _load_problem(args)
    solved, laws, report = _solve(spec, ring)
    checks: dict[str, bool] = {}
    doc: dict = {}

    batch = sim.run_batch(solved, laws, sim.Strategy.saddle(), args.paths, args.seed, keep=True)
    pen = np.abs(sim.penalty_integrand(solved, batch.bundle)).max()
    res = sim.CostEstimate.of(batch.residual, "residual")
    doc["completion_of_squares"] = {"max_penalty_integrand": pen, "residual": res.as_dict(), "z": res.z(0.0)}
    checks["penalty integrand <= 1e-9"] = pen <= 1e-9
    checks["residual mean within 3 SE"] = abs(res.z(0.0)) <= 3.0

    noise = sim.NoisePath.generate(args.seed, 0, spec.grid, spec.d, spec.dbar)
    dec = sim.decomposition_check(spec, args.control, noise, solved.sigma)
    doc["decomposition"] = dec
    checks["decomposition <= 1e-8"] = max(dec["max_x"], dec["max_y"]) <= 1e-8

    if report.condIandII:
        co = sim.coincidence_check(solved, laws, min(args.paths, 100), args.seed)
        doc["coincidence"] = {"max_control_difference": co}
        checks["coincidence <= 1e-10"] = co <= 1e-10
    else:
        doc["coincidence"] = {"skipped": "Condition (I & II) fails"}

    out = Path(args.out)
    meta = _meta(args, spec, args.seed)
    io.write_json(out / "identities.json", {**meta, **doc, "checks": checks})
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    _fail_if([k for k, ok in checks.items() if not ok])
    return 0


def cmd_filter_check(args) -> int:
    spec, ring, _ = _load_problem(args)
    solved, laws, _ = _solve(spec, ring)
    batch = sim.run_batch(solved, laws, sim.Strategy.saddle(), args.paths, args.seed, keep=True, workers=args.workers)
    stats = sim.filter_statistics(solved, batch)
    b = batch.bundle
    n_or = min(b.paths, 20)
    dy = np.diff(b.y[:n_or], axis=1)
    m, cov = discrete_kalman_oracle(dy, b.u[:n_or], spec)
    xh, _ = run_filter(dy, b.u[:n_or], spec, solved.sigma)
    stats["oracle"] = {"max_xhat_discrepancy": float(np.abs(xh - m).max()),
                       "max_covariance_discrepancy": float(np.abs(cov - solved.sigma.values).max())}
    out = Path(args.out)
    meta = _meta(args, spec, args.seed)
    io.write_json(out / "filter_check.json", {**meta, **stats})
    checks = {f"covariance at node {c['node']}": c["ok"] for c in stats["covariance"]}
    checks["orthogonality"] = stats["orthogonality"]["ok"]
    checks["innovation"] = stats["innovation"]["ok"]
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    _fail_if([k for k, ok in checks.items() if not ok])
    return 0


def cmd_duopoly(args) -> int:
    args.spec = None
    spec, ring, params = _load_problem(args)
    solved, laws, _ = _solve(spec, ring)
    batch = sim.run_batch(solved, laws, sim.Strategy.saddle(), args.paths, args.seed, keep=True)
    out = Path(args.out)
    meta = _meta(args, spec, args.seed)
    emit_figures(solved, batch.bundle, out, 0, meta)
    A_cl, b_cl = explicit_closed_loop(params, solved)
    cl = closed_loop(spec, solved.theta, solved.nu)
    full = duopoly_cost(params, batch.bundle)
    summary = {**meta, **solved.summary.as_dict(), "paths": args.paths,
               "grid": {"T": spec.grid.T, "N": spec.grid.N},
               "closed_loop_formula_discrepancy": float(max(np.abs(A_cl - cl.A_cl).max(), np.abs(b_cl - cl.b_cl).max())),
               "control_increment_correlation": {"mean": float(batch.ucorr.mean()),
                                                 "fraction_negative": float(np.mean(batch.ucorr < 0))}}
    if args.paths >= 2:
        summary["J"] = sim.CostEstimate.of(batch.J, "J").as_dict()
        summary["full_cost"] = sim.CostEstimate.of(full, "full").as_dict()
    io.write_json(out / "summary.json", summary)
    if not args.no_plots:
        from .plotting import render_solution, render_trajectory
        render_solution(spec.grid.t, solved.P.values, solved.p.values, solved.sigma.values, out / "figures")
        render_trajectory(spec.grid.t, batch.bundle.xhat[0], batch.bundle.u[0], out / "figures")
    print(f"value = {solved.summary.value:.10g}  (Gamma = {solved.summary.gamma:.10g}, "
          f"Jtilde = {solved.summary.jtilde:.10g}, offset = {ring:.10g})")
    return 0


# --------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; keep 2 for condition failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lqgame", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, paths: int, seed: int = 42, spec=True):
        if spec:
            p.add_argument("--spec", help="problem JSON (default: built-in duopoly)")
        p.add_argument("--params", help="duopoly parameter JSON used when --spec is absent")
        p.add_argument("--steps", type=_positive_int, help="override the number of grid steps N")
        p.add_argument("--paths", type=_positive_int, default=paths)
        p.add_argument("--seed", type=_seed, default=seed)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
        p.add_argument("--workers", type=_positive_int, default=1, help="threads for path batches")

    p = sub.add_parser("solve", help="Riccati solutions, offsets, gains and the value")
    common(p, 1)
    p.add_argument("--form", choices=("I", "II"), help="require this law family")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo batch under one strategy")
    common(p, 100)
    p.add_argument("--strategy", choices=("saddle", "perturbed_p1", "perturbed_p2"), default="saddle")
    p.add_argument("--form", choices=("I", "II"))
    p.add_argument("--delta1")
    p.add_argument("--delta2")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-saddle", help="paired saddle-gap test")
    common(p, 10_000)
    p.add_argument("--form", choices=("I", "II"))
    p.add_argument("--delta1", default="0.5")
    p.add_argument("--delta2", default="0.5")
    p.set_defaults(func=cmd_verify_saddle)

    p = sub.add_parser("verify-identities", help="completion-of-squares, decomposition and coincidence checks")
    common(p, 1000)
    p.add_argument("--control", type=float, default=1.0, help="constant open-loop control for the decomposition")
    p.set_defaults(func=cmd_verify_identities)

    p = sub.add_parser("filter-check", help="filter covariance, orthogonality and innovation checks")
    common(p, 10_000)
    p.set_defaults(func=cmd_filter_check)

    p = sub.add_parser("duopoly", help="two-firm example with figure data")
    common(p, 100, spec=False)
    p.set_defaults(func=cmd_duopoly)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except LQGameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
