"""Command-line frontend.

Subcommands: ``simulate``, ``scan``, ``find``, ``stability`` and
``models list``. Each takes ``--config <path>`` (or ``--model <name>`` for a
catalog model with defaults) plus ``--horizon``, ``--param name=value``,
``--control name=expr`` and ``--out <dir>``.

Exit codes: 0 ok, 1 runtime failure, 2 egress violations, 3 undetermined
points only, 4 bracket failure, 5 stability failures, 64 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from . import __version__
from .config import ConfigError, Experiment, load_config, resolve
from .core import region_membership, MembershipKind, ExtPoint
from .egress import scan_boundary
from .integrate import IntegrationFailure, integrate_until_egress
from .models import CATALOG, build_model, run_analytic_checks
from .output import report, write_csv, write_json, write_svg
from .witness import BracketError, OmegaError, bisect_gamma, family_sweep, verify_uniform_stability

logger = logging.getLogger("wazewski")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VIOLATIONS = 2
EXIT_UNDETERMINED = 3
EXIT_BRACKET = 4
EXIT_UNSTABLE = 5
EXIT_CONFIG = 64


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _param(text: str) -> tuple[str, float]:
    k, v = _kv(text)
    try:
        return k, float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter {k!r} needs a number, got {v!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wazewski",
        description="Egress classification, Ważewski witnesses and stability probes for ODE models.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON experiment config")
    src.add_argument("--model", choices=sorted(CATALOG), help="catalog model with default settings")
    common.add_argument("--horizon", type=float, help="override the time horizon")
    common.add_argument("--param", type=_param, action="append", default=[], metavar="NAME=VALUE",
                        help="override a model parameter (repeatable)")
    common.add_argument("--control", type=_kv, action="append", default=[], metavar="NAME=EXPR",
                        help="override a controller sub-expression, e.g. v=0 (repeatable)")
    common.add_argument("--out", help="output directory (default from config, else ./out)")

    p = sub.add_parser("simulate", parents=[common], help="integrate one initial condition until egress")
    p.add_argument("--x0", type=_floats, help="initial state, comma separated")
    p.add_argument("--t0", type=float, help="initial time")

    sub.add_parser("scan", parents=[common], help="classify sampled boundary points (W- = W-- check)")
    p = sub.add_parser("find", parents=[common], help="bisect the curve to a witness trajectory")
    p.add_argument("--s-tol", type=float, help="bracket width on the curve parameter")
    sub.add_parser("stability", parents=[common], help="sampled uniform-stability probe at the equilibrium")
    sub.add_parser("checks", parents=[common], help="analytic boundary checks and the eigenvalue oracle")

    models = sub.add_parser("models", help="model catalog")
    msub = models.add_subparsers(dest="models_command", required=True)
    msub.add_parser("list", help="list catalog models with parameter defaults")
    return parser


def _experiment(args) -> Experiment:
    raw = load_config(args.config) if args.config else {"model": args.model}
    overrides = {
        "params": dict(args.param),
        "controls": dict(args.control),
        "horizon": args.horizon,
        "out": args.out,
    }
    if args.command == "simulate":
        sim = dict(raw.get("simulate", {}))
        if args.x0 is not None:
            sim["x0"] = args.x0
        if args.t0 is not None:
            sim["t0"] = args.t0
        if args.horizon is not None:
            sim["horizon"] = args.horizon
        if sim:
            raw = {**raw, "simulate": sim}
    if args.command == "find" and args.s_tol is not None:
        raw = {**raw, "find": {**raw.get("find", {}), "s_tol": args.s_tol}}
    if args.command == "stability" and args.horizon is not None:
        raw = {**raw, "stability": {**raw.get("stability", {}), "horizon": args.horizon}}
    return resolve(raw, overrides)


def cmd_simulate(exp: Experiment) -> int:
    sim = exp.resolved["simulate"]
    if "x0" not in sim:
        raise ConfigError("simulate needs an initial state (--x0 or simulate.x0)")
    x0 = sim["x0"]
    if len(x0) != exp.field.dim:
        raise ConfigError(f"x0 has {len(x0)} entries, the state has {exp.field.dim}")
    horizon = sim.get("horizon", exp.integrator.horizon)
    cfg = exp.integrator.with_horizon(horizon)
    mem = region_membership(ExtPoint(tuple(x0), float(sim["t0"])), exp.region)
    if mem.kind is MembershipKind.OUTSIDE:
        raise ConfigError(f"initial state {x0} lies outside the region")
    traj, outcome = integrate_until_egress(exp.field, exp.region, x0, float(sim["t0"]), cfg)
    out = exp.out_dir
    write_csv(out / "trajectory.csv", traj)
    result = {"outcome": outcome.to_dict(), "steps": len(traj) - 1, "grazing": traj.grazing, "notes": traj.notes}
    write_json(out / "simulate.json", report("simulate", exp.resolved, horizon, result))
    if exp.resolved["outputs"]["svg"]:
        write_svg(out / "trajectory.svg", [traj], exp.resolved["outputs"]["axes"], exp.region)
    print(f"{outcome.kind}: " + ", ".join(f"{k}={v}" for k, v in outcome.to_dict().items() if k != "kind"))
    return EXIT_OK


def cmd_scan(exp: Experiment) -> int:
    if not exp.samplers:
        raise ConfigError("scan needs samplers (scan.samplers) for a custom model")
    sc = exp.resolved["scan"]
    rep = scan_boundary(exp.field, exp.region, exp.samplers, sc["K"], sc["deriv_tol"])
    write_json(exp.out_dir / "scan.json", report("scan", exp.resolved, None, rep.to_dict()))
    print(f"sampled {rep.sampled}, skipped {rep.skipped}, violations {len(rep.violations)}, "
          f"undetermined {len(rep.undetermined)}, corners {len(rep.corners)}")
    for v in rep.violations:
        print(f"  egress without strict egress on {v['face']} at {v['state']} t={v['time']}")
    if rep.violations:
        return EXIT_VIOLATIONS
    if rep.undetermined:
        return EXIT_UNDETERMINED
    return EXIT_OK


def cmd_find(exp: Experiment) -> int:
    if exp.criteria is None:
        raise ConfigError("find needs criteria for a custom model")
    if not exp.curves and not exp.family:
        raise ConfigError("find needs a gamma curve for a custom model")
    opts = exp.resolved["find"]
    kw = {"refine": opts["refine"], "track_sep": opts["track_sep"]}
    out = exp.out_dir
    axes = exp.resolved["outputs"]["axes"]
    horizon = exp.criteria.horizon
    if exp.family:
        results, rejected = family_sweep(exp.field, exp.region, exp.curves, exp.criteria, exp.integrator,
                                         opts["s_tol"], **kw)
        payload = {
            "results": [r.to_dict() for r in results],
            "rejected": [{"curve_index": i, "reason": str(e), "endpoint": e.endpoint} for i, e in rejected],
        }
        write_json(out / "find.json", report("find", exp.resolved, horizon, payload))
        for r in results:
            write_csv(out / f"witness_{r.curve_index}.csv", r.witness)
        if results and exp.resolved["outputs"]["svg"]:
            write_svg(out / "witness.svg", [r.witness for r in results], axes, exp.region)
        for r in results:
            print(f"curve {r.curve_index}: start {list(r.start.state)} {r.witness_outcome.kind}")
        for i, e in rejected:
            print(f"curve {i}: rejected ({e})", file=sys.stderr)
        if exp.curves and not results:
            return EXIT_BRACKET
        return EXIT_OK
    try:
        res = bisect_gamma(exp.field, exp.region, exp.curves[0], exp.criteria, exp.integrator, opts["s_tol"], **kw)
    except BracketError as exc:
        payload = {"error": "bracket", "endpoint": exc.endpoint, "label": exc.label.value,
                   "outcome": exc.outcome.to_dict(), "message": str(exc)}
        write_json(out / "find.json", report("find", exp.resolved, horizon, payload))
        print(f"bracket precondition failed: {exc}", file=sys.stderr)
        return EXIT_BRACKET
    write_json(out / "find.json", report("find", exp.resolved, horizon, res.to_dict()))
    write_csv(out / "witness.csv", res.witness)
    if exp.resolved["outputs"]["svg"]:
        write_svg(out / "witness.svg", [res.witness], axes, exp.region)
    print(f"witness start {list(res.start.state)} after {res.iterations} bisections; "
          f"{res.witness_outcome.kind} to t={res.witness.t_end}")
    return EXIT_OK


def cmd_stability(exp: Experiment) -> int:
    if exp.equilibrium is None:
        raise ConfigError("stability probe needs an equilibrium")
    st = exp.resolved["stability"]
    if not st["radius_V"] < st["radius_U"]:
        raise ConfigError(f"stability probe needs radius_V < radius_U, got {st['radius_V']} >= {st['radius_U']}")
    cfg = exp.integrator.with_horizon(st["horizon"])
    rep = verify_uniform_stability(exp.field, exp.equilibrium, st["radius_V"], st["radius_U"], st["t0_grid"],
                                   st["samples"], cfg, st["seed"])
    write_json(exp.out_dir / "stability.json", report("stability", exp.resolved, st["horizon"], rep.to_dict()))
    print(f"{rep.samples} samples x {len(rep.t0_grid)} initial times: {len(rep.failures)} failures")
    return EXIT_OK if rep.passed else EXIT_UNSTABLE


def cmd_checks(exp: Experiment) -> int:
    if exp.bundle is None:
        raise ConfigError("analytic checks exist for catalog models only")
    checks = run_analytic_checks(exp.bundle)
    write_json(exp.out_dir / "checks.json", report("checks", exp.resolved, None, [c.to_dict() for c in checks]))
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} = {c.value!r}  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_RUNTIME


def cmd_models_list() -> int:
    for name, entry in CATALOG.items():
        print(f"{name:10s} {entry.description}")
        params = build_model(name).params
        if params:
            print("           params: " + ", ".join(f"{k}={v:g}" for k, v in params.items()))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "scan": cmd_scan,
    "find": cmd_find,
    "stability": cmd_stability,
    "checks": cmd_checks,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which collides with the violations code
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "models":
        return cmd_models_list()
    try:
        exp = _experiment(args)
        return COMMANDS[args.command](exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationFailure, OmegaError) as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
