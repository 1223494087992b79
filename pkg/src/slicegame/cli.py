"""``slicegame`` command line: generate, solve, metrics, sweep.

Exit codes: 0 success, 1 invalid input or usage, 2 solver failure.
``--config FILE`` reads a JSON object whose keys are the long option names
(dashes or underscores); explicit command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .best_response import SolverError
from .dynamics import DynamicsError, DynamicsOptions, run_dynamics
from .experiments import (
    ALL_METRICS,
    RESULT_COLUMNS,
    SweepConfig,
    aggregate,
    evaluate_scenario,
    result_table,
    run_sweep,
)
from .io import encode_value, read_scenario, scenario_to_dict, write_csv, write_json, write_scenario, write_trace_csv
from .model import DegenerateAllocationError, ScenarioError
from .scenarios import PATTERNS, envy_instance_family, patterned_scenario, poa_tight_instance, random_scenario

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("slicegame")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _range(values: Sequence[float] | None):
    if values is None:
        return None
    if len(values) == 1:
        return (values[0], values[0])
    if len(values) == 2:
        return tuple(values)
    raise UsageError("ranges take one or two values")


def _literal(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _axis(text: str) -> tuple[str, list[Any]]:
    name, sep, values = text.partition("=")
    if not sep or not name:
        raise UsageError(f"axis must look like name=v1,v2: {text!r}")
    vals = [_literal(v) for v in values.split(",") if v != ""]
    return name.replace("-", "_"), vals


def _dynamics(args) -> DynamicsOptions:
    return DynamicsOptions(
        tol=args.tol,
        max_rounds=args.max_rounds,
        order=args.order,
        shuffle_seed=args.shuffle_seed,
        stop_on=args.stop_on,
    )


def _emit_json(obj, path) -> None:
    if path:
        write_json(obj, path)
    else:
        json.dump(encode_value(obj), sys.stdout, indent=2, allow_nan=False)
        sys.stdout.write("\n")


def cmd_generate(args) -> int:
    if args.tight == "poa":
        sc, _, _ = poa_tight_instance(args.m, args.s1, 1.0 - args.s1)
    elif args.tight == "envy":
        sc, _ = envy_instance_family(args.x, args.phi1, args.s_o)
    elif args.pattern is not None:
        kw = dict(seed=args.seed)
        for k in ("n_stations", "n_slices"):
            if getattr(args, k) is not None:
                kw[k] = int(getattr(args, k)[0])
        for k in ("density", "alpha"):
            if getattr(args, k) is not None:
                kw[k] = float(getattr(args, k)[0])
        sc = patterned_scenario(args.pattern, **kw)
    else:
        kw = dict(seed=args.seed, share_rule=args.share_rule, capacity=args.capacity)
        for k in ("n_slices", "n_stations"):
            r = _range(getattr(args, k))
            if r is not None:
                kw[k] = tuple(int(v) for v in r)
        for k in ("density", "alpha"):
            r = _range(getattr(args, k))
            if r is not None:
                kw[k] = r
        sc = random_scenario(**kw)
    if args.out:
        write_scenario(sc, args.out)
    else:
        json.dump(scenario_to_dict(sc), sys.stdout, indent=2)
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_solve(args) -> int:
    sc = read_scenario(args.scenario)
    trace, rep = run_dynamics(sc, options=_dynamics(args))
    if args.trace:
        write_trace_csv(trace, args.trace)
    _emit_json(rep.to_dict(), args.out)
    if not rep.converged:
        log.warning("not converged after %d rounds", rep.rounds_used)
    return EXIT_OK


def cmd_metrics(args) -> int:
    sc = read_scenario(args.scenario)
    chosen = [m for m in ALL_METRICS if getattr(args, m)] or list(ALL_METRICS)
    row = evaluate_scenario(sc, chosen, _dynamics(args), scenario_id=Path(args.scenario).stem)
    if args.csv:
        cols, table = result_table([row])
        write_csv(table, cols, args.csv, RESULT_COLUMNS)
    if args.json or not args.csv:
        _emit_json(row.as_dict(), args.json)
    return EXIT_OK


def cmd_sweep(args) -> int:
    axes = dict(args.axes or {})
    for text in args.axis or []:
        name, vals = _axis(text)
        axes[name] = vals
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise UsageError("sweep needs at least one non-empty --axis")
    base = dict(args.base or {})
    if args.generator == "pattern" and args.pattern and "pattern" not in axes:
        base["pattern"] = args.pattern
    cfg = SweepConfig(
        axes=axes,
        repetitions=args.reps,
        generator=args.generator,
        base=base,
        metrics=[m for m in ALL_METRICS if getattr(args, m)] or list(ALL_METRICS),
        seed=args.seed,
        tol=args.tol,
        max_rounds=args.max_rounds,
    )
    cells = run_sweep(cfg, workers=args.workers)
    cols, table, desc = aggregate(cfg, cells)
    write_csv(table, cols, args.out, desc)
    if args.raw:
        rcols, rtable = result_table([r for rows in cells for r in rows])
        write_csv(rtable, rcols, args.raw, RESULT_COLUMNS)
    return EXIT_OK


def _add_dynamics(p) -> None:
    p.add_argument("--tol", type=float, default=1e-6, help="stop when relative weight changes fall below this")
    p.add_argument("--max-rounds", type=int, default=500)
    p.add_argument("--order", nargs="+", default=None, help="slice update order")
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.add_argument("--stop-on", choices=("weights", "utility"), default="weights")


def _add_metric_toggles(p) -> None:
    for m in ALL_METRICS:
        p.add_argument(f"--{m}", action="store_true", help=f"compute the {m} metric (default: all)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slicegame", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with default option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a scenario file")
    g.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    g.add_argument("--pattern", choices=PATTERNS)
    g.add_argument("--tight", choices=("poa", "envy"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-slices", type=int, nargs="+")
    g.add_argument("--n-stations", type=int, nargs="+")
    g.add_argument("--density", type=float, nargs="+")
    g.add_argument("--alpha", type=float, nargs="+")
    g.add_argument("--share-rule", choices=("equal", "random"), default="equal")
    g.add_argument("--capacity", choices=("lognormal", "uniform", "constant"), default="lognormal")
    g.add_argument("--m", type=int, default=4, help="users of slice 1 at its own station (tight poa)")
    g.add_argument("--s1", type=float, default=0.6, help="share of slice 1 (tight poa)")
    g.add_argument("--x", type=float, default=1.0, help="capacity ratio (tight envy)")
    g.add_argument("--phi1", type=float, default=0.5, help="first priority (tight envy)")
    g.add_argument("--s-o", type=float, default=1e-3, help="share of the envious slice (tight envy)")
    g.add_argument("-o", "--out")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run best-response dynamics")
    s.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    s.add_argument("--scenario", required=False)
    _add_dynamics(s)
    s.add_argument("--trace", help="per-round CSV path")
    s.add_argument("-o", "--out", help="report JSON path (default stdout)")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("metrics", help="solve and evaluate metrics")
    m.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    m.add_argument("--scenario", required=False)
    _add_dynamics(m)
    _add_metric_toggles(m)
    m.add_argument("--csv", help="ResultRow CSV path")
    m.add_argument("--json", help="ResultRow JSON path (default stdout when --csv is absent)")
    m.set_defaults(func=cmd_metrics)

    w = sub.add_parser("sweep", help="grid of generated scenarios with confidence intervals")
    w.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    w.add_argument("--generator", choices=("random", "pattern"), default="random")
    w.add_argument("--pattern", choices=PATTERNS)
    w.add_argument("--axis", action="append", help="name=v1,v2,... (repeatable)")
    w.add_argument("--reps", type=int, default=10)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=int, default=1)
    _add_dynamics(w)
    _add_metric_toggles(w)
    w.add_argument("-o", "--out", required=False, help="aggregated CSV path")
    w.add_argument("--raw", help="per-scenario CSV path")
    w.set_defaults(func=cmd_sweep, axes=None, base=None)
    return parser


def _load_config(path: str) -> dict[str, Any]:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = _load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        if args.command == "sweep":
            known |= {"axes", "base"}
        unknown = set(cfg) - known - {"command", "config"}
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    required = {"solve": "scenario", "metrics": "scenario", "sweep": "out"}
    need = required.get(args.command)
    if need and not getattr(args, need):
        raise UsageError(f"--{need} is required (flag or config)")
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"slicegame: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DynamicsError, SolverError, DegenerateAllocationError) as exc:
        print(f"slicegame: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"slicegame: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
