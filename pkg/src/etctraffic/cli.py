"""Command line driver: ``etctraffic {abstract,schedule,analyze,simulate} ...``.

Exit status: 0 success, 1 bad input, 2 unschedulable, 3 internal fault.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .abstraction import AngularPartition, SphereSweep, build_traffic_model
from .games import SchedulingFault, UnschedulableError, extract_scheduler, safety_fixpoint
from .io import (InputError, export_uppaal, load_input_file, model_to_json,
                 scheduler_from_json, scheduler_to_json)
from .linalg import DimensionError, ParameterError
from .quantitative import (closed_loop_saist_check, format_report, mean_payoff_strategy,
                           min_mean_cycles)
from .simulation import SimConfig, collision_report, random_unit_states, simulate
from .systems import MalformedModelError, ProductSystem, WaitTriggerSystem, to_dot

log = logging.getLogger("etctraffic")

EXIT_OK, EXIT_INPUT, EXIT_UNSCHEDULABLE, EXIT_FAULT = 0, 1, 2, 3


def _threads() -> int:
    raw = os.environ.get("ETC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"ETC_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError(f"ETC_THREADS must be a positive integer, got {raw!r}")
    return n


def _backend(spec, loop):
    opts = spec.options
    name = opts.get("backend", "exact" if loop.n == 2 else "sweep")
    if name == "exact":
        if loop.n != 2:
            raise ParameterError("backend=exact needs a planar (2-state) loop")
        return AngularPartition()
    return SphereSweep(n_points=opts.get("n_points", 100_000), seed=opts.get("seed", 0),
                       use_sdr=loop.n > 2)


def _model(spec, loop, depth, etc_only):
    return build_traffic_model(loop, depth, etc_only=etc_only, backend=_backend(spec, loop),
                               conservative=spec.options.get("conservative", False))


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _sibling(out, suffix):
    return None if out in (None, "-") else str(Path(out).with_suffix(suffix))


def cmd_abstract(args) -> int:
    spec = load_input_file(args.input)
    loop = spec.loop(Path(args.input).stem)
    depth = args.depth or spec.depth
    model = _model(spec, loop, depth, args.etc_only or spec.etc_only)
    print(f"{len(model.states)} regions, {len(model.edges)} transitions at depth {depth}",
          file=sys.stderr)
    _write(args.out, model_to_json(model))
    if args.dot:
        _write(_sibling(args.out, ".dot"), to_dot(model, "traffic"))
    if args.uppaal:
        _write(_sibling(args.out, ".xml"), export_uppaal(model))
    return EXIT_OK


def _loops(paths, depth=None):
    specs = [load_input_file(p) for p in paths]
    loops = [s.loop(Path(p).stem) for s, p in zip(specs, paths)]
    if len({lp.h for lp in loops}) > 1:
        raise ParameterError("all loops must share the same checking period")
    return specs, loops


def cmd_schedule(args) -> int:
    specs, loops = _loops(args.inputs)
    systems = []
    for spec, loop in zip(specs, loops):
        model = _model(spec, loop, args.depth or spec.depth, etc_only=False)
        systems.append(WaitTriggerSystem(model))
        print(f"{loop.name}: {len(model.states)} regions, {len(systems[-1].states)} wait/trigger states",
              file=sys.stderr)
    product = ProductSystem(systems)
    result = safety_fixpoint(product)
    print(f"winning set: {len(result)} of {int(result.reachable.sum())} reachable product states",
          file=sys.stderr)
    strategy = extract_scheduler(result)
    if args.out:
        _write(args.out, scheduler_to_json(strategy))
    return EXIT_OK


def cmd_analyze(args) -> int:
    spec = load_input_file(args.input)
    loop = spec.loop(Path(args.input).stem)
    depth = args.depth or spec.depth
    want_saist = args.saist or not args.optimize
    model = _model(spec, loop, depth, etc_only=not args.optimize)
    lines = []
    value = cycles = optimized = None
    if want_saist:
        value, found = min_mean_cycles(model.etc_restriction() if args.optimize else model)
        cycles = found
    if args.optimize:
        optimized, strategy = mean_payoff_strategy(model)
        if args.csv:
            rows = ["region,etc_k,action"]
            rows += [f"\"{r}\",{r[0]},{k}" for r, k in sorted(strategy.items())]
            _write(args.csv, "\n".join(rows) + "\n")
        if args.verify:
            emp = closed_loop_saist_check(loop, strategy, trials=args.verify, horizon=args.horizon,
                                          burn_in=args.horizon // 5, seed=args.seed)
            lines.append(f"Empirical closed-loop average over {args.verify} runs: {float(emp)}")
    sys.stdout.write(format_report(value, cycles, optimized))
    secs = [f"{name} {v} = {float(v) * loop.h:.6g} s" for name, v in (("SAIST", value), ("optimized", optimized))
            if v is not None]
    lines.append(f"(exact, in checks of h = {loop.h} s: " + ", ".join(secs) + ")")
    print("\n".join(lines))
    return EXIT_OK


def _parse_x0(items, loops, seed):
    if not items:
        return [random_unit_states(lp.n, 1, seed + i)[0] for i, lp in enumerate(loops)]
    if len(items) != len(loops):
        raise ParameterError(f"--x0 given {len(items)} times for {len(loops)} loops")
    out = []
    for text, lp in zip(items, loops):
        try:
            x = np.array([float(v) for v in text.replace(";", ",").split(",")])
        except ValueError:
            raise ParameterError(f"bad initial state {text!r}") from None
        if x.shape != (lp.n,):
            raise DimensionError(f"initial state {text!r} needs {lp.n} entries")
        out.append(x)
    return out


def cmd_simulate(args) -> int:
    specs, loops = _loops(args.inputs)
    scheduler = None
    if args.scheduler:
        scheduler = scheduler_from_json(Path(args.scheduler).read_text(encoding="utf-8"))
    x0 = _parse_x0(args.x0, loops, args.seed)
    trace = simulate(SimConfig(loops, x0, args.horizon, scheduler=scheduler, seed=args.seed))
    if args.csv:
        _write(args.csv, trace.to_csv())
    report = collision_report(trace)
    print(f"{args.horizon} steps of {loops[0].h} s, samples per loop: "
          f"{trace.trigger.sum(axis=0).tolist()}, early: {trace.early.sum(axis=0).tolist()}")
    print(f"collisions: {len(report)}")
    for step, who in report[:10]:
        print(f"  t = {step * loops[0].h:.4g} s: loops {[i + 1 for i in who]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etctraffic", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("abstract", help="build a traffic model")
    a.add_argument("input")
    a.add_argument("--depth", type=int)
    a.add_argument("--etc-only", action="store_true", help="skip early-trigger transitions")
    a.add_argument("--out", help="model JSON path (default stdout)")
    a.add_argument("--dot", action="store_true", help="also write Graphviz next to --out")
    a.add_argument("--uppaal", action="store_true", help="also write UPPAAL XML next to --out")
    a.set_defaults(func=cmd_abstract)

    s = sub.add_parser("schedule", help="synthesize a collision-free scheduler")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--depth", type=int)
    s.add_argument("--out", help="scheduler JSON path")
    s.set_defaults(func=cmd_schedule)

    z = sub.add_parser("analyze", help="smallest average inter-sample time and its optimization")
    z.add_argument("input")
    z.add_argument("--depth", type=int)
    z.add_argument("--saist", action="store_true")
    z.add_argument("--optimize", action="store_true")
    z.add_argument("--csv", help="write the optimized strategy as CSV")
    z.add_argument("--verify", type=int, default=0, metavar="TRIALS",
                   help="simulate the optimized strategy from TRIALS random states")
    z.add_argument("--horizon", type=int, default=500)
    z.add_argument("--seed", type=int, default=0)
    z.set_defaults(func=cmd_analyze)

    m = sub.add_parser("simulate", help="simulate loops, optionally under a scheduler")
    m.add_argument("inputs", nargs="+")
    m.add_argument("--scheduler")
    m.add_argument("--horizon", type=int, default=1000, help="checking periods to simulate")
    m.add_argument("--x0", action="append", help="initial state of one loop, e.g. 1,-1 (repeat per loop)")
    m.add_argument("--csv")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        log.debug("worker cap %d", _threads())
        return args.func(args)
    except (InputError, ParameterError, DimensionError, MalformedModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except UnschedulableError as exc:
        print(f"unschedulable: {exc}", file=sys.stderr)
        return EXIT_UNSCHEDULABLE
    except SchedulingFault as exc:
        print(f"scheduling fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal fault", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
