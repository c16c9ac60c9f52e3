"""Command-line surface: compile graph specs, run them on the simulated
mesh, search parallelism strategies, price re-annotations, and plan
register counts.

Exit codes: 0 success, 1 spec parse error, 2 compile error, 3 runtime
failure or deadlock, 4 memory-capacity error.
"""

from __future__ import annotations

import argparse
import random
import sys

from . import autoparallel as ap
from . import planner as plannermod
from .boxing import BoxingError, cost_table
from .compiler import (
    CompileError,
    DefaultRegisters,
    PlannerRegisters,
    compile_plan,
    dump_plan,
)
from .graph import GraphError
from .ops import Source
from .runtime import DeadlockError, ProtocolError, run_plan
from .sbp import SbpError, format_nd
from .specfmt import SpecError, parse_graph
from .tensor import DenseTensor

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_COMPILE = 2
EXIT_RUNTIME = 3
EXIT_CAPACITY = 4


def _load_graph(path: str):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise SpecError(0, f"cannot read {path}: {e}") from e
    return parse_graph(text)


def _seeded_feeds(graph, n_batches: int, seed: int):
    rng = random.Random(seed)
    feeds = {}
    for op in sorted(graph.ops, key=lambda o: o.id):
        if isinstance(op.kind, Source) and op.kind.value is None:
            n = 1
            for e in op.kind.shape:
                n *= e
            feeds[op.id] = [
                DenseTensor(op.kind.shape, [rng.uniform(-1.0, 1.0) for _ in range(n)])
                for _ in range(n_batches)
            ]
    return feeds


def _cmd_compile(args) -> int:
    graph = _load_graph(args.spec)
    policy = PlannerRegisters() if args.registers == "planner" else DefaultRegisters()
    caps = None
    if args.memory_cap is not None:
        caps = {
            (node, dev): args.memory_cap
            for op in graph.ops
            for node, dev in op.placement.devices
        }
    plan = compile_plan(graph, registers=policy, control_caps=caps)
    if args.dump_plan:
        sys.stdout.write(dump_plan(plan))
    else:
        print(f"compiled: {len(plan.actors)} actors, {len(plan.groups)} boxing groups")
    return EXIT_OK


def _cmd_run(args) -> int:
    graph = _load_graph(args.spec)
    plan = compile_plan(graph)
    feeds = _seeded_feeds(graph, args.batches, args.seed)
    result = run_plan(
        plan,
        feeds,
        n_batches=args.batches,
        mode="deterministic" if args.mode == "det" else "threaded",
        trace_path=args.trace,
    )
    for op_id in sorted(result.outputs):
        for b, t in enumerate(result.outputs[op_id]):
            print(f"sink {op_id} batch {b} shape={list(t.shape)}")
            print(repr(t.tolist()))
    print(
        f"ran {args.batches} batches: {result.stats.actions} actions, "
        f"{result.stats.messages} messages, {result.stats.bytes_moved} bytes moved"
    )
    return EXIT_OK


def _cmd_autoparallel(args) -> int:
    graph = _load_graph(args.spec)
    chosen, cost = ap.search_strategy(
        graph, alpha=args.alpha, restarts=args.restarts, seed=args.seed
    )
    for op_id in sorted(chosen):
        sig = chosen[op_id]
        ins = ",".join(format_nd(s) for s in sig.inputs) or "-"
        outs = ",".join(format_nd(s) for s in sig.outputs)
        print(f"op {op_id} in={ins} out={outs}")
    print(f"total cost {cost:g}")
    if args.brute_force:
        g, _ = ap.build_cost_graph(graph)
        try:
            best, _assign = ap.brute_force(g)
        except ap.CostGraphError as e:
            print(f"brute-force skipped: {e}")
        else:
            print(f"brute-force cost {best:g}")
            print(f"match {'yes' if abs(best - cost) < 1e-9 else 'no'}")
    return EXIT_OK


def _cmd_cost(args) -> int:
    print("cell\tsame\tdisjoint")
    for name, same, disjoint in cost_table(args.p1, args.p2, args.bytes):
        print(f"{name}\t{same}\t{disjoint}")
    return EXIT_OK


def _cmd_plan_registers(args) -> int:
    with open(args.stages) as f:
        g = plannermod.parse_stage_spec(f.read())
    plan = plannermod.min_initiation_interval(g)
    print(f"initiation_interval {plan.initiation_interval}")
    for sid in g.stages:
        print(
            f"stage {sid} registers {plan.registers[sid]} lifetime {plan.lifetimes[sid]}"
        )
    return EXIT_OK


def _cmd_trace_view(args) -> int:
    rows = []
    with open(args.trace) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            tick, actor, event, batch = line.split("\t")
            rows.append((int(tick), actor, event, int(batch)))
    cur = None
    for tick, actor, event, batch in rows:
        if tick != cur:
            print(f"tick {tick}")
            cur = tick
        print(f"  {actor} {event} batch={batch}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshkit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="lower a graph spec to a physical plan")
    c.add_argument("spec")
    c.add_argument("--dump-plan", action="store_true")
    c.add_argument("--registers", choices=["default", "planner"], default="default")
    c.add_argument("--memory-cap", type=int, default=None, metavar="BYTES")
    c.set_defaults(fn=_cmd_compile)

    r = sub.add_parser("run", help="compile and execute a graph spec")
    r.add_argument("spec")
    r.add_argument("--batches", type=int, default=1)
    r.add_argument("--mode", choices=["det", "threaded"], default="det")
    r.add_argument("--trace", default=None, metavar="FILE")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(fn=_cmd_run)

    a = sub.add_parser("autoparallel", help="search annotations minimizing modeled cost")
    a.add_argument("spec")
    a.add_argument("--alpha", type=int, default=64)
    a.add_argument("--brute-force", action="store_true")
    a.add_argument("--restarts", type=int, default=0, help="extra seeded random greedy starts")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(fn=_cmd_autoparallel)

    k = sub.add_parser("cost", help="print the re-annotation transfer-cost table")
    k.add_argument("--p1", type=int, required=True)
    k.add_argument("--p2", type=int, required=True)
    k.add_argument("--bytes", type=int, required=True)
    k.set_defaults(fn=_cmd_cost)

    g = sub.add_parser("plan-registers", help="minimum initiation interval for a stage spec")
    g.add_argument("stages")
    g.set_defaults(fn=_cmd_plan_registers)

    t = sub.add_parser("trace-view", help="pretty-print a run trace")
    t.add_argument("trace")
    t.set_defaults(fn=_cmd_trace_view)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SpecError, plannermod.StageGraphError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except DeadlockError as e:
        print(f"error: {e}", file=sys.stderr)
        print(e.wait_graph, file=sys.stderr)
        return EXIT_RUNTIME
    except (ProtocolError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except plannermod.CapacityError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CAPACITY
    except (CompileError, GraphError, SbpError, BoxingError, ap.CostGraphError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_COMPILE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
