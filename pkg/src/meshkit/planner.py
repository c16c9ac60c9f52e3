"""Register-count planning via software pipelining.

A pipeline of stages with integer execution times and per-device memory
footprints needs enough buffer slots per stage to sustain a target
initiation interval; the minimum feasible interval is found by binary
search over the monotone feasibility predicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class StageGraphError(ValueError):
    pass


class CapacityError(ValueError):
    """No initiation interval satisfies the memory capacities."""


@dataclass
class Stage:
    id: str
    exec_time: int  # positive integer ticks
    mem: tuple[int, ...]  # bytes per device

    def __post_init__(self):
        if self.exec_time < 1:
            raise StageGraphError(f"stage {self.id!r}: exec_time must be >= 1")
        if any(m < 0 for m in self.mem):
            raise StageGraphError(f"stage {self.id!r}: negative memory")


@dataclass
class StageGraph:
    capacities: tuple[int, ...]
    stages: dict[str, Stage] = field(default_factory=dict)
    succs: dict[str, list[str]] = field(default_factory=dict)

    def add_stage(self, stage: Stage, succs: list[str] | None = None) -> Stage:
        if stage.id in self.stages:
            raise StageGraphError(f"duplicate stage {stage.id!r}")
        if len(stage.mem) != len(self.capacities):
            raise StageGraphError(
                f"stage {stage.id!r}: {len(stage.mem)} memory entries for "
                f"{len(self.capacities)} devices"
            )
        self.stages[stage.id] = stage
        self.succs[stage.id] = list(succs or [])
        return stage

    def validate(self) -> None:
        for sid, nxt in self.succs.items():
            for n in nxt:
                if n not in self.stages:
                    raise StageGraphError(f"stage {sid!r} points at unknown {n!r}")
        lifetimes(self)  # raises on cycles


@dataclass
class PipelinePlan:
    initiation_interval: int
    registers: dict[str, int]  # slot count per stage
    lifetimes: dict[str, int]


def lifetimes(g: StageGraph) -> dict[str, int]:
    """Lifetime of a stage's buffer: its own run time plus the longest
    lifetime among downstream stages (longest-path recursion)."""
    memo: dict[str, int] = {}
    visiting: set[str] = set()

    def visit(sid: str) -> int:
        if sid in memo:
            return memo[sid]
        if sid in visiting:
            raise StageGraphError(f"cycle through stage {sid!r}")
        visiting.add(sid)
        down = [visit(n) for n in g.succs.get(sid, [])]
        memo[sid] = g.stages[sid].exec_time + (max(down) if down else 0)
        visiting.discard(sid)
        return memo[sid]

    for sid in g.stages:
        visit(sid)
    return memo


def register_counts(g: StageGraph, ii: int) -> dict[str, int]:
    """Slots needed at interval `ii`: ceil(lifetime / ii) per stage."""
    if ii < 1:
        raise StageGraphError("initiation interval must be >= 1")
    return {sid: math.ceil(l / ii) for sid, l in lifetimes(g).items()}


def feasible(g: StageGraph, ii: int) -> bool:
    """True iff every device capacity covers the summed register footprints."""
    counts = register_counts(g, ii)
    for k, cap in enumerate(g.capacities):
        usage = sum(counts[sid] * g.stages[sid].mem[k] for sid in g.stages)
        if usage > cap:
            return False
    return True


def min_initiation_interval(g: StageGraph) -> PipelinePlan:
    """Smallest integer interval that fits memory, by binary search.

    Feasibility is monotone (slot counts are non-increasing in the
    interval), the lower bound is the longest single stage, and the upper
    bound is the total lifetime (one loop iteration end to end).
    """
    if not g.stages:
        raise StageGraphError("empty stage graph")
    lt = lifetimes(g)
    lo = max(s.exec_time for s in g.stages.values())
    hi = sum(lt.values())
    if not feasible(g, hi):
        raise CapacityError(
            f"capacities {g.capacities} cannot hold the pipeline even at interval {hi}"
        )
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(g, mid):
            hi = mid
        else:
            lo = mid + 1
    return PipelinePlan(lo, register_counts(g, lo), lt)


# -- stage spec text format ----------------------------------------------
#
#   capacity<TAB>r1<TAB>r2...
#   stage<TAB>id<TAB>exec<TAB>m1,m2,...<TAB>succ1,succ2|-
#
# Comment lines start with '#'.


def parse_stage_spec(text: str) -> StageGraph:
    capacities: tuple[int, ...] | None = None
    rows: list[tuple[str, int, tuple[int, ...], list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "capacity":
                capacities = tuple(int(x) for x in parts[1:])
            elif parts[0] == "stage":
                _, sid, e, mems, succs = parts
                mem = tuple(int(x) for x in mems.split(","))
                nxt = [] if succs == "-" else succs.split(",")
                rows.append((sid, int(e), mem, nxt))
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (ValueError, IndexError) as err:
            raise StageGraphError(f"line {lineno}: {err}") from err
    if capacities is None:
        raise StageGraphError("missing capacity line")
    g = StageGraph(capacities)
    for sid, e, mem, nxt in rows:
        g.add_stage(Stage(sid, e, mem), nxt)
    g.validate()
    return g
