"""Lowering annotated logical graphs to physical actor plans.

Every op becomes one compute actor per device of its placement; mismatched
producer/consumer annotations get boxing actors (per-device transforms on a
shared device set, collect + distribute staging across disjoint sets); a
routing pass materializes every cross-node edge as a consumer-side
networking actor; registers get slot counts from the chosen policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import graph as graphmod
from . import sbp as sbpmod
from .boxing import (
    BoxingPrimitive,
    choose_primitive,
    nd_transfer_cost,
    regime_for,
)
from .graph import LogicalGraph, Placement
from .ops import Source
from .planner import Stage, StageGraph, min_initiation_interval
from .sbp import NdSbp, OpSbpSignature
from .tensor import DenseTensor


class CompileError(ValueError):
    pass


class PlanValidationError(CompileError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


# -- actor addressing -----------------------------------------------------

NODE_BITS, THREAD_BITS, SEQ_BITS = 16, 16, 32
NETWORK_THREAD = 0


def compute_thread(device: int) -> int:
    return 1 + 2 * device


def copy_thread(device: int) -> int:
    return 2 + 2 * device


def encode_actor_id(node: int, thread: int, seq: int) -> int:
    """Pack (node | thread | sequence) into the 16/16/32-bit address."""
    for value, bits, name in ((node, NODE_BITS, "node"), (thread, THREAD_BITS, "thread"), (seq, SEQ_BITS, "seq")):
        if not 0 <= value < (1 << bits):
            raise CompileError(f"actor id field {name}={value} overflows {bits} bits")
    return (node << (THREAD_BITS + SEQ_BITS)) | (thread << SEQ_BITS) | seq


def parse_actor_id(aid: int) -> tuple[int, int, int]:
    if not 0 <= aid < (1 << 64):
        raise CompileError(f"actor id {aid} out of 64-bit range")
    return (
        aid >> (THREAD_BITS + SEQ_BITS),
        (aid >> SEQ_BITS) & ((1 << THREAD_BITS) - 1),
        aid & ((1 << SEQ_BITS) - 1),
    )


def fmt_actor_id(aid: int) -> str:
    return f"0x{aid:016x}"


# -- plan structures -------------------------------------------------------


@dataclass
class RegisterSpec:
    rid: int
    slots: int
    slot_bytes: int
    consumers: list[int] = field(default_factory=list)
    is_control: bool = False


@dataclass
class InEdge:
    src: int
    rid: int
    is_control: bool = False


@dataclass(frozen=True)
class ExecSource:
    op_id: str
    sbp: NdSbp
    placement: Placement
    index: int


@dataclass(frozen=True)
class ExecKernel:
    kind: object  # OpKind


@dataclass(frozen=True)
class ExecBox:
    """Per-device transform on an unchanged device set (one hierarchy level)."""

    src: object  # SbpComponent
    dst: object  # SbpComponent
    count: int
    index: int
    global_shape: tuple[int, ...]


@dataclass(frozen=True)
class ExecCollect:
    sbp: NdSbp
    placement: Placement


@dataclass(frozen=True)
class ExecDistribute:
    sbp: NdSbp
    placement: Placement
    index: int


@dataclass(frozen=True)
class ExecForward:
    pass


@dataclass
class ActorSpec:
    aid: int
    name: str
    kind: str  # source | compute | boxing | networking | sink
    node: int
    device: Optional[int]
    thread: int
    ticks: int
    exec: object
    in_edges: list[InEdge] = field(default_factory=list)
    input_map: list[int] = field(default_factory=list)
    out_registers: list[RegisterSpec] = field(default_factory=list)
    collect: bool = False

    def data_register(self) -> Optional[RegisterSpec]:
        for r in self.out_registers:
            if not r.is_control:
                return r
        return None

    def is_mover(self) -> bool:
        return self.kind in ("boxing", "networking")


@dataclass
class BoxGroup:
    gid: int
    primitive: BoxingPrimitive
    nbytes: int
    members: list[int]


@dataclass
class SinkSpec:
    op_id: str
    sbp: NdSbp
    placement: Placement
    actors: list[int]  # device order


@dataclass
class SourceSpec:
    op_id: str
    shape: tuple[int, ...]
    value: Optional[DenseTensor]


@dataclass
class PhysicalPlan:
    actors: dict[int, ActorSpec] = field(default_factory=dict)
    control_edges: list[tuple[int, int]] = field(default_factory=list)
    sinks: dict[str, SinkSpec] = field(default_factory=dict)
    sources: dict[str, SourceSpec] = field(default_factory=dict)
    groups: list[BoxGroup] = field(default_factory=list)

    def register_owner(self, rid: int) -> ActorSpec:
        for a in self.actors.values():
            for r in a.out_registers:
                if r.rid == rid:
                    return a
        raise CompileError(f"unknown register {rid}")

    def actor_list(self) -> list[ActorSpec]:
        return [self.actors[a] for a in sorted(self.actors)]

    def networking_actors(self) -> list[ActorSpec]:
        return [a for a in self.actor_list() if a.kind == "networking"]


# -- register policies -----------------------------------------------------


@dataclass(frozen=True)
class DefaultRegisters:
    """Fixed slot count for every data register (double buffering by default)."""

    slots: int = 2


@dataclass(frozen=True)
class PlannerRegisters:
    """Slot counts from the pipeline planner: stages are actors, memory is
    each actor's register footprint on its device, capacities are given per
    (node, device) (missing entries mean unbounded)."""

    caps: dict | None = None


RegisterPolicy = DefaultRegisters | PlannerRegisters


@dataclass(frozen=True)
class ExplicitRegisters:
    """Per-op slot counts (fallback to `default` when an op is missing)."""

    slots_by_op: dict
    default: int = 2


# -- compilation -----------------------------------------------------------


class PlanBuilder:
    def __init__(self):
        self.plan = PhysicalPlan()
        self._seq: dict[tuple[int, int], int] = {}
        self._rid = 0

    def new_actor(self, name, kind, node, device, thread, exec_spec, ticks=1) -> ActorSpec:
        seq = self._seq.get((node, thread), 0)
        self._seq[(node, thread)] = seq + 1
        aid = encode_actor_id(node, thread, seq)
        a = ActorSpec(aid, name, kind, node, device, thread, ticks, exec_spec)
        self.plan.actors[aid] = a
        return a

    def add_register(self, actor: ActorSpec, slot_bytes: int, is_control=False) -> RegisterSpec:
        r = RegisterSpec(self._rid, 2, slot_bytes, is_control=is_control)
        self._rid += 1
        actor.out_registers.append(r)
        return r

    def connect(self, producer: ActorSpec, consumer: ActorSpec, is_control=False) -> None:
        reg = None
        for r in producer.out_registers:
            if r.is_control == is_control:
                reg = r
                break
        if reg is None:
            raise CompileError(f"actor {producer.name} has no matching register")
        reg.consumers.append(consumer.aid)
        consumer.in_edges.append(InEdge(producer.aid, reg.rid, is_control))


def _nbytes(shape: tuple[int, ...]) -> int:
    out = 8
    for e in shape:
        out *= e
    return out


def complete_signatures(
    graph: LogicalGraph, given: dict[str, OpSbpSignature] | None = None
) -> dict[str, OpSbpSignature]:
    """Fill in a full signature per op.

    Explicit annotations (op fields, edge transforms, `given` entries) are
    hard constraints; remaining choices pick the candidate minimizing the
    summed input re-routing cost, ties by enumeration order. Sources default
    to broadcast.
    """
    graphmod.validate(graph)
    shapes = graphmod.infer_shapes(graph)
    chosen: dict[str, OpSbpSignature] = {}
    for op in graphmod.topo_sort(graph):
        if given and op.id in given:
            chosen[op.id] = given[op.id]
            continue
        in_shapes = [shapes[s] for s in op.inputs]
        sigs = sbpmod.enumerate_signatures(op.kind, in_shapes, op.placement)
        if op.out_sbp is not None:
            sigs = [s for s in sigs if s.outputs[0] == tuple(op.out_sbp)]
        if op.in_sbp is not None:
            sigs = [
                s
                for s in sigs
                if all(
                    want is None or s.inputs[i] == tuple(want)
                    for i, want in enumerate(op.in_sbp)
                )
            ]
        for slot, src in enumerate(op.inputs):
            tr = graph.transform_for(src, op.id, slot)
            if tr is not None:
                if tr.placement.devices != op.placement.devices:
                    raise CompileError(
                        f"transform into {op.id!r} targets placement {tr.placement.devices}, "
                        f"but the op runs on {op.placement.devices}"
                    )
                sigs = [s for s in sigs if s.inputs[slot] == tuple(tr.sbp)]
        if not sigs:
            raise CompileError(f"op {op.id!r}: no valid signature under its constraints")

        def route_cost(sig: OpSbpSignature) -> float:
            total = 0.0
            for slot, src in enumerate(op.inputs):
                producer = graph.op(src)
                total += nd_transfer_cost(
                    chosen[src].outputs[0],
                    sig.inputs[slot],
                    _nbytes(shapes[src]),
                    producer.placement,
                    op.placement,
                )
            return total

        best_i = min(range(len(sigs)), key=lambda i: (route_cost(sigs[i]), i))
        chosen[op.id] = sigs[best_i]
    return chosen


_NEEDS_ALL = {
    ("split", "split"),  # different axes
    ("split", "broadcast"),
    ("partial", "split"),
    ("partial", "broadcast"),
}


def _cell_needs_all(src, dst) -> bool:
    def tag(c):
        if isinstance(c, sbpmod.Split):
            return "split"
        if isinstance(c, sbpmod.Broadcast):
            return "broadcast"
        return "partial"

    if isinstance(src, sbpmod.Split) and isinstance(dst, sbpmod.Split):
        return src.axis != dst.axis
    return (tag(src), tag(dst)) in _NEEDS_ALL


def compile_plan(
    graph: LogicalGraph,
    assignments: dict[str, OpSbpSignature] | None = None,
    registers: RegisterPolicy | ExplicitRegisters = DefaultRegisters(),
    control_caps: dict | None = None,
) -> PhysicalPlan:
    """Lower a fully annotated logical graph to a physical actor plan."""
    graphmod.validate(graph)
    shapes = graphmod.infer_shapes(graph)
    sigs = complete_signatures(graph, assignments)
    b = PlanBuilder()
    plan = b.plan

    # compute / source actors, one per device of each op's placement
    actor_of: dict[tuple[str, int], ActorSpec] = {}
    order = graphmod.topo_sort(graph)
    for op in order:
        sig = sigs[op.id]
        out_sbp = sig.outputs[0]
        for idx, (node, dev) in enumerate(op.placement.devices):
            lshape = sbpmod.local_shape(shapes[op.id], out_sbp, op.placement, idx)
            if isinstance(op.kind, Source):
                exec_spec: object = ExecSource(op.id, out_sbp, op.placement, idx)
                kind = "source"
            else:
                exec_spec = ExecKernel(op.kind)
                kind = "compute"
            a = b.new_actor(
                f"{op.id}@n{node}d{dev}", kind, node, dev, compute_thread(dev), exec_spec
            )
            b.add_register(a, _nbytes(lshape))
            actor_of[(op.id, idx)] = a
        if isinstance(op.kind, Source):
            plan.sources[op.id] = SourceSpec(op.id, shapes[op.id], op.kind.value)

    # data edges, inserting boxing chains where annotation or placement differ
    gid = 0
    route_cache: dict[tuple, list[ActorSpec]] = {}
    for op in order:
        sig = sigs[op.id]
        for slot, src in enumerate(op.inputs):
            producer = graph.op(src)
            p_sbp = sigs[src].outputs[0]
            c_sbp = sig.inputs[slot]
            tr = graph.transform_for(src, op.id, slot)
            if tr is not None and tuple(tr.sbp) != c_sbp:
                raise CompileError(
                    f"transform into {op.id!r} slot {slot} wants {tr.sbp}, "
                    f"signature chose {c_sbp}"
                )
            same = producer.placement.devices == op.placement.devices
            if same and p_sbp == c_sbp:
                for idx in range(len(op.placement)):
                    b.connect(actor_of[(src, idx)], actor_of[(op.id, idx)])
                continue
            regime = regime_for(producer.placement, op.placement)  # rejects overlap
            t_bytes = _nbytes(shapes[src])
            cost = nd_transfer_cost(
                p_sbp, c_sbp, t_bytes, producer.placement, op.placement
            )
            key = (src, p_sbp, c_sbp, op.placement.devices, op.placement.mesh)
            if key in route_cache:
                outs = route_cache[key]
                for idx in range(len(op.placement)):
                    b.connect(outs[idx], actor_of[(op.id, idx)])
                continue
            outs = []
            if same and producer.placement.depth == 1 and op.placement.depth == 1:
                # per-device transform actors on the copy engine
                prim = choose_primitive(p_sbp[0], c_sbp[0], regime)
                needs_all = _cell_needs_all(p_sbp[0], c_sbp[0])
                p = len(op.placement)
                for idx, (node, dev) in enumerate(op.placement.devices):
                    box = b.new_actor(
                        f"box.{src}.to.{op.id}.{slot}@n{node}d{dev}",
                        "boxing",
                        node,
                        dev,
                        copy_thread(dev),
                        ExecBox(p_sbp[0], c_sbp[0], p, idx, shapes[src]),
                    )
                    lshape = sbpmod.local_shape(shapes[src], c_sbp, op.placement, idx)
                    b.add_register(box, _nbytes(lshape))
                    if needs_all:
                        for j in range(p):
                            b.connect(actor_of[(src, j)], box)
                    else:
                        b.connect(actor_of[(src, idx)], box)
                    outs.append(box)
                members = [a.aid for a in outs]
            else:
                # staging chain: collect on the producer side, distribute per
                # consumer device
                prim = (
                    choose_primitive(p_sbp[0], c_sbp[0], regime)
                    if producer.placement.depth == 1 and op.placement.depth == 1
                    else BoxingPrimitive.ONE2ONE
                )
                cnode, cdev = producer.placement.devices[0]
                collect = b.new_actor(
                    f"collect.{src}.to.{op.id}.{slot}@n{cnode}d{cdev}",
                    "boxing",
                    cnode,
                    cdev,
                    copy_thread(cdev),
                    ExecCollect(p_sbp, producer.placement),
                )
                b.add_register(collect, t_bytes)
                for j in range(len(producer.placement)):
                    b.connect(actor_of[(src, j)], collect)
                members = [collect.aid]
                for idx, (node, dev) in enumerate(op.placement.devices):
                    dist = b.new_actor(
                        f"dist.{src}.to.{op.id}.{slot}@n{node}d{dev}",
                        "boxing",
                        node,
                        dev,
                        copy_thread(dev),
                        ExecDistribute(c_sbp, op.placement, idx),
                    )
                    lshape = sbpmod.local_shape(shapes[src], c_sbp, op.placement, idx)
                    b.add_register(dist, _nbytes(lshape))
                    b.connect(collect, dist)
                    outs.append(dist)
                    members.append(dist.aid)
            route_cache[key] = outs
            for idx in range(len(op.placement)):
                b.connect(outs[idx], actor_of[(op.id, idx)])
            plan.groups.append(BoxGroup(gid, prim, cost, members))
            gid += 1

    # per-device sink actors for every terminal op
    for op_id in sorted(graph.sink_ids()):
        op = graph.op(op_id)
        sig = sigs[op_id]
        actors = []
        for idx, (node, dev) in enumerate(op.placement.devices):
            s = b.new_actor(
                f"sink.{op_id}@n{node}d{dev}",
                "sink",
                node,
                dev,
                compute_thread(dev),
                ExecForward(),
            )
            s.collect = True
            b.connect(actor_of[(op_id, idx)], s)
            actors.append(s.aid)
        plan.sinks[op_id] = SinkSpec(op_id, sig.outputs[0], op.placement, actors)

    _dedupe_inputs(plan)
    _route_cross_node(b)
    _apply_register_policy(plan, registers)
    if control_caps is not None:
        insert_control_edges(plan, control_caps)
    validate_plan(plan)
    return plan


def _dedupe_inputs(plan: PhysicalPlan) -> None:
    """Collapse duplicate edges from one upstream register (an op consuming
    the same tensor in several slots shares one Req per action)."""
    for a in plan.actors.values():
        kept: list[InEdge] = []
        index_of: dict[tuple[int, int], int] = {}
        mapping: list[int] = []
        for e in a.in_edges:
            key = (e.src, e.rid)
            if key in index_of:
                mapping.append(index_of[key])
                producer = plan.actors[e.src]
                reg = next(r for r in producer.out_registers if r.rid == e.rid)
                reg.consumers.remove(a.aid)
            else:
                index_of[key] = len(kept)
                mapping.append(len(kept))
                kept.append(e)
        a.in_edges = kept
        a.input_map = mapping


def _route_cross_node(b: PlanBuilder) -> None:
    """Insert a consumer-side networking actor for every cross-node data
    edge, one per (producer actor, consumer device) pair."""
    plan = b.plan
    pulls: dict[tuple[int, int, Optional[int]], ActorSpec] = {}
    for consumer in list(plan.actors.values()):
        if consumer.kind == "networking":
            continue
        for edge in list(consumer.in_edges):
            if edge.is_control:
                continue
            producer = plan.actors[edge.src]
            if producer.node == consumer.node:
                continue
            producer_reg = next(r for r in producer.out_registers if r.rid == edge.rid)
            key = (producer.aid, consumer.node, consumer.device)
            net = pulls.get(key)
            if net is None:
                dev = "-" if consumer.device is None else str(consumer.device)
                net = b.new_actor(
                    f"net.pull.{producer.name}@n{consumer.node}d{dev}",
                    "networking",
                    consumer.node,
                    None,
                    NETWORK_THREAD,
                    ExecForward(),
                )
                b.add_register(net, producer_reg.slot_bytes)
                pulls[key] = net
                # rewire the producer register onto the networking actor
                producer_reg.consumers.append(net.aid)
                net.in_edges.append(InEdge(producer.aid, producer_reg.rid))
            # replace the original edge
            producer_reg.consumers.remove(consumer.aid)
            idx = consumer.in_edges.index(edge)
            consumer.in_edges[idx] = InEdge(net.aid, net.out_registers[0].rid)
            net.out_registers[0].consumers.append(consumer.aid)


def _apply_register_policy(plan: PhysicalPlan, policy) -> None:
    if isinstance(policy, DefaultRegisters):
        for a in plan.actors.values():
            for r in a.out_registers:
                r.slots = policy.slots
        return
    if isinstance(policy, ExplicitRegisters):
        for a in plan.actors.values():
            op = a.name.split("@")[0]
            slots = policy.slots_by_op.get(op, policy.default)
            for r in a.out_registers:
                r.slots = slots
        return
    if isinstance(policy, PlannerRegisters):
        counts = plan_register_counts(plan, policy.caps or {})
        for a in plan.actors.values():
            for r in a.out_registers:
                r.slots = counts[a.aid]
        return
    raise CompileError(f"unknown register policy {policy!r}")


def plan_register_counts(plan: PhysicalPlan, caps: dict) -> dict[int, int]:
    """Map the actor graph onto the pipeline planner: one stage per actor,
    memory charged to the actor's device, capacities per (node, device)."""
    locs = sorted({(a.node, a.device) for a in plan.actors.values()}, key=str)
    col = {loc: i for i, loc in enumerate(locs)}
    capacities = tuple(caps.get(loc, 1 << 62) for loc in locs)
    g = StageGraph(capacities)
    for a in plan.actor_list():
        mem = [0] * len(locs)
        reg = a.data_register()
        if reg is not None:
            mem[col[(a.node, a.device)]] = reg.slot_bytes
        succs = sorted(
            {fmt_actor_id(c) for r in a.out_registers for c in r.consumers}
        )
        g.add_stage(Stage(fmt_actor_id(a.aid), a.ticks, tuple(mem)), succs)
    g.validate()
    result = min_initiation_interval(g)
    return {a.aid: result.registers[fmt_actor_id(a.aid)] for a in plan.actors.values()}


# -- control edges ---------------------------------------------------------


def _topo_layers(plan: PhysicalPlan) -> dict[int, int]:
    layers: dict[int, int] = {}

    def visit(aid: int) -> int:
        if aid in layers:
            return layers[aid]
        a = plan.actors[aid]
        deps = [visit(e.src) for e in a.in_edges]
        layers[aid] = (max(deps) + 1) if deps else 0
        return layers[aid]

    for aid in plan.actors:
        visit(aid)
    return layers


def _reachable(plan: PhysicalPlan, src: int, dst: int) -> bool:
    seen, stack = set(), [src]
    out: dict[int, list[int]] = {aid: [] for aid in plan.actors}
    for a in plan.actors.values():
        for e in a.in_edges:
            out[e.src].append(a.aid)
    while stack:
        cur = stack.pop()
        if cur == dst:
            return True
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(out[cur])
    return False


def insert_control_edges(plan: PhysicalPlan, caps: dict) -> PhysicalPlan:
    """Serialize actors sharing a device whose combined register footprint
    exceeds the capacity.

    Actors are packed greedily into groups in (dependency layer, footprint
    ascending) order so each group fits; consecutive groups are ordered by
    control edges (token registers reusing the ordinary message protocol).
    A single actor larger than the capacity is a hard error.
    """
    layers = _topo_layers(plan)
    next_rid = 1 + max(
        (r.rid for a in plan.actors.values() for r in a.out_registers), default=-1
    )
    for loc in sorted(caps, key=str):
        cap = caps[loc]
        members = [
            a
            for a in plan.actor_list()
            if (a.node, a.device) == loc and a.data_register() is not None
        ]
        demands = {
            a.aid: a.data_register().slots * a.data_register().slot_bytes
            for a in members
        }
        if not members or sum(demands.values()) <= cap:
            continue
        worst = max(members, key=lambda a: demands[a.aid])
        if demands[worst.aid] > cap:
            raise CompileError(
                f"actor {worst.name} needs {demands[worst.aid]} bytes alone, "
                f"capacity at {loc} is {cap}"
            )
        ordered = sorted(members, key=lambda a: (layers[a.aid], demands[a.aid], a.aid))
        groups: list[list[ActorSpec]] = [[]]
        used = 0
        for a in ordered:
            if groups[-1] and used + demands[a.aid] > cap:
                groups.append([])
                used = 0
            groups[-1].append(a)
            used += demands[a.aid]
        for gi in range(len(groups) - 1):
            for u in groups[gi]:
                for v in groups[gi + 1]:
                    if _reachable(plan, u.aid, v.aid):
                        continue
                    token = None
                    for r in u.out_registers:
                        if r.is_control:
                            token = r
                            break
                    if token is None:
                        token = RegisterSpec(next_rid, 2, 0, is_control=True)
                        next_rid += 1
                        u.out_registers.append(token)
                    token.consumers.append(v.aid)
                    v.in_edges.append(InEdge(u.aid, token.rid, is_control=True))
                    plan.control_edges.append((u.aid, v.aid))
    return plan


# -- validation and dump ----------------------------------------------------


def validate_plan(plan: PhysicalPlan) -> None:
    violations: list[str] = []
    rid_owner: dict[int, int] = {}
    for a in plan.actors.values():
        node, thread, _ = parse_actor_id(a.aid)
        if (node, thread) != (a.node, a.thread):
            violations.append(f"{a.name}: id fields do not match node/thread")
        for r in a.out_registers:
            if r.rid in rid_owner:
                violations.append(f"register r{r.rid} owned twice")
            rid_owner[r.rid] = a.aid
            if r.slots < 1:
                violations.append(f"{a.name}: register r{r.rid} has {r.slots} slots")
    for a in plan.actors.values():
        for e in a.in_edges:
            if e.src not in plan.actors:
                violations.append(f"{a.name}: edge from unknown actor")
                continue
            if rid_owner.get(e.rid) != e.src:
                violations.append(f"{a.name}: edge register r{e.rid} not owned by source")
            producer = plan.actors[e.src]
            reg = next((r for r in producer.out_registers if r.rid == e.rid), None)
            if reg is None or a.aid not in reg.consumers:
                violations.append(f"{a.name}: not listed as consumer of r{e.rid}")
            if e.is_control:
                continue
            if producer.node != a.node and a.kind != "networking":
                violations.append(
                    f"{a.name}: cross-node data edge without a networking actor"
                )
    for a in plan.actors.values():
        for r in a.out_registers:
            for c in r.consumers:
                if c not in plan.actors:
                    violations.append(f"{a.name}: register r{r.rid} feeds unknown actor")
                elif not any(
                    e.src == a.aid and e.rid == r.rid for e in plan.actors[c].in_edges
                ):
                    violations.append(
                        f"{a.name}: consumer {plan.actors[c].name} missing back edge"
                    )
    # combined data + control edges must stay acyclic
    state: dict[int, int] = {}

    def dfs(aid: int) -> bool:
        state[aid] = 1
        for e in plan.actors[aid].in_edges:
            s = state.get(e.src, 0)
            if s == 1 or (s == 0 and dfs(e.src)):
                return True
        state[aid] = 2
        return False

    for aid in plan.actors:
        if state.get(aid, 0) == 0 and dfs(aid):
            violations.append("cycle over data/control edges")
            break
    if violations:
        raise PlanValidationError(violations)


def dump_plan(plan: PhysicalPlan) -> str:
    """Deterministic text listing of the whole plan."""
    lines = []
    n_regs = sum(len(a.out_registers) for a in plan.actors.values())
    lines.append(
        f"plan actors={len(plan.actors)} registers={n_regs} groups={len(plan.groups)}"
    )
    for a in plan.actor_list():
        dev = "-" if a.device is None else str(a.device)
        lines.append(
            f"actor {fmt_actor_id(a.aid)} name={a.name} kind={a.kind} "
            f"loc={a.node}:{dev} thread={a.thread} ticks={a.ticks}"
        )
        for r in a.out_registers:
            ctl = " control" if r.is_control else ""
            cons = ",".join(fmt_actor_id(c) for c in r.consumers) or "-"
            lines.append(
                f"  reg r{r.rid} slots={r.slots} bytes={r.slot_bytes}{ctl} -> {cons}"
            )
        for e in a.in_edges:
            ctl = " control" if e.is_control else ""
            lines.append(f"  in {fmt_actor_id(e.src)}/r{e.rid}{ctl}")
    for src, dst in plan.control_edges:
        lines.append(f"control {fmt_actor_id(src)} -> {fmt_actor_id(dst)}")
    for grp in plan.groups:
        mem = ",".join(fmt_actor_id(m) for m in grp.members)
        lines.append(
            f"group g{grp.gid} primitive={grp.primitive.value} bytes={grp.nbytes} members={mem}"
        )
    for op_id in sorted(plan.sinks):
        s = plan.sinks[op_id]
        actors = ",".join(fmt_actor_id(a) for a in s.actors)
        lines.append(f"sink {op_id} sbp={sbpmod.format_nd(s.sbp)} actors={actors}")
    for op_id in sorted(plan.sources):
        s = plan.sources[op_id]
        const = " const" if s.value is not None else ""
        shape = "x".join(str(e) for e in s.shape) or "scalar"
        lines.append(f"source {op_id} shape={shape}{const}")
    return "\n".join(lines) + "\n"
