"""Logical dataflow graphs: ops, placements, edge annotations, validation,
topological ordering, shape inference, and the single-device reference
interpreter used as ground truth for every parallel plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import ops
from .ops import OpKind, Source
from .tensor import DenseTensor, ShapeError


class GraphError(ValueError):
    """Structural problem in a logical graph (cycle, arity, dangling ref...)."""


@dataclass(frozen=True)
class Placement:
    """Ordered (node, device) coordinates an op runs on.

    `mesh` (rows, cols) declares a two-level hierarchy over the same device
    list, row-major: device index = row * cols + col.
    """

    devices: tuple[tuple[int, int], ...]
    mesh: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if not self.devices:
            raise GraphError("placement needs at least one device")
        if len(set(self.devices)) != len(self.devices):
            raise GraphError(f"duplicate device coordinates in {self.devices}")
        if self.mesh is not None:
            rows, cols = self.mesh
            if rows * cols != len(self.devices):
                raise GraphError(
                    f"mesh {self.mesh} does not cover {len(self.devices)} devices"
                )

    @property
    def levels(self) -> tuple[int, ...]:
        """Device count per hierarchy level: (n,) flat, (rows, cols) for a mesh."""
        return self.mesh if self.mesh is not None else (len(self.devices),)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def __len__(self):
        return len(self.devices)

    def nodes(self) -> tuple[int, ...]:
        seen = []
        for n, _ in self.devices:
            if n not in seen:
                seen.append(n)
        return tuple(seen)


def flat(node: int, device_ids) -> Placement:
    """Shorthand for a one-node flat placement."""
    return Placement(tuple((node, d) for d in device_ids))


@dataclass
class LogicalOp:
    id: str
    kind: OpKind
    inputs: tuple[str, ...]  # producer op ids, one per input slot
    placement: Placement
    # Optional user annotations, completed by inference or strategy search.
    in_sbp: Optional[tuple] = None  # tuple[NdSbp | None, ...]
    out_sbp: Optional[tuple] = None  # NdSbp


@dataclass
class Transform:
    """Explicit edge-level retargeting: the consumer reads the tensor under
    a new placement and annotation (lowered to boxing by the compiler)."""

    src: str
    dst: str
    slot: int
    placement: Placement
    sbp: tuple


@dataclass
class LogicalGraph:
    ops: list[LogicalOp] = field(default_factory=list)
    transforms: list[Transform] = field(default_factory=list)

    def add(self, op: LogicalOp) -> LogicalOp:
        self.ops.append(op)
        return op

    def op(self, op_id: str) -> LogicalOp:
        for o in self.ops:
            if o.id == op_id:
                return o
        raise GraphError(f"no op with id {op_id!r}")

    def transform_for(self, src: str, dst: str, slot: int) -> Optional[Transform]:
        for t in self.transforms:
            if (t.src, t.dst, t.slot) == (src, dst, slot):
                return t
        return None

    def consumers(self, op_id: str) -> list[tuple[LogicalOp, int]]:
        out = []
        for o in self.ops:
            for slot, src in enumerate(o.inputs):
                if src == op_id:
                    out.append((o, slot))
        return out

    def sink_ids(self) -> list[str]:
        consumed = {src for o in self.ops for src in o.inputs}
        return [o.id for o in self.ops if o.id not in consumed]


def validate(graph: LogicalGraph) -> None:
    """Check ids, arity, acyclicity and run whole-graph shape inference."""
    ids = [o.id for o in graph.ops]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise GraphError(f"duplicate op ids: {dupes}")
    known = set(ids)
    for o in graph.ops:
        if len(o.inputs) != ops.arity(o.kind):
            raise GraphError(
                f"op {o.id!r}: kind {type(o.kind).__name__} takes "
                f"{ops.arity(o.kind)} inputs, got {len(o.inputs)}"
            )
        for src in o.inputs:
            if src not in known:
                raise GraphError(f"op {o.id!r} consumes unknown tensor {src!r}")
    for t in graph.transforms:
        if t.src not in known or t.dst not in known:
            raise GraphError(f"transform references unknown op: {t.src!r} -> {t.dst!r}")
    topo_sort(graph)  # raises on cycles
    infer_shapes(graph)  # raises on shape conflicts


def topo_sort(graph: LogicalGraph) -> list[LogicalOp]:
    """Producers before consumers; ties broken by op id so plans reproduce."""
    indeg = {o.id: 0 for o in graph.ops}
    out_edges: dict[str, list[str]] = {o.id: [] for o in graph.ops}
    for o in graph.ops:
        for src in o.inputs:
            if src == o.id:
                raise GraphError(f"self-loop at op {o.id!r}")
            out_edges[src].append(o.id)
            indeg[o.id] += 1
    by_id = {o.id: o for o in graph.ops}
    ready = sorted(i for i, d in indeg.items() if d == 0)
    order: list[LogicalOp] = []
    while ready:
        cur = ready.pop(0)
        order.append(by_id[cur])
        changed = False
        for nxt in out_edges[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                changed = True
        if changed:
            ready.sort()
    if len(order) != len(graph.ops):
        stuck = sorted(i for i, d in indeg.items() if d > 0)
        raise GraphError(f"cycle through ops {stuck}")
    return order


def infer_shapes(graph: LogicalGraph) -> dict[str, tuple[int, ...]]:
    """Logical (global) shape per op output. Placement-independent."""
    shapes: dict[str, tuple[int, ...]] = {}
    for o in topo_sort(graph):
        try:
            shapes[o.id] = ops.output_shape(o.kind, [shapes[s] for s in o.inputs])
        except ShapeError as e:
            raise GraphError(f"shape conflict at op {o.id!r}: {e}") from e
    return shapes


def eval_logical(
    graph: LogicalGraph, feeds: dict[str, DenseTensor] | None = None
) -> dict[str, DenseTensor]:
    """Reference interpreter: evaluate every op on one logical device.

    `feeds` supplies values for shape-only sources (and may override
    constants). Returns the value of every op, sinks included.
    """
    feeds = feeds or {}
    values: dict[str, DenseTensor] = {}
    for o in topo_sort(graph):
        if isinstance(o.kind, Source):
            if o.id in feeds:
                v = feeds[o.id]
            elif o.kind.value is not None:
                v = o.kind.value
            else:
                raise GraphError(f"missing feed for source {o.id!r}")
            if v.shape != o.kind.shape:
                raise GraphError(
                    f"feed for {o.id!r} has shape {v.shape}, declared {o.kind.shape}"
                )
            values[o.id] = v
        else:
            values[o.id] = ops.apply_kind(o.kind, [values[s] for s in o.inputs])
    return values
