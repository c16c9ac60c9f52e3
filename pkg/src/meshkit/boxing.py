"""Data routing between mismatched sharding annotations.

Covers the transfer-size cost model, the collective primitive chosen for
each (src, dst) cell, and the semantic transform on local tensors. Byte
accounting is defined by the cost model (the simulator's internal staging
is not contractual).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from . import tensor as tz
from .graph import Placement
from .sbp import (
    Broadcast,
    NdSbp,
    Partial,
    SbpComponent,
    Split,
    identity_fill,
    materialize,
    reconstruct,
    split_shard,
)
from .tensor import DenseTensor


class BoxingError(ValueError):
    pass


class PlacementOverlapError(BoxingError):
    """Producer and consumer placements share some but not all devices."""


class BoxingPrimitive(enum.Enum):
    IDENTITY = "identity"
    ALL2ALL = "all2all"
    ALL_GATHER = "all_gather"
    REDUCE_SCATTER = "reduce_scatter"
    ALL_REDUCE = "all_reduce"
    SCATTER = "scatter"
    BROADCAST_COPY = "broadcast_copy"
    GATHER_REDUCE = "gather_reduce"
    ONE2ONE = "one2one"


@dataclass(frozen=True)
class SameDevices:
    p1: int

    def __post_init__(self):
        if self.p1 < 1:
            raise BoxingError("device count must be >= 1")


@dataclass(frozen=True)
class DisjointDevices:
    p1: int
    p2: int

    def __post_init__(self):
        if self.p1 < 1 or self.p2 < 1:
            raise BoxingError("device counts must be >= 1")


TransferRegime = SameDevices | DisjointDevices


def _round_half_up(x: Fraction) -> int:
    return int((2 * x.numerator + x.denominator) // (2 * x.denominator))


def transfer_cost(
    src: SbpComponent, dst: SbpComponent, tensor_bytes: int, regime: TransferRegime
) -> int:
    """Bytes moved re-annotating a tensor of `tensor_bytes` from src to dst.

    Closed forms per (src, dst) cell; the only fractional cell (same-set
    split-axis change) rounds half-up to whole bytes.
    """
    if tensor_bytes < 0:
        raise BoxingError("tensor size must be >= 0")
    t = tensor_bytes
    if isinstance(regime, SameDevices):
        p1 = regime.p1
        if isinstance(src, Split) and isinstance(dst, Split):
            if src.axis == dst.axis:
                return 0
            return _round_half_up(Fraction((p1 - 1) * t, p1))
        if isinstance(src, Split) and isinstance(dst, Broadcast):
            return (p1 - 1) * t
        if isinstance(src, Split) and isinstance(dst, Partial):
            return 0
        if isinstance(src, Broadcast):
            return 0
        if isinstance(src, Partial) and isinstance(dst, Split):
            return (p1 - 1) * t
        if isinstance(src, Partial) and isinstance(dst, Broadcast):
            return 2 * (p1 - 1) * t
        return 0  # P -> P
    p1, p2 = regime.p1, regime.p2
    if isinstance(src, Split):
        if isinstance(dst, Broadcast):
            return p2 * t
        return t  # S -> S (either axis), S -> P
    if isinstance(src, Broadcast):
        if isinstance(dst, Broadcast):
            return p2 * t
        return t  # B -> S, B -> P
    if isinstance(dst, Split):
        return p1 * t
    if isinstance(dst, Broadcast):
        return (p1 + p2 - 1) * t
    return p1 * t  # P -> P


def choose_primitive(
    src: SbpComponent, dst: SbpComponent, regime: TransferRegime
) -> BoxingPrimitive:
    """Collective primitive realizing the cell's transfer cost."""
    if isinstance(regime, SameDevices):
        if isinstance(src, Split) and isinstance(dst, Split) and src.axis != dst.axis:
            return BoxingPrimitive.ALL2ALL
        if isinstance(src, Split) and isinstance(dst, Broadcast):
            return BoxingPrimitive.ALL_GATHER
        if isinstance(src, Partial) and isinstance(dst, Split):
            return BoxingPrimitive.REDUCE_SCATTER
        if isinstance(src, Partial) and isinstance(dst, Broadcast):
            return BoxingPrimitive.ALL_REDUCE
        return BoxingPrimitive.IDENTITY  # zero-cost cells re-interpret locally
    if isinstance(src, Split):
        if isinstance(dst, Split):
            return BoxingPrimitive.ONE2ONE  # piecewise re-slicing
        if isinstance(dst, Broadcast):
            return BoxingPrimitive.BROADCAST_COPY  # gather then copy to each
        return BoxingPrimitive.GATHER_REDUCE  # S -> P: assemble on one target
    if isinstance(src, Broadcast):
        if isinstance(dst, Split):
            return BoxingPrimitive.SCATTER
        if isinstance(dst, Broadcast):
            return BoxingPrimitive.BROADCAST_COPY
        return BoxingPrimitive.ONE2ONE  # B -> P: one full copy
    if isinstance(dst, Split):
        return BoxingPrimitive.REDUCE_SCATTER
    if isinstance(dst, Broadcast):
        return BoxingPrimitive.ALL_REDUCE
    return BoxingPrimitive.ONE2ONE  # P -> P: forward partials


def regime_for(src_placement: Placement, dst_placement: Placement) -> TransferRegime:
    """SameDevices when the device sets match, DisjointDevices when they are
    disjoint; partial overlap is rejected outright."""
    a, b = set(src_placement.devices), set(dst_placement.devices)
    if a == b:
        return SameDevices(len(a))
    if a & b:
        raise PlacementOverlapError(
            f"placements overlap partially: {sorted(a & b)} shared"
        )
    return DisjointDevices(len(a), len(b))


def nd_transfer_cost(
    src: NdSbp,
    dst: NdSbp,
    tensor_bytes: int,
    src_placement: Placement,
    dst_placement: Placement,
) -> int:
    """Cost between hierarchical annotations: per-level sum, each level
    priced with that level's device count."""
    regime = regime_for(src_placement, dst_placement)
    if src_placement.devices == dst_placement.devices and src == dst:
        return 0
    if len(src) == 1 and len(dst) == 1:
        return transfer_cost(src[0], dst[0], tensor_bytes, regime)
    total = 0
    for i, (sc, dc) in enumerate(zip(src, dst)):
        if isinstance(regime, SameDevices):
            level_regime: TransferRegime = SameDevices(src_placement.levels[i])
        else:
            level_regime = DisjointDevices(
                src_placement.levels[i] if i < src_placement.depth else 1,
                dst_placement.levels[i] if i < dst_placement.depth else 1,
            )
        total += transfer_cost(sc, dc, tensor_bytes, level_regime)
    return total


def _same_set_1d(
    locals_: Sequence[DenseTensor],
    src: SbpComponent,
    dst: SbpComponent,
    placement: Placement,
) -> list[DenseTensor]:
    """Per-cell local transforms on an unchanged device set (flat hierarchy).

    Zero-cost cells are purely local: each device derives its new local from
    what it already holds (split of own broadcast copy, zero-padding its own
    shard, keeping/zeroing for broadcast-to-partial).
    """
    p = len(placement)
    if isinstance(src, Split) and isinstance(dst, Split):
        if src.axis == dst.axis:
            return list(locals_)
        g = tz.concat(locals_, src.axis)
        return split_shard(g, dst.axis, p)
    if isinstance(src, Split) and isinstance(dst, Broadcast):
        g = tz.concat(locals_, src.axis)
        return [g] * p
    if isinstance(src, Split) and isinstance(dst, Partial):
        if dst.reduce != "sum":
            raise BoxingError("shard padding realizes partial-sum only")
        g_extent = sum(t.shape[src.axis] for t in locals_)
        out, off = [], 0
        for t in locals_:
            out.append(tz.pad_axis(t, src.axis, off, g_extent))
            off += t.shape[src.axis]
        return out
    if isinstance(src, Broadcast) and isinstance(dst, Split):
        return [split_shard(t, dst.axis, p)[i] for i, t in enumerate(locals_)]
    if isinstance(src, Broadcast) and isinstance(dst, Broadcast):
        return list(locals_)
    if isinstance(src, Broadcast) and isinstance(dst, Partial):
        return [
            locals_[0] if i == 0 else identity_fill(locals_[0].shape, dst.reduce)
            for i in range(p)
        ]
    if isinstance(src, Partial) and isinstance(dst, (Split, Broadcast)):
        g = reconstruct(locals_, (src,), placement)
        if isinstance(dst, Split):
            return split_shard(g, dst.axis, p)
        return [g] * p
    if isinstance(src, Partial) and isinstance(dst, Partial):
        if src.reduce != dst.reduce:
            raise BoxingError("cannot re-interpret between different reductions")
        return list(locals_)
    raise BoxingError(f"unhandled cell {src} -> {dst}")


def apply_boxing(
    locals_: Sequence[DenseTensor],
    src: NdSbp,
    dst: NdSbp,
    src_placement: Placement,
    dst_placement: Placement,
) -> tuple[list[DenseTensor], int]:
    """Re-route locals from (src annotation, src placement) to (dst, dst).

    Returns (new locals in dst placement order, simulated bytes moved). The
    reconstruction of the output equals the reconstruction of the input.
    """
    if len(locals_) != len(src_placement):
        raise BoxingError("local count does not match source placement")
    regime_for(src_placement, dst_placement)  # rejects partial overlap
    g = reconstruct(locals_, src, src_placement)
    cost = nd_transfer_cost(src, dst, g.nbytes, src_placement, dst_placement)
    same = src_placement.devices == dst_placement.devices
    if same and src == dst and src_placement.mesh == dst_placement.mesh:
        return list(locals_), 0
    if (
        same
        and src_placement.depth == 1
        and dst_placement.depth == 1
    ):
        return _same_set_1d(locals_, src[0], dst[0], src_placement), cost
    # general path: reconstruct on staging, re-materialize under dst
    return materialize(g, dst, dst_placement), cost


def cost_table(p1: int, p2: int, tensor_bytes: int) -> list[tuple[str, int, int]]:
    """All 10 (src, dst) rows with same-set and disjoint-set costs."""
    s0, s1, b, p = Split(0), Split(1), Broadcast(), Partial("sum")
    rows = [
        ("S(i)->S(i)", s0, s0),
        ("S(i)->S(j)", s0, s1),
        ("S->B", s0, b),
        ("S->P", s0, p),
        ("B->S", b, s0),
        ("B->B", b, b),
        ("B->P", b, p),
        ("P->S", p, s0),
        ("P->B", p, b),
        ("P->P", p, p),
    ]
    return [
        (
            name,
            transfer_cost(src, dst, tensor_bytes, SameDevices(p1)),
            transfer_cost(src, dst, tensor_bytes, DisjointDevices(p1, p2)),
        )
        for name, src, dst in rows
    ]
