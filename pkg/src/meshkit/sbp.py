"""Sharding annotations and their algebra.

An annotation component says how a global tensor maps onto the devices of
one hierarchy level: Split(axis) shards it, Broadcast replicates it, and
Partial holds same-shaped pieces whose elementwise reduction (sum or max)
is the global value. A tensor on a mesh carries one component per level.

This module materializes globals into per-device locals, reconstructs
globals back, and infers which annotation signatures are valid for each op
kind via a rule table.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from . import ops as opsmod
from . import tensor as tz
from .graph import Placement
from .ops import OpKind
from .tensor import DenseTensor, ShapeError


class SbpError(ValueError):
    pass


class ConsistencyError(SbpError):
    """Locals do not realize the annotation they claim (e.g. unequal broadcast copies)."""


@dataclass(frozen=True)
class Split:
    axis: int

    def __str__(self):
        return f"S({self.axis})"


@dataclass(frozen=True)
class Broadcast:
    def __str__(self):
        return "B"


@dataclass(frozen=True)
class Partial:
    reduce: str = "sum"  # "sum" | "max"

    def __post_init__(self):
        if self.reduce not in ("sum", "max"):
            raise SbpError(f"unknown reduction {self.reduce!r}")

    def __str__(self):
        return f"P({self.reduce})"


SbpComponent = Split | Broadcast | Partial
NdSbp = tuple  # tuple[SbpComponent, ...], one component per hierarchy level

B = Broadcast()
P = Partial("sum")


def S(axis: int) -> Split:
    return Split(axis)


def nd(*components: SbpComponent) -> NdSbp:
    return tuple(components)


def format_nd(sig: NdSbp) -> str:
    if len(sig) == 1:
        return str(sig[0])
    return "(" + ",".join(str(c) for c in sig) + ")"


_COMPONENT_RE = re.compile(r"^(S\((\d+)\)|B|P\((sum|max)\))$")


def parse_component(text: str) -> SbpComponent:
    m = _COMPONENT_RE.match(text.strip())
    if not m:
        raise SbpError(f"bad annotation component {text!r}")
    if m.group(2) is not None:
        return Split(int(m.group(2)))
    if m.group(3) is not None:
        return Partial(m.group(3))
    return B


def parse_nd(text: str) -> NdSbp:
    text = text.strip()
    if text.startswith("(") and text.endswith(")") and "," in text:
        inner = text[1:-1]
        # split on commas not inside parentheses: components contain at most
        # one paren group, so split at depth 0
        parts, depth, cur = [], 0, ""
        for ch in inner:
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            if ch == "," and depth == 0:
                parts.append(cur)
                cur = ""
            else:
                cur += ch
        parts.append(cur)
        return tuple(parse_component(p) for p in parts)
    return (parse_component(text),)


@dataclass(frozen=True)
class OpSbpSignature:
    """Per-input and per-output annotations; fully fixes an op's parallelism."""

    inputs: tuple[NdSbp, ...]
    outputs: tuple[NdSbp, ...]

    def __str__(self):
        ins = ",".join(format_nd(s) for s in self.inputs)
        outs = ",".join(format_nd(s) for s in self.outputs)
        return f"[{ins}]->[{outs}]"


# -- sharding / reconstruction -----------------------------------------


def shard_sizes(extent: int, parts: int) -> list[int]:
    """Balanced split extents: the first (extent mod parts) shards get the
    ceiling size, the rest the floor. Empty shards are disallowed."""
    if parts < 1:
        raise SbpError(f"parts must be >= 1, got {parts}")
    if parts > extent:
        raise SbpError(f"cannot split extent {extent} into {parts} non-empty shards")
    base, rem = divmod(extent, parts)
    return [base + 1 if i < rem else base for i in range(parts)]


def shard_offsets(extent: int, parts: int) -> list[int]:
    sizes = shard_sizes(extent, parts)
    offs, acc = [], 0
    for s in sizes:
        offs.append(acc)
        acc += s
    return offs


def split_shard(t: DenseTensor, axis: int, parts: int) -> list[DenseTensor]:
    """Shard along `axis`; concatenating the result restores `t`."""
    if not 0 <= axis < t.rank:
        raise SbpError(f"split axis {axis} out of range for shape {t.shape}")
    sizes = shard_sizes(t.shape[axis], parts)
    out, start = [], 0
    for s in sizes:
        out.append(tz.slice_axis(t, axis, start, start + s))
        start += s
    return out


def identity_fill(shape, reduce: str) -> DenseTensor:
    if reduce == "sum":
        return DenseTensor.zeros(shape)
    return DenseTensor.full(shape, float("-inf"))


def _materialize_levels(t: DenseTensor, sig: NdSbp, levels: Sequence[int]) -> list[DenseTensor]:
    if not levels:
        return [t]
    comp, n = sig[0], levels[0]
    if isinstance(comp, Split):
        if comp.axis >= t.rank:
            raise SbpError(f"split axis {comp.axis} out of range for shape {t.shape}")
        parts = split_shard(t, comp.axis, n)
    elif isinstance(comp, Broadcast):
        parts = [t] * n
    else:
        parts = [t] + [identity_fill(t.shape, comp.reduce)] * (n - 1)
    out: list[DenseTensor] = []
    for p in parts:
        out.extend(_materialize_levels(p, sig[1:], levels[1:]))
    return out


def materialize(t: DenseTensor, sig: NdSbp, placement: Placement) -> list[DenseTensor]:
    """Global tensor -> one local per device, in placement order.

    Level 0 distributes across mesh rows, level 1 within each row. Partial
    uses the canonical decomposition: device 0 holds the global value, the
    others hold the reduction identity.
    """
    if len(sig) != placement.depth:
        raise SbpError(
            f"annotation depth {len(sig)} != placement hierarchy depth {placement.depth}"
        )
    return _materialize_levels(t, sig, placement.levels)


def _reconstruct_levels(
    locals_: Sequence[DenseTensor], sig: NdSbp, levels: Sequence[int], tol: float
) -> DenseTensor:
    if not levels:
        return locals_[0]
    comp, n = sig[0], levels[0]
    group = len(locals_) // n
    subs = [
        _reconstruct_levels(locals_[i * group : (i + 1) * group], sig[1:], levels[1:], tol)
        for i in range(n)
    ]
    if isinstance(comp, Split):
        return tz.concat(subs, comp.axis)
    if isinstance(comp, Broadcast):
        first = subs[0]
        for i, s in enumerate(subs[1:], start=1):
            if s.shape != first.shape or s.max_abs_diff(first) > tol:
                raise ConsistencyError(
                    f"broadcast copies differ at position {i} (tol {tol})"
                )
        return first
    acc = subs[0]
    for s in subs[1:]:
        if s.shape != acc.shape:
            raise ConsistencyError("partial pieces have different shapes")
        acc = tz.add(acc, s) if comp.reduce == "sum" else tz.maximum(acc, s)
    return acc


def reconstruct(
    locals_: Sequence[DenseTensor],
    sig: NdSbp,
    placement: Placement,
    tol: float = 1e-12,
) -> DenseTensor:
    """Exact inverse of the sharding relation: concatenate splits, check and
    collapse broadcast copies, reduce partial pieces elementwise."""
    if len(locals_) != len(placement):
        raise SbpError(
            f"{len(locals_)} locals for {len(placement)} devices"
        )
    if len(sig) != placement.depth:
        raise SbpError("annotation depth != placement hierarchy depth")
    return _reconstruct_levels(list(locals_), sig, placement.levels, tol)


def local_shape(global_shape: tuple[int, ...], sig: NdSbp, placement: Placement, index: int) -> tuple[int, ...]:
    """Shape of the local tensor at device `index` (placement order)."""
    shape = list(global_shape)
    idx = index
    remaining = len(placement)
    for comp, n in zip(sig, placement.levels):
        remaining //= n
        level_idx, idx = divmod(idx, remaining)
        if isinstance(comp, Split):
            shape[comp.axis] = shard_sizes(shape[comp.axis], n)[level_idx]
    return tuple(shape)


# -- inference rule tables ----------------------------------------------

# Valid (x, w) -> y rows for the matrix product, one hierarchy level.
_MATMUL_TABLE: dict[tuple[SbpComponent, SbpComponent], SbpComponent] = {
    (Split(0), B): Split(0),
    (B, Split(1)): Split(1),
    (Split(1), Split(0)): P,
    (P, B): P,
    (B, P): P,
    (B, B): B,
}


def infer_matmul_sbp(x: SbpComponent, w: SbpComponent) -> Optional[SbpComponent]:
    """One-level matrix-product rule; None when the pair admits no valid output."""
    return _MATMUL_TABLE.get((x, w))


def _matmul_nd(x: NdSbp, w: NdSbp) -> Optional[NdSbp]:
    out = []
    for xc, wc in zip(x, w):
        yc = infer_matmul_sbp(xc, wc)
        if yc is None:
            return None
        out.append(yc)
    return tuple(out)


def infer_matmul_sbp_2d(x: NdSbp, w: NdSbp) -> Optional[NdSbp]:
    """Two-level rule: the one-level table applied componentwise per level."""
    if len(x) != 2 or len(w) != 2:
        raise SbpError("expected depth-2 annotations")
    return _matmul_nd(x, w)


def _elementwise_component(c: SbpComponent, allow_partial: bool) -> bool:
    if isinstance(c, Partial):
        return allow_partial and c.reduce == "sum"
    return True


def _reduce_component(c: SbpComponent, axis: int) -> Optional[SbpComponent]:
    if isinstance(c, Split):
        if c.axis == axis:
            return P
        return Split(c.axis - 1 if c.axis > axis else c.axis)
    if isinstance(c, Broadcast):
        return B
    return None  # partial inputs are not in the rule table


def infer_op_sbp(kind: OpKind, in_sbps: tuple[NdSbp, ...]) -> list[OpSbpSignature]:
    """Valid signatures for `kind` given fixed input annotations.

    Empty list means the inputs admit no valid signature and the caller
    must re-route data first. Depth > 1 applies the one-level rules
    componentwise per level.
    """
    if len(in_sbps) != opsmod.arity(kind):
        raise SbpError(
            f"{type(kind).__name__} takes {opsmod.arity(kind)} inputs, got {len(in_sbps)}"
        )
    if isinstance(kind, opsmod.MatMul):
        x, w = in_sbps
        if len(x) != len(w):
            return []
        y = _matmul_nd(x, w)
        return [] if y is None else [OpSbpSignature(in_sbps, (y,))]
    if isinstance(kind, opsmod.Add):
        a, b_ = in_sbps
        if a != b_ or not all(_elementwise_component(c, allow_partial=True) for c in a):
            return []
        return [OpSbpSignature(in_sbps, (a,))]
    if isinstance(kind, opsmod.ReLU):
        (a,) = in_sbps
        # pointwise nonlinearity does not commute with elementwise reduction
        if not all(_elementwise_component(c, allow_partial=False) for c in a):
            return []
        return [OpSbpSignature(in_sbps, (a,))]
    if isinstance(kind, opsmod.Identity):
        return [OpSbpSignature(in_sbps, (in_sbps[0],))]
    if isinstance(kind, opsmod.ReduceSum):
        (a,) = in_sbps
        out = []
        for c in a:
            oc = _reduce_component(c, kind.axis)
            if oc is None:
                return []
            out.append(oc)
        return [OpSbpSignature(in_sbps, (tuple(out),))]
    if isinstance(kind, opsmod.Source):
        raise SbpError("sources have no inputs; enumerate their outputs instead")
    raise TypeError(f"unknown op kind {kind!r}")


def component_alphabet(shape: tuple[int, ...], parts: int) -> list[SbpComponent]:
    """Candidate components for a tensor at one hierarchy level: every split
    axis with enough extent for non-empty shards, broadcast, partial-sum."""
    out: list[SbpComponent] = [Split(a) for a, e in enumerate(shape) if e >= parts]
    out.append(B)
    out.append(P)
    return out


def _nd_alphabet(shape: tuple[int, ...], levels: tuple[int, ...]) -> list[NdSbp]:
    pools = [component_alphabet(shape, n) for n in levels]
    combos: list[NdSbp] = [()]
    for pool in pools:
        combos = [c + (comp,) for c in combos for comp in pool]
    # a tensor cannot be split twice on an axis whose extent does not cover both levels
    ok = []
    for sig in combos:
        shape_left = list(shape)
        good = True
        for comp, n in zip(sig, levels):
            if isinstance(comp, Split):
                if shape_left[comp.axis] < n:
                    good = False
                    break
                shape_left[comp.axis] //= n
        if good:
            ok.append(sig)
    return ok


def enumerate_signatures(
    kind: OpKind, in_shapes: Sequence[tuple[int, ...]], placement: Placement
) -> list[OpSbpSignature]:
    """All valid signatures of an op on its placement, shape-aware.

    Used for strategy-search candidates and for completing partial user
    annotations. Sources enumerate output annotations only.
    """
    levels = placement.levels
    if isinstance(kind, opsmod.Source):
        out_shape = opsmod.output_shape(kind, [])
        sigs = [
            OpSbpSignature((), (s,))
            for s in _nd_alphabet(out_shape, levels)
            if not any(isinstance(c, Partial) for c in s)
        ]
        # broadcast first: the safe default for unannotated inputs
        sigs.sort(key=lambda g: 0 if all(isinstance(c, Broadcast) for c in g.outputs[0]) else 1)
        return sigs
    pools = [_nd_alphabet(tuple(s), levels) for s in in_shapes]
    combos: list[tuple[NdSbp, ...]] = [()]
    for pool in pools:
        combos = [c + (s,) for c in combos for s in pool]
    out: list[OpSbpSignature] = []
    for in_sbps in combos:
        out.extend(infer_op_sbp(kind, in_sbps))
    return out


# -- semantic oracle ----------------------------------------------------


def _materialize_any_levels(t, sig, levels, rng):
    if not levels:
        return [t]
    comp, n = sig[0], levels[0]
    if isinstance(comp, Partial) and comp.reduce == "sum" and n > 1:
        # a random decomposition summing to t; the canonical one would let
        # invalid signatures slip through when zero pieces kill cross terms
        pieces = [
            DenseTensor(t.shape, [rng.uniform(-1.0, 1.0) for _ in range(t.numel)])
            for _ in range(n - 1)
        ]
        rest = t
        for p in pieces:
            rest = tz.add(rest, tz.scale(p, -1.0))
        parts = pieces + [rest]
    elif isinstance(comp, Split):
        parts = split_shard(t, comp.axis, n)
    elif isinstance(comp, Broadcast):
        parts = [t] * n
    else:
        parts = [t] + [identity_fill(t.shape, comp.reduce)] * (n - 1)
    out = []
    for p in parts:
        out.extend(_materialize_any_levels(p, sig[1:], levels[1:], rng))
    return out


def materialize_any(t: DenseTensor, sig: NdSbp, placement: Placement, rng) -> list[DenseTensor]:
    """A random valid realization of (t, sig): splits and broadcasts are
    forced, partial-sum pieces are drawn at random."""
    if len(sig) != placement.depth:
        raise SbpError("annotation depth != placement hierarchy depth")
    return _materialize_any_levels(t, sig, placement.levels, rng)


def signature_is_sound(
    kind: OpKind,
    sig: OpSbpSignature,
    in_globals: Sequence[DenseTensor],
    placement: Placement,
    tol: float = 1e-9,
    rng=None,
) -> bool:
    """Check a signature by execution: materialize the inputs, run the kernel
    independently per device, reconstruct under the declared output
    annotation, and compare against the global kernel result.

    With `rng`, partial inputs use random decompositions, required for
    completeness scans, since the canonical decomposition is degenerate.
    """
    try:
        if rng is None:
            per_input = [materialize(g, s, placement) for g, s in zip(in_globals, sig.inputs)]
        else:
            per_input = [
                materialize_any(g, s, placement, rng) for g, s in zip(in_globals, sig.inputs)
            ]
        out_locals = [
            opsmod.apply_kind(kind, [loc[d] for loc in per_input])
            for d in range(len(placement))
        ]
        got = reconstruct(out_locals, sig.outputs[0], placement, tol=tol)
    except (SbpError, ShapeError, ConsistencyError):
        return False
    want = opsmod.apply_kind(kind, list(in_globals))
    return got.allclose(want, tol)
