"""Operator vocabulary: kinds, arities, shape rules, and kernel dispatch.

The vocabulary is deliberately small; parallelization rules for each kind
live in `sbp` as a rule table, not in per-op code paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from . import tensor
from .tensor import DenseTensor, ShapeError


@dataclass(frozen=True)
class MatMul:
    pass


@dataclass(frozen=True)
class Add:
    pass


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class ReduceSum:
    axis: int


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Source:
    """Graph input. `value` is a constant; shape-only sources are fed at run time."""

    shape: tuple[int, ...]
    value: Optional[DenseTensor] = None


OpKind = MatMul | Add | ReLU | ReduceSum | Identity | Source


def arity(kind: OpKind) -> int:
    if isinstance(kind, (MatMul, Add)):
        return 2
    if isinstance(kind, (ReLU, ReduceSum, Identity)):
        return 1
    return 0


def output_shape(kind: OpKind, in_shapes: Sequence[tuple[int, ...]]) -> tuple[int, ...]:
    """Logical output shape; raises ShapeError on inconsistent inputs."""
    if isinstance(kind, MatMul):
        a, b = in_shapes
        if len(a) != 2 or len(b) != 2:
            raise ShapeError(f"matmul needs rank-2 inputs, got {a} x {b}")
        if a[1] != b[0]:
            raise ShapeError(f"matmul inner dims differ: {a} x {b}")
        return (a[0], b[1])
    if isinstance(kind, Add):
        a, b = in_shapes
        if a != b:
            raise ShapeError(f"add shape mismatch: {a} vs {b}")
        return a
    if isinstance(kind, (ReLU, Identity)):
        return in_shapes[0]
    if isinstance(kind, ReduceSum):
        (a,) = in_shapes
        if not 0 <= kind.axis < len(a):
            raise ShapeError(f"reduce_sum axis {kind.axis} out of range for {a}")
        return a[: kind.axis] + a[kind.axis + 1 :]
    if isinstance(kind, Source):
        return kind.shape
    raise TypeError(f"unknown op kind {kind!r}")


def apply_kind(kind: OpKind, inputs: Sequence[DenseTensor]) -> DenseTensor:
    """Run the kernel for `kind` on concrete tensors."""
    if isinstance(kind, MatMul):
        return tensor.matmul(inputs[0], inputs[1])
    if isinstance(kind, Add):
        return tensor.add(inputs[0], inputs[1])
    if isinstance(kind, ReLU):
        return tensor.relu(inputs[0])
    if isinstance(kind, ReduceSum):
        return tensor.reduce_sum(inputs[0], kind.axis)
    if isinstance(kind, Identity):
        return inputs[0]
    if isinstance(kind, Source):
        if kind.value is None:
            raise ValueError("shape-only source has no constant value")
        return kind.value
    raise TypeError(f"unknown op kind {kind!r}")


def flops(kind: OpKind, in_shapes: Sequence[tuple[int, ...]]) -> int:
    """Work estimate used by the strategy-search cost model."""
    if isinstance(kind, MatMul):
        a, b = in_shapes
        return 2 * a[0] * a[1] * b[1]
    if isinstance(kind, (Add, ReLU)):
        out = 1
        for e in in_shapes[0]:
            out *= e
        return out
    if isinstance(kind, ReduceSum):
        out = 1
        for e in in_shapes[0]:
            out *= e
        return out
    return 0
