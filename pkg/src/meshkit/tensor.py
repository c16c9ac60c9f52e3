"""Dense row-major f64 tensors and the kernel ops defined on them.

All numeric state in the project is a DenseTensor; every kernel is a pure
function returning a fresh tensor. The heavy loops live in the kernel
backend (compiled extension or pure-Python fallback).
"""

from __future__ import annotations

import math
from array import array
from typing import Iterable, Sequence

from .backend import kernels


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


def _prod(xs: Iterable[int]) -> int:
    out = 1
    for x in xs:
        out *= x
    return out


class DenseTensor:
    """Immutable dense tensor: shape plus a flat row-major float64 buffer.

    Rank 0 (shape ()) is allowed and denotes a scalar.
    """

    __slots__ = ("shape", "data")

    def __init__(self, shape: Sequence[int], data):
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"extents must be >= 1, got {shape}")
        buf = data if isinstance(data, array) and data.typecode == "d" else array("d", data)
        if len(buf) != _prod(shape):
            raise ShapeError(f"data length {len(buf)} != product of shape {shape}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", buf)

    def __setattr__(self, name, value):
        raise AttributeError("DenseTensor is immutable")

    # -- constructors -------------------------------------------------

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "DenseTensor":
        return cls(shape, array("d", bytes(8 * _prod(shape))))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> "DenseTensor":
        return cls(shape, array("d", [float(value)] * _prod(shape)))

    @classmethod
    def from_nested(cls, nested) -> "DenseTensor":
        """Build from a nested list, e.g. [[1, 2], [3, 4]]. A bare number is a scalar."""
        shape: list[int] = []
        probe = nested
        while isinstance(probe, (list, tuple)):
            shape.append(len(probe))
            probe = probe[0]
        flat: list[float] = []

        def walk(x, depth):
            if depth == len(shape):
                flat.append(float(x))
                return
            if len(x) != shape[depth]:
                raise ShapeError("ragged nested list")
            for item in x:
                walk(item, depth + 1)

        walk(nested, 0)
        return cls(shape, flat)

    # -- introspection ------------------------------------------------

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def numel(self) -> int:
        return _prod(self.shape)

    @property
    def nbytes(self) -> int:
        return 8 * self.numel

    def tolist(self):
        """Nested-list form (a bare float for rank 0)."""

        def build(shape, offset, strides):
            if not shape:
                return self.data[offset]
            return [
                build(shape[1:], offset + i * strides[0], strides[1:])
                for i in range(shape[0])
            ]

        return build(self.shape, 0, strides_of(self.shape))

    def __repr__(self):
        return f"DenseTensor(shape={self.shape}, data={self.tolist()!r})"

    def __eq__(self, other):
        return (
            isinstance(other, DenseTensor)
            and self.shape == other.shape
            and self.data == other.data
        )

    def __hash__(self):
        return hash((self.shape, bytes(self.data.tobytes())))

    def allclose(self, other: "DenseTensor", tol: float = 1e-9) -> bool:
        if self.shape != other.shape:
            return False
        return all(
            abs(a - b) <= tol and not (math.isnan(a) or math.isnan(b))
            for a, b in zip(self.data, other.data)
        )

    def max_abs_diff(self, other: "DenseTensor") -> float:
        if self.shape != other.shape:
            return math.inf
        return max((abs(a - b) for a, b in zip(self.data, other.data)), default=0.0)


def strides_of(shape: Sequence[int]) -> tuple[int, ...]:
    strides = [1] * len(shape)
    for i in range(len(shape) - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]
    return tuple(strides)


# -- kernels ----------------------------------------------------------


def matmul(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    """Standard rank-2 matrix product."""
    if a.rank != 2 or b.rank != 2:
        raise ShapeError(f"matmul needs rank-2 inputs, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    return DenseTensor((m, n), kernels.matmul(a.data, b.data, m, k, n))


def add(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return DenseTensor(a.shape, kernels.add(a.data, b.data))


def relu(a: DenseTensor) -> DenseTensor:
    return DenseTensor(a.shape, kernels.relu(a.data))


def reduce_sum(t: DenseTensor, axis: int) -> DenseTensor:
    """Sum along `axis`; the axis is removed (rank drops by one)."""
    if not 0 <= axis < t.rank:
        raise ShapeError(f"reduce_sum axis {axis} out of range for shape {t.shape}")
    outer = _prod(t.shape[:axis])
    inner = _prod(t.shape[axis + 1 :])
    out_shape = t.shape[:axis] + t.shape[axis + 1 :]
    return DenseTensor(out_shape, kernels.reduce_sum(t.data, outer, t.shape[axis], inner))


def maximum(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    if a.shape != b.shape:
        raise ShapeError(f"maximum shape mismatch: {a.shape} vs {b.shape}")
    return DenseTensor(a.shape, kernels.maximum(a.data, b.data))


def scale(a: DenseTensor, alpha: float) -> DenseTensor:
    return DenseTensor(a.shape, kernels.scale(a.data, alpha))


# -- slicing / concatenation (data movement helpers) -------------------


def slice_axis(t: DenseTensor, axis: int, start: int, stop: int) -> DenseTensor:
    """Contiguous slice [start, stop) along one axis."""
    if not 0 <= axis < t.rank:
        raise ShapeError(f"axis {axis} out of range for shape {t.shape}")
    if not 0 <= start < stop <= t.shape[axis]:
        raise ShapeError(f"bad slice [{start}, {stop}) on extent {t.shape[axis]}")
    outer = _prod(t.shape[:axis])
    inner = _prod(t.shape[axis + 1 :])
    n_ax = t.shape[axis]
    width = stop - start
    out = array("d", bytes(8 * outer * width * inner))
    for o in range(outer):
        src = (o * n_ax + start) * inner
        dst = o * width * inner
        out[dst : dst + width * inner] = t.data[src : src + width * inner]
    return DenseTensor(t.shape[:axis] + (width,) + t.shape[axis + 1 :], out)


def concat(tensors: Sequence[DenseTensor], axis: int) -> DenseTensor:
    """Concatenate along `axis`; all other extents must agree."""
    if not tensors:
        raise ShapeError("concat of zero tensors")
    base = tensors[0].shape
    if not 0 <= axis < len(base):
        raise ShapeError(f"axis {axis} out of range for shape {base}")
    for t in tensors[1:]:
        if t.rank != len(base) or any(
            i != axis and e != base[i] for i, e in enumerate(t.shape)
        ):
            raise ShapeError("concat shapes differ off-axis")
    total = sum(t.shape[axis] for t in tensors)
    outer = _prod(base[:axis])
    inner = _prod(base[axis + 1 :])
    out = array("d", bytes(8 * outer * total * inner))
    for o in range(outer):
        dst = o * total * inner
        for t in tensors:
            w = t.shape[axis] * inner
            src = o * w
            out[dst : dst + w] = t.data[src : src + w]
            dst += w
    return DenseTensor(base[:axis] + (total,) + base[axis + 1 :], out)


def pad_axis(t: DenseTensor, axis: int, before: int, total: int) -> DenseTensor:
    """Embed `t` into a zero tensor of extent `total` along `axis`, at offset `before`."""
    if before + t.shape[axis] > total:
        raise ShapeError("padded extent too small")
    parts = []
    if before:
        shape = list(t.shape)
        shape[axis] = before
        parts.append(DenseTensor.zeros(shape))
    parts.append(t)
    after = total - before - t.shape[axis]
    if after:
        shape = list(t.shape)
        shape[axis] = after
        parts.append(DenseTensor.zeros(shape))
    return concat(parts, axis) if len(parts) > 1 else t
