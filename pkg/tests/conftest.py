"""Shared builders: random tensors, the hybrid-parallel demo graph, and a
seeded corpus of randomized physical plans used by the protocol suites."""

from __future__ import annotations

import random

import pytest

from meshkit.compiler import ExplicitRegisters, compile_plan
from meshkit.graph import LogicalGraph, LogicalOp, Transform, flat
from meshkit.ops import Add, Identity, MatMul, ReLU, Source
from meshkit.sbp import B, S, enumerate_signatures, nd
from meshkit.tensor import DenseTensor


def rand_tensor(rng: random.Random, shape, lo=-1.0, hi=1.0) -> DenseTensor:
    n = 1
    for e in shape:
        n *= e
    return DenseTensor(shape, [rng.uniform(lo, hi) for _ in range(n)])


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


def hybrid_demo_graph() -> LogicalGraph:
    """Data-parallel matmul on node 0 -> broadcast onto node 1 ->
    model-parallel matmul (the end-to-end acceptance program)."""
    p0, p1 = flat(0, [0, 1]), flat(1, [0, 1])
    g = LogicalGraph()
    g.add(LogicalOp("a0", Source((4, 5)), (), p0, out_sbp=nd(S(0))))
    g.add(LogicalOp("b0", Source((5, 8)), (), p0, out_sbp=nd(B)))
    g.add(LogicalOp("y0", MatMul(), ("a0", "b0"), p0))
    g.add(LogicalOp("b1", Source((8, 6)), (), p1, out_sbp=nd(S(1))))
    g.add(LogicalOp("y2", MatMul(), ("y0", "b1"), p1))
    g.transforms.append(Transform("y0", "y2", 0, p1, nd(B)))
    return g


def hybrid_demo_feeds(rng: random.Random, n_batches: int):
    return {
        "a0": [rand_tensor(rng, (4, 5)) for _ in range(n_batches)],
        "b0": rand_tensor(rng, (5, 8)),
        "b1": rand_tensor(rng, (8, 6)),
    }


# pairwise identical-or-disjoint (partially overlapping placements are a
# compile error by design)
_PLACEMENTS = [
    lambda: flat(0, [0, 1]),
    lambda: flat(0, [2]),
    lambda: flat(1, [0, 1]),
    lambda: flat(1, [2]),
    lambda: flat(0, [4, 5, 6]),
]


def random_graph_and_feeds(seed: int):
    """Small random dataflow over [4, 4] tensors with random placements and
    random valid signatures; producer/consumer mismatches exercise boxing
    and cross-node routing."""
    rng = random.Random(seed)
    g = LogicalGraph()
    shapes = {}
    n_sources = rng.randint(1, 2)
    names = []
    for i in range(n_sources):
        op_id = f"s{i}"
        g.add(LogicalOp(op_id, Source((4, 4)), (), rng.choice(_PLACEMENTS)()))
        shapes[op_id] = (4, 4)
        names.append(op_id)
    n_ops = rng.randint(1, 4)
    for i in range(n_ops):
        op_id = f"o{i}"
        kind = rng.choice([ReLU(), Identity(), Add(), MatMul()])
        arity = 2 if isinstance(kind, (Add, MatMul)) else 1
        inputs = tuple(rng.choice(names) for _ in range(arity))
        g.add(LogicalOp(op_id, kind, inputs, rng.choice(_PLACEMENTS)()))
        shapes[op_id] = (4, 4)
        names.append(op_id)
    assignments = {}
    for op in g.ops:
        in_shapes = [shapes[s] for s in op.inputs]
        sigs = enumerate_signatures(op.kind, in_shapes, op.placement)
        assignments[op.id] = rng.choice(sigs)
    slots = {op.id: rng.randint(1, 3) for op in g.ops}
    plan = compile_plan(g, assignments, registers=ExplicitRegisters(slots))
    feeds = {
        f"s{i}": [rand_tensor(rng, (4, 4)) for _ in range(3)] for i in range(n_sources)
    }
    return g, plan, feeds
