"""Re-annotation cost table (all 20 cells), primitive selection, and the
semantic transform on locals with its byte accounting."""

import pytest

from meshkit.boxing import (
    BoxingPrimitive,
    DisjointDevices,
    PlacementOverlapError,
    SameDevices,
    apply_boxing,
    choose_primitive,
    cost_table,
    transfer_cost,
)
from meshkit.graph import flat
from meshkit.sbp import B, P, Partial, S, materialize, nd, reconstruct
from meshkit.tensor import DenseTensor

from conftest import rand_tensor

COMPONENTS = [S(0), S(1), B, P]


def expected_cost(src, dst, t, regime):
    """The closed forms, written out independently of the implementation."""
    from fractions import Fraction

    from meshkit.sbp import Broadcast, Partial, Split

    if isinstance(regime, SameDevices):
        p1 = regime.p1
        table = {
            ("S", "S="): 0,
            # half-up rounding of the only fractional cell
            ("S", "S!"): int(Fraction((p1 - 1) * t, p1) + Fraction(1, 2)),
            ("S", "B"): (p1 - 1) * t,
            ("S", "P"): 0,
            ("B", "S"): 0,
            ("B", "B"): 0,
            ("B", "P"): 0,
            ("P", "S"): (p1 - 1) * t,
            ("P", "B"): 2 * (p1 - 1) * t,
            ("P", "P"): 0,
        }
    else:
        p1, p2 = regime.p1, regime.p2
        table = {
            ("S", "S="): t,
            ("S", "S!"): t,
            ("S", "B"): p2 * t,
            ("S", "P"): t,
            ("B", "S"): t,
            ("B", "B"): p2 * t,
            ("B", "P"): t,
            ("P", "S"): p1 * t,
            ("P", "B"): (p1 + p2 - 1) * t,
            ("P", "P"): p1 * t,
        }

    def tag(c):
        return {Split: "S", Broadcast: "B", Partial: "P"}[type(c)]

    key = (tag(src), tag(dst))
    if key == ("S", "S"):
        key = ("S", "S=") if src.axis == dst.axis else ("S", "S!")
    return table[key]


# --- hand-worked cells ------------------------------------------------


def test_allgather_cell():
    assert transfer_cost(S(0), B, 120, SameDevices(3)) == 240


def test_allreduce_cell():
    assert transfer_cost(P, B, 120, SameDevices(3)) == 480


def test_same_split_is_free():
    assert transfer_cost(S(0), S(0), 120, SameDevices(3)) == 0


def test_disjoint_partial_to_broadcast():
    assert transfer_cost(P, B, 120, DisjointDevices(3, 2)) == 480


@pytest.mark.parametrize("p1,p2,t", [(2, 2, 64), (3, 2, 120), (4, 4, 1024)])
def test_all_cells_both_regimes(p1, p2, t):
    cases = [(S(0), S(0)), (S(0), S(1)), (S(0), B), (S(0), P), (B, S(0)), (B, B),
             (B, P), (P, S(0)), (P, B), (P, P)]
    for src, dst in cases:
        assert transfer_cost(src, dst, t, SameDevices(p1)) == expected_cost(
            src, dst, t, SameDevices(p1)
        ), (src, dst, "same")
        assert transfer_cost(src, dst, t, DisjointDevices(p1, p2)) == expected_cost(
            src, dst, t, DisjointDevices(p1, p2)
        ), (src, dst, "disjoint")


def test_fractional_all2all_rounds_half_up():
    # (p1-1)/p1 * |T| with p1=3, |T|=100 -> 66.66... -> 67
    assert transfer_cost(S(0), S(1), 100, SameDevices(3)) == 67
    # exactly .5 rounds up: p1=2, |T|=5 -> 2.5 -> 3
    assert transfer_cost(S(0), S(1), 5, SameDevices(2)) == 3


def test_cost_table_helper_shape():
    rows = cost_table(3, 2, 120)
    assert len(rows) == 10
    assert ("P->B", 480, 480) in rows


# --- primitive selection -------------------------------------------------------


def test_same_set_primitives():
    same = SameDevices(2)
    assert choose_primitive(P, B, same) == BoxingPrimitive.ALL_REDUCE
    assert choose_primitive(S(0), S(1), same) == BoxingPrimitive.ALL2ALL
    assert choose_primitive(S(0), B, same) == BoxingPrimitive.ALL_GATHER
    assert choose_primitive(P, S(0), same) == BoxingPrimitive.REDUCE_SCATTER
    # zero-cost cells re-interpret locally
    assert choose_primitive(B, S(0), same) == BoxingPrimitive.IDENTITY
    assert choose_primitive(S(0), P, same) == BoxingPrimitive.IDENTITY
    assert choose_primitive(B, B, same) == BoxingPrimitive.IDENTITY


def test_disjoint_primitives_cover_all_cells():
    dis = DisjointDevices(2, 3)
    for src in COMPONENTS:
        for dst in COMPONENTS:
            prim = choose_primitive(src, dst, dis)
            assert isinstance(prim, BoxingPrimitive)
            assert prim != BoxingPrimitive.IDENTITY  # crossing sets always moves data


# --- semantic application --------------------------------------------------------


def test_allgather_example():
    t = DenseTensor.from_nested([[1.0, 2.0], [3.0, 4.0]])
    p = flat(0, [0, 1])
    locs = materialize(t, nd(S(0)), p)
    out, cost = apply_boxing(locs, nd(S(0)), nd(B), p, p)
    assert all(l == t for l in out)
    assert cost == (2 - 1) * t.nbytes


def test_partial_to_broadcast_sums_then_copies():
    t = DenseTensor.from_nested([[1.0, 2.0], [3.0, 4.0]])
    p = flat(0, [0, 1])
    locs = materialize(t, nd(P), p)
    out, cost = apply_boxing(locs, nd(P), nd(B), p, p)
    assert all(l == t for l in out)
    assert cost == 2 * (2 - 1) * t.nbytes


def test_identity_moves_nothing():
    t = DenseTensor.from_nested([[1.0, 2.0]])
    p = flat(0, [0, 1])
    locs = materialize(t, nd(B), p)
    out, cost = apply_boxing(locs, nd(B), nd(B), p, p)
    assert out == locs and cost == 0


def test_split_to_partial_zero_pads_own_shard():
    t = DenseTensor.from_nested([[1.0, 2.0], [3.0, 4.0]])
    p = flat(0, [0, 1])
    locs = materialize(t, nd(S(0)), p)
    out, cost = apply_boxing(locs, nd(S(0)), nd(P), p, p)
    assert cost == 0
    assert out[0].tolist() == [[1.0, 2.0], [0.0, 0.0]]
    assert out[1].tolist() == [[0.0, 0.0], [3.0, 4.0]]


def test_broadcast_to_partial_keeps_device_zero():
    t = DenseTensor.from_nested([[5.0, 6.0]])
    p = flat(0, [0, 1, 2])
    locs = materialize(t, nd(B), p)
    out, cost = apply_boxing(locs, nd(B), nd(P), p, p)
    assert cost == 0
    assert out[0] == t
    assert out[1] == DenseTensor.zeros((1, 2)) == out[2]


def test_semantic_preservation_same_set(rng):
    """reconstruct(apply_boxing(...)) == reconstruct(...) on every cell."""
    for n_dev in (2, 3, 4):
        p = flat(0, list(range(n_dev)))
        t = rand_tensor(rng, (4, 4))
        for src in COMPONENTS:
            for dst in COMPONENTS:
                locs = materialize(t, nd(src), p)
                out, cost = apply_boxing(locs, nd(src), nd(dst), p, p)
                got = reconstruct(out, nd(dst), p)
                assert got.allclose(t, 1e-9), (src, dst, n_dev)
                assert cost == expected_cost(src, dst, t.nbytes, SameDevices(n_dev))


def test_semantic_preservation_disjoint(rng):
    for p1_n, p2_n in ((2, 2), (2, 3), (3, 2), (4, 2)):
        p1 = flat(0, list(range(p1_n)))
        p2 = flat(1, list(range(p2_n)))
        t = rand_tensor(rng, (4, 4))
        for src in COMPONENTS:
            for dst in COMPONENTS:
                if isinstance(dst, type(S(0))) and t.shape[dst.axis] < p2_n:
                    continue
                locs = materialize(t, nd(src), p1)
                out, cost = apply_boxing(locs, nd(src), nd(dst), p1, p2)
                assert len(out) == p2_n
                got = reconstruct(out, nd(dst), p2)
                assert got.allclose(t, 1e-9), (src, dst)
                assert cost == expected_cost(
                    src, dst, t.nbytes, DisjointDevices(p1_n, p2_n)
                )


def test_zero_cost_cells_move_zero_bytes(rng):
    p = flat(0, [0, 1])
    t = rand_tensor(rng, (4, 4))
    free_cells = [(B, S(0)), (S(0), P), (B, B), (B, P), (P, P), (S(1), S(1))]
    for src, dst in free_cells:
        locs = materialize(t, nd(src), p)
        _, cost = apply_boxing(locs, nd(src), nd(dst), p, p)
        assert cost == 0, (src, dst)


def test_partial_overlap_rejected():
    a = flat(0, [0, 1])
    b_pl = flat(0, [1, 2])
    t = DenseTensor.from_nested([[1.0, 2.0]])
    locs = materialize(t, nd(B), a)
    with pytest.raises(PlacementOverlapError):
        apply_boxing(locs, nd(B), nd(B), a, b_pl)


def test_partial_max_round_trips_buy_only_reconstruction():
    p = flat(0, [0, 1])
    t = DenseTensor.from_nested([[1.0, -2.0]])
    locs = materialize(t, nd(Partial("max")), p)
    assert reconstruct(locs, nd(Partial("max")), p) == t


def test_inconsistent_input_locals_detected():
    p = flat(0, [0, 1])
    bad = [DenseTensor.from_nested([[1.0]]), DenseTensor.from_nested([[2.0]])]
    with pytest.raises(Exception):
        apply_boxing(bad, nd(B), nd(S(0)), p, p)
