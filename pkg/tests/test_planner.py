"""Pipeline register planning: lifetime recursion, feasibility arithmetic,
the binary search for the smallest initiation interval, and its properties
on random stage graphs."""

import random

import pytest

from meshkit.planner import (
    CapacityError,
    Stage,
    StageGraph,
    StageGraphError,
    feasible,
    lifetimes,
    min_initiation_interval,
    parse_stage_spec,
    register_counts,
)


def unit_chain(mem=10, cap=60):
    g = StageGraph((cap,))
    g.add_stage(Stage("s1", 1, (mem,)), ["s2"])
    g.add_stage(Stage("s2", 1, (mem,)), ["s3"])
    g.add_stage(Stage("s3", 1, (mem,)), [])
    return g


def random_stage_graph(seed: int) -> StageGraph:
    rng = random.Random(seed)
    n = rng.randint(1, 7)
    n_dev = rng.randint(1, 3)
    g = StageGraph(tuple(rng.randint(20, 200) for _ in range(n_dev)))
    for i in range(n):
        succs = [f"s{j}" for j in range(i + 1, n) if rng.random() < 0.4]
        g.add_stage(
            Stage(f"s{i}", rng.randint(1, 4), tuple(rng.randint(0, 8) for _ in range(n_dev))),
            succs,
        )
    g.validate()
    return g


# --- lifetimes ---------------------------------------------------------------


def test_chain_lifetimes_by_hand():
    # l3 = 1, l2 = 1 + 1, l1 = 1 + 2
    assert lifetimes(unit_chain()) == {"s1": 3, "s2": 2, "s3": 1}


def test_single_stage_lifetime_is_exec_time():
    g = StageGraph((100,))
    g.add_stage(Stage("only", 5, (0,)), [])
    assert lifetimes(g) == {"only": 5}


def test_diamond_lifetime():
    g = StageGraph((100,))
    g.add_stage(Stage("a", 1, (0,)), ["b", "c"])
    g.add_stage(Stage("b", 1, (0,)), ["d"])
    g.add_stage(Stage("c", 1, (0,)), ["d"])
    g.add_stage(Stage("d", 1, (0,)), [])
    assert lifetimes(g)["a"] == 3  # 1 + max(l_b, l_c) = 1 + 2


def test_cycle_detected():
    g = StageGraph((10,))
    g.add_stage(Stage("a", 1, (0,)), ["b"])
    g.add_stage(Stage("b", 1, (0,)), ["a"])
    with pytest.raises(StageGraphError, match="cycle"):
        lifetimes(g)


# --- feasibility ----------------------------------------------------------------


def test_feasible_exact_boundary():
    g = unit_chain(mem=10, cap=60)
    # interval 1: counts (3, 2, 1), usage 60 <= 60
    assert register_counts(g, 1) == {"s1": 3, "s2": 2, "s3": 1}
    assert feasible(g, 1)


def test_infeasible_one_byte_short():
    assert not feasible(unit_chain(mem=10, cap=59), 1)


def test_large_interval_single_buffers():
    g = unit_chain(mem=10, cap=30)
    # interval >= max lifetime: every count is 1, total 30 <= 30
    assert register_counts(g, 3) == {"s1": 1, "s2": 1, "s3": 1}
    assert feasible(g, 3)
    assert not feasible(unit_chain(mem=10, cap=29), 3)


# --- minimum interval -------------------------------------------------------------


def test_min_interval_ample_memory():
    plan = min_initiation_interval(unit_chain(mem=10, cap=60))
    assert plan.initiation_interval == 1
    assert plan.registers == {"s1": 3, "s2": 2, "s3": 1}


def test_min_interval_memory_bound():
    plan = min_initiation_interval(unit_chain(mem=10, cap=40))
    assert plan.initiation_interval == 2
    assert plan.registers == {"s1": 2, "s2": 1, "s3": 1}


def test_min_interval_bounded_below_by_longest_stage():
    g = StageGraph((10_000,))
    g.add_stage(Stage("a", 1, (1,)), ["b"])
    g.add_stage(Stage("b", 4, (1,)), ["c"])
    g.add_stage(Stage("c", 1, (1,)), [])
    plan = min_initiation_interval(g)
    assert plan.initiation_interval == 4


def test_capacity_error_when_nothing_fits():
    g = StageGraph((5,))
    g.add_stage(Stage("a", 1, (10,)), [])
    with pytest.raises(CapacityError):
        min_initiation_interval(g)


def test_feasibility_monotone(rng):
    """feasible(ii) implies feasible(ii + 1): counts are non-increasing."""
    for seed in range(40):
        g = random_stage_graph(seed)
        ub = sum(lifetimes(g).values())
        prev = False
        for ii in range(1, ub + 2):
            cur = feasible(g, ii)
            assert not (prev and not cur), (seed, ii)
            prev = prev or cur


def test_minimality_on_random_graphs():
    """The found interval is feasible and interval - 1 is not (or we are at
    the lower bound)."""
    found = 0
    for seed in range(200):
        g = random_stage_graph(seed)
        try:
            plan = min_initiation_interval(g)
        except CapacityError:
            continue
        found += 1
        assert feasible(g, plan.initiation_interval)
        lo = max(s.exec_time for s in g.stages.values())
        if plan.initiation_interval > lo:
            assert not feasible(g, plan.initiation_interval - 1)
        if found == 100:
            break
    assert found == 100


def test_register_counts_are_ceil_of_lifetime_over_interval():
    g = unit_chain()
    plan = min_initiation_interval(g)
    for sid, l in plan.lifetimes.items():
        ii = plan.initiation_interval
        assert plan.registers[sid] == -(-l // ii)


# --- stage spec text ------------------------------------------------------------


STAGES_TSV = """\
# demo pipeline
capacity\t40
stage\ts1\t1\t10\ts2
stage\ts2\t1\t10\ts3
stage\ts3\t1\t10\t-
"""


def test_parse_stage_spec():
    g = parse_stage_spec(STAGES_TSV)
    assert g.capacities == (40,)
    assert min_initiation_interval(g).initiation_interval == 2


def test_parse_stage_spec_errors():
    with pytest.raises(StageGraphError, match="line 1"):
        parse_stage_spec("bogus\t1\n")
    with pytest.raises(StageGraphError, match="capacity"):
        parse_stage_spec("stage\ts\t1\t0\t-\n")
