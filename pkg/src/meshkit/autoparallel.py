"""Parallelism strategy search over an undirected cost graph.

Each op becomes a node with per-candidate computation costs; each tensor
edge carries a matrix of re-routing costs between producer and consumer
candidates. The graph is simplified by exact reductions (parallel-edge
merge, leaf fold, degree-2 fold, thresholded pair merge), searched greedily
when simplification stalls, and choices are recovered by replaying the
reduction log backwards. A brute-force enumerator serves as the oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from . import graph as graphmod
from . import ops as opsmod
from . import sbp as sbpmod
from .boxing import nd_transfer_cost
from .graph import LogicalGraph
from .sbp import OpSbpSignature


class CostGraphError(ValueError):
    pass


@dataclass
class CostNode:
    id: str
    candidates: list  # opaque labels (signatures for op graphs)
    comp_cost: list[float]

    def __post_init__(self):
        if not self.candidates:
            raise CostGraphError(f"node {self.id!r} has no candidates")
        if len(self.comp_cost) != len(self.candidates):
            raise CostGraphError(f"node {self.id!r}: cost/candidate length mismatch")
        if any(c < 0 for c in self.comp_cost):
            raise CostGraphError(f"node {self.id!r}: negative cost")


@dataclass
class CostEdge:
    eid: int
    a: str
    b: str
    cost: list[list[float]]  # indexed [candidate of a][candidate of b]

    def at(self, x: str, sx: int, sy: int) -> float:
        """Cost with `sx` indexing endpoint `x` (edges are direction-free)."""
        return self.cost[sx][sy] if x == self.a else self.cost[sy][sx]


# reduction log records, replayed in reverse by `backtrack`


@dataclass
class EdgeMerge:
    a: str
    b: str
    merged: list[int]


@dataclass
class LeafFold:
    leaf: str
    neighbor: str
    choice: list[int]  # neighbor candidate -> leaf candidate


@dataclass
class NodeFold:
    node: str
    nj: str
    nk: str
    choice: list[list[int]]  # [nj candidate][nk candidate] -> node candidate


@dataclass
class PairMerge:
    merged: str
    left: str
    right: str
    pairs: list[tuple[int, int]]  # merged candidate -> (left, right) candidates


LogEntry = EdgeMerge | LeafFold | NodeFold | PairMerge


@dataclass
class CostGraph:
    nodes: dict[str, CostNode] = field(default_factory=dict)
    edges: dict[int, CostEdge] = field(default_factory=dict)
    log: list[LogEntry] = field(default_factory=list)
    _next_eid: int = 0

    def add_node(self, node: CostNode) -> CostNode:
        if node.id in self.nodes:
            raise CostGraphError(f"duplicate node {node.id!r}")
        self.nodes[node.id] = node
        return node

    def add_edge(self, a: str, b: str, cost: list[list[float]]) -> CostEdge:
        if a not in self.nodes or b not in self.nodes:
            raise CostGraphError(f"edge endpoints unknown: {a!r}, {b!r}")
        if a == b:
            raise CostGraphError("self-loops are not allowed")
        if len(cost) != len(self.nodes[a].candidates) or any(
            len(row) != len(self.nodes[b].candidates) for row in cost
        ):
            raise CostGraphError(f"edge {a!r}-{b!r}: matrix shape mismatch")
        e = CostEdge(self._next_eid, a, b, cost)
        self._next_eid += 1
        self.edges[e.eid] = e
        return e

    def incident(self, n: str) -> list[CostEdge]:
        return [e for e in self.edges.values() if n in (e.a, e.b)]

    def neighbors(self, n: str) -> list[str]:
        out = []
        for e in self.incident(n):
            other = e.b if e.a == n else e.a
            if other not in out:
                out.append(other)
        return sorted(out)

    def degree(self, n: str) -> int:
        """Number of distinct adjacent nodes (parallel edges count once)."""
        return len(self.neighbors(n))

    def parallel_groups(self) -> dict[tuple[str, str], list[int]]:
        groups: dict[tuple[str, str], list[int]] = {}
        for e in sorted(self.edges.values(), key=lambda e: e.eid):
            key = (e.a, e.b) if e.a <= e.b else (e.b, e.a)
            groups.setdefault(key, []).append(e.eid)
        return groups

    def copy(self) -> "CostGraph":
        g = CostGraph()
        for n in self.nodes.values():
            g.add_node(CostNode(n.id, list(n.candidates), list(n.comp_cost)))
        for e in sorted(self.edges.values(), key=lambda e: e.eid):
            g.add_edge(e.a, e.b, [row[:] for row in e.cost])
        return g


def total_cost(g: CostGraph, assignment: dict[str, int]) -> float:
    total = sum(g.nodes[n].comp_cost[assignment[n]] for n in g.nodes)
    for e in g.edges.values():
        total += e.cost[assignment[e.a]][assignment[e.b]]
    return total


# -- reductions ---------------------------------------------------------


def eliminate_edges(g: CostGraph, a: str, b: str) -> None:
    """Merge all parallel edges between a and b into one (matrices summed)."""
    key = (a, b) if a <= b else (b, a)
    eids = g.parallel_groups().get(key, [])
    if len(eids) < 2:
        raise CostGraphError(f"no parallel edges between {a!r} and {b!r}")
    na, nb = len(g.nodes[a].candidates), len(g.nodes[b].candidates)
    merged = [[0.0] * nb for _ in range(na)]
    for eid in eids:
        e = g.edges.pop(eid)
        for sa in range(na):
            for sb in range(nb):
                merged[sa][sb] += e.at(a, sa, sb)
    g.add_edge(a, b, merged)
    g.log.append(EdgeMerge(a, b, eids))


def eliminate_leaf(g: CostGraph, leaf: str) -> None:
    """Fold a degree-1 node into its neighbor, minimizing over the leaf's
    candidates for each neighbor candidate."""
    if g.degree(leaf) != 1:
        raise CostGraphError(f"{leaf!r} is not a leaf (degree {g.degree(leaf)})")
    edges = g.incident(leaf)
    if len(edges) != 1:
        raise CostGraphError(f"{leaf!r} has parallel edges; merge them first")
    e = edges[0]
    nb = e.b if e.a == leaf else e.a
    ln, nn = g.nodes[leaf], g.nodes[nb]
    choice = []
    for sj in range(len(nn.candidates)):
        best, best_si = None, 0
        for si in range(len(ln.candidates)):
            c = e.at(leaf, si, sj) + ln.comp_cost[si]
            if best is None or c < best:
                best, best_si = c, si
        nn.comp_cost[sj] += best
        choice.append(best_si)
    del g.edges[e.eid]
    del g.nodes[leaf]
    g.log.append(LeafFold(leaf, nb, choice))


def eliminate_node(g: CostGraph, n: str) -> None:
    """Replace a degree-2 node and its two edges by one edge carrying the
    minimized pass-through cost."""
    if g.degree(n) != 2:
        raise CostGraphError(f"{n!r} does not have degree 2 (degree {g.degree(n)})")
    edges = g.incident(n)
    if len(edges) != 2:
        raise CostGraphError(f"{n!r} has parallel edges; merge them first")
    ej, ek = edges
    nj = ej.b if ej.a == n else ej.a
    nk = ek.b if ek.a == n else ek.a
    node = g.nodes[n]
    njn, nkn = g.nodes[nj], g.nodes[nk]
    matrix, choice = [], []
    for sj in range(len(njn.candidates)):
        row, crow = [], []
        for sk in range(len(nkn.candidates)):
            best, best_si = None, 0
            for si in range(len(node.candidates)):
                c = node.comp_cost[si] + ej.at(n, si, sj) + ek.at(n, si, sk)
                if best is None or c < best:
                    best, best_si = c, si
            row.append(best)
            crow.append(best_si)
        matrix.append(row)
        choice.append(crow)
    del g.edges[ej.eid]
    del g.edges[ek.eid]
    del g.nodes[n]
    g.add_edge(nj, nk, matrix)
    g.log.append(NodeFold(n, nj, nk, choice))


def merge_nodes(g: CostGraph, left: str, right: str) -> None:
    """Merge two nodes into one over the Cartesian candidate set; an edge
    between them (if any) folds into the merged computation cost."""
    if left == right:
        raise CostGraphError("cannot merge a node with itself")
    ln, rn = g.nodes[left], g.nodes[right]
    between = [
        e for e in g.incident(left) if (e.a, e.b) in ((left, right), (right, left))
    ]
    if len(between) > 1:
        raise CostGraphError("merge with parallel edges between the pair; merge edges first")
    pairs, costs = [], []
    for si in range(len(ln.candidates)):
        for sj in range(len(rn.candidates)):
            c = ln.comp_cost[si] + rn.comp_cost[sj]
            if between:
                c += between[0].at(left, si, sj)
            pairs.append((si, sj))
            costs.append(c)
    merged_id = f"{left}+{right}"
    if merged_id in g.nodes:
        raise CostGraphError(f"merged id {merged_id!r} collides")
    merged = CostNode(merged_id, pairs[:], costs)
    # re-index incident edges of both members onto the merged candidate set
    between_ids = {e.eid for e in between}
    to_rewire = [
        e for e in g.incident(left) + g.incident(right) if e.eid not in between_ids
    ]
    for e in between:
        del g.edges[e.eid]
    del g.nodes[left]
    del g.nodes[right]
    g.add_node(merged)
    for e in to_rewire:
        member = left if left in (e.a, e.b) else right
        other = e.b if e.a == member else e.a
        matrix = []
        for mi, (si, sj) in enumerate(pairs):
            s_member = si if member == left else sj
            row = [
                e.at(member, s_member, so)
                for so in range(len(g.nodes[other].candidates))
            ]
            matrix.append(row)
        del g.edges[e.eid]
        g.add_edge(merged_id, other, matrix)
    g.log.append(PairMerge(merged_id, left, right, pairs))


def _neighborhood(g: CostGraph, n: str) -> set[str]:
    return {n} | set(g.neighbors(n))


def pick_merge_pair(g: CostGraph, alpha: int) -> Optional[tuple[str, str]]:
    """Pair with candidate-count product <= alpha and the largest common
    neighborhood; ties broken by lexicographically smallest (id, id)."""
    ids = sorted(g.nodes)
    best: Optional[tuple[int, str, str]] = None
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if len(g.nodes[a].candidates) * len(g.nodes[b].candidates) > alpha:
                continue
            common = len(_neighborhood(g, a) & _neighborhood(g, b))
            if best is None or common > best[0]:
                best = (common, a, b)
    return None if best is None else (best[1], best[2])


def simplify(g: CostGraph, alpha: int = 64) -> CostGraph:
    """Apply reductions until a single node remains or nothing applies.

    Priority when several apply: parallel-edge merge, then leaf fold, then
    degree-2 fold, scanning node ids in order; pair merging only when no
    reduction applies, the graph has >= 4 nodes, and a pair fits `alpha`.
    """
    while len(g.nodes) > 1:
        groups = {k: v for k, v in g.parallel_groups().items() if len(v) >= 2}
        if groups:
            a, b = sorted(groups)[0]
            eliminate_edges(g, a, b)
            continue
        leaf = next((n for n in sorted(g.nodes) if g.degree(n) == 1), None)
        if leaf is not None:
            eliminate_leaf(g, leaf)
            continue
        deg2 = next((n for n in sorted(g.nodes) if g.degree(n) == 2), None)
        if deg2 is not None:
            eliminate_node(g, deg2)
            continue
        if len(g.nodes) < 4:
            break
        pair = pick_merge_pair(g, alpha)
        if pair is None:
            break
        merge_nodes(g, *pair)
    return g


# -- search -------------------------------------------------------------


def greedy_search(g: CostGraph, rng=None, cost_trace: list | None = None) -> dict[str, int]:
    """Edge-driven local adjustment until no pair move lowers total cost.

    Starts from candidate 0 everywhere (or a seeded random assignment when
    `rng` is given). Each step re-optimizes one edge's endpoint pair against
    the rest of the assignment; any change re-queues the touched edges.
    Cost strictly decreases on every change, so the loop terminates.
    `cost_trace` (when given) receives the total cost after every change.
    """
    assignment = {
        n: (rng.randrange(len(node.candidates)) if rng else 0)
        for n, node in sorted(g.nodes.items())
    }
    # nodes untouched by any edge are independent: take their argmin directly
    touched = {e.a for e in g.edges.values()} | {e.b for e in g.edges.values()}
    for n, node in g.nodes.items():
        if n not in touched:
            costs = node.comp_cost
            assignment[n] = min(range(len(costs)), key=lambda i: (costs[i], i))
    if not g.edges:
        return assignment

    worklist = [e.eid for e in sorted(g.edges.values(), key=lambda e: e.eid)]
    queued = set(worklist)
    while worklist:
        eid = worklist.pop(0)
        queued.discard(eid)
        e = g.edges[eid]
        cur = (assignment[e.a], assignment[e.b])

        def pair_cost(sa: int, sb: int) -> float:
            c = g.nodes[e.a].comp_cost[sa] + g.nodes[e.b].comp_cost[sb]
            for inc in g.incident(e.a):
                other = inc.b if inc.a == e.a else inc.a
                so = sb if other == e.b else assignment[other]
                c += inc.at(e.a, sa, so)
            for inc in g.incident(e.b):
                other = inc.b if inc.a == e.b else inc.a
                if other == e.a:
                    continue  # counted once above
                c += inc.at(e.b, sb, assignment[other])
            return c

        best, best_pair = pair_cost(*cur), cur
        for sa in range(len(g.nodes[e.a].candidates)):
            for sb in range(len(g.nodes[e.b].candidates)):
                c = pair_cost(sa, sb)
                if c < best:  # ties keep the current assignment
                    best, best_pair = c, (sa, sb)
        if best_pair != cur:
            assignment[e.a], assignment[e.b] = best_pair
            if cost_trace is not None:
                cost_trace.append(total_cost(g, assignment))
            for inc in g.incident(e.a) + g.incident(e.b):
                if inc.eid not in queued:
                    worklist.append(inc.eid)
                    queued.add(inc.eid)
    return assignment


def backtrack(assignment: dict[str, int], log: list[LogEntry]) -> dict[str, int]:
    """Recover an assignment for every original node by replaying the
    reduction log in reverse."""
    full = dict(assignment)
    for entry in reversed(log):
        if isinstance(entry, EdgeMerge):
            continue
        if isinstance(entry, PairMerge):
            mi = full.pop(entry.merged)
            si, sj = entry.pairs[mi]
            full[entry.left] = si
            full[entry.right] = sj
        elif isinstance(entry, LeafFold):
            full[entry.leaf] = entry.choice[full[entry.neighbor]]
        elif isinstance(entry, NodeFold):
            full[entry.node] = entry.choice[full[entry.nj]][full[entry.nk]]
        else:
            raise CostGraphError(f"corrupted log entry {entry!r}")
    return full


BRUTE_FORCE_LIMIT = 10**6


def brute_force(g: CostGraph) -> tuple[float, dict[str, int]]:
    """Exhaustive minimum; ties resolved toward the lexicographically
    smallest assignment over id-sorted nodes. Guarded by state-space size."""
    ids = sorted(g.nodes)
    sizes = [len(g.nodes[n].candidates) for n in ids]
    space = 1
    for s in sizes:
        space *= s
        if space > BRUTE_FORCE_LIMIT:
            raise CostGraphError(f"state space exceeds {BRUTE_FORCE_LIMIT}")
    comp = [g.nodes[n].comp_cost for n in ids]
    pos = {n: i for i, n in enumerate(ids)}
    edges = [(pos[e.a], pos[e.b], e.cost) for e in sorted(g.edges.values(), key=lambda e: e.eid)]
    best_cost, best_assign = None, None
    for combo in itertools.product(*(range(s) for s in sizes)):
        c = 0.0
        for i, s in enumerate(combo):
            c += comp[i][s]
        for ia, ib, m in edges:
            c += m[combo[ia]][combo[ib]]
        if best_cost is None or c < best_cost:
            best_cost, best_assign = c, combo
    return best_cost, dict(zip(ids, best_assign))


# -- cost graph from a logical graph -------------------------------------


@dataclass(frozen=True)
class CostParams:
    device_speed: float = 1.0  # work units per time unit
    bandwidth: float = 1.0  # bytes per time unit


def build_cost_graph(
    graph: LogicalGraph, params: CostParams = CostParams()
) -> tuple[CostGraph, dict[str, list[OpSbpSignature]]]:
    """Cost model for strategy search over a validated logical graph.

    Node cost per candidate is the kernel work on the largest local shapes
    under that candidate (device 0 with ceil-first sharding), scaled by
    device speed; edge cost is the transfer size between the producer's
    output annotation and the consumer's input annotation over bandwidth.
    """
    graphmod.validate(graph)
    shapes = graphmod.infer_shapes(graph)
    candidates: dict[str, list[OpSbpSignature]] = {}
    g = CostGraph()
    for op in graph.ops:
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
        if not sigs:
            raise CostGraphError(f"op {op.id!r} has no valid signature candidates")
        candidates[op.id] = sigs
        costs = []
        for sig in sigs:
            local_in = [
                sbpmod.local_shape(tuple(s), sig.inputs[i], op.placement, 0)
                for i, s in enumerate(in_shapes)
            ]
            costs.append(opsmod.flops(op.kind, local_in) / params.device_speed)
        g.add_node(CostNode(op.id, sigs, costs))
    for op in graph.ops:
        for slot, src in enumerate(op.inputs):
            producer = graph.op(src)
            t_bytes = 8
            for e in shapes[src]:
                t_bytes *= e
            matrix = []
            for psig in candidates[src]:
                row = []
                for csig in candidates[op.id]:
                    cost = nd_transfer_cost(
                        psig.outputs[0],
                        csig.inputs[slot],
                        t_bytes,
                        producer.placement,
                        op.placement,
                    )
                    row.append(cost / params.bandwidth)
                matrix.append(row)
            g.add_edge(src, op.id, matrix)
    return g, candidates


def search_strategy(
    graph: LogicalGraph,
    alpha: int = 64,
    params: CostParams = CostParams(),
    restarts: int = 0,
    seed: int = 0,
) -> tuple[dict[str, OpSbpSignature], float]:
    """Full pipeline: cost graph, simplify, search the remainder, backtrack.

    The greedy phase starts from candidate 0 everywhere; `restarts` adds
    seeded random initializations and keeps the cheapest result. Returns the
    chosen signature per op and the total modeled cost.
    """
    import random as _random

    g, candidates = build_cost_graph(graph, params)
    original = g.copy()
    simplify(g, alpha)
    attempts = [None] + [_random.Random(seed + i) for i in range(restarts)]
    best_full, best_cost = None, None
    for rng in attempts:
        reduced_assignment = greedy_search(g, rng=rng)
        full = backtrack(reduced_assignment, g.log)
        cost = total_cost(original, full)
        if best_cost is None or cost < best_cost:
            best_full, best_cost = full, cost
    chosen = {op_id: candidates[op_id][best_full[op_id]] for op_id in candidates}
    return chosen, best_cost
