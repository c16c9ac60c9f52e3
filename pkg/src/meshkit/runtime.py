"""Counter-based message-passing runtime for physical plans.

Every actor owns registers with a fixed slot count (its pipeline credit).
Producers announce new slots with Req messages and count live consumers per
slot; consumers count ready inputs per edge and Ack after use. An action
fires only when every input edge has a ready slot and every out register
has free credit, which yields pipelining with back pressure and no global
scheduler state.

Two engines exist: a deterministic global-tick loop (the test substrate,
with traces and a deadlock detector) and a threaded mode with one worker
per simulated hardware queue. Both produce identical outputs.
"""

from __future__ import annotations

import queue
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import ops as opsmod
from .compiler import (
    ActorSpec,
    ExecBox,
    ExecCollect,
    ExecDistribute,
    ExecForward,
    ExecKernel,
    ExecSource,
    PhysicalPlan,
    fmt_actor_id,
)
from .sbp import (
    Broadcast,
    Partial,
    Split,
    identity_fill,
    materialize,
    reconstruct,
    shard_offsets,
    split_shard,
)
from . import tensor as tz
from .tensor import DenseTensor


class ProtocolError(RuntimeError):
    """A counter went out of range: the message protocol was violated."""


class DeadlockError(RuntimeError):
    def __init__(self, message: str, wait_graph: str):
        super().__init__(message)
        self.wait_graph = wait_graph


@dataclass
class RunStats:
    ticks: int = 0
    messages: int = 0
    actions: int = 0
    bytes_moved: int = 0
    first_fire: dict[int, int] = field(default_factory=dict)
    fire_ticks: dict[int, list[int]] = field(default_factory=dict)


@dataclass
class RunResult:
    outputs: dict[str, list[DenseTensor]]  # sink op id -> global tensor per batch
    collected: dict[int, list[DenseTensor]]  # collecting actor id -> per batch
    trace: list[tuple[int, int, str, int]]  # (tick, actor id, event, batch)
    stats: RunStats


# -- shared per-actor protocol state --------------------------------------


class _Slot:
    __slots__ = ("tensor", "batch", "refcount", "claimed")

    def __init__(self):
        self.tensor: Optional[DenseTensor] = None
        self.batch = -1
        self.refcount = 0
        self.claimed = False


class _RegisterRt:
    def __init__(self, spec, dynamic: bool):
        self.spec = spec
        self.dynamic = dynamic  # quota-free mode: slots allocated per fire
        self.slots: list[_Slot] = [] if dynamic else [_Slot() for _ in range(spec.slots)]
        self.out_counter = spec.slots
        self.next_slot = 0
        self.reqs_sent = 0
        self.acks_received = 0

    def claim(self) -> int:
        if self.dynamic:
            self.slots.append(_Slot())
            idx = len(self.slots) - 1
            self.slots[idx].claimed = True
            return idx
        if self.out_counter < 1:
            raise ProtocolError(f"register r{self.spec.rid}: claim without credit")
        n = len(self.slots)
        for off in range(n):
            idx = (self.next_slot + off) % n
            s = self.slots[idx]
            if s.refcount == 0 and not s.claimed:
                s.claimed = True
                self.next_slot = (idx + 1) % n
                self.out_counter -= 1
                return idx
        raise ProtocolError(f"register r{self.spec.rid}: credit says free but no slot is")


class _ActorRt:
    def __init__(self, spec: ActorSpec, n_batches: int):
        self.spec = spec
        self.fired = 0
        self.n_batches = n_batches
        self.in_queues: list[deque] = [deque() for _ in spec.in_edges]
        self.in_counters = [0] * len(spec.in_edges)
        self.registers = {r.rid: None for r in spec.out_registers}  # filled by engine
        self.pending: Optional[tuple[int, dict[int, int]]] = None  # (batch, rid->slot)

    def done(self) -> bool:
        return self.fired >= self.n_batches


def _run_exec(spec: ActorSpec, inputs: list[DenseTensor]) -> Optional[DenseTensor]:
    ex = spec.exec
    if isinstance(ex, ExecKernel):
        return opsmod.apply_kind(ex.kind, inputs)
    if isinstance(ex, ExecForward):
        return inputs[0] if inputs else None
    if isinstance(ex, ExecCollect):
        return reconstruct(inputs, ex.sbp, ex.placement)
    if isinstance(ex, ExecDistribute):
        return materialize(inputs[0], ex.sbp, ex.placement)[ex.index]
    if isinstance(ex, ExecBox):
        return _box_local(ex, inputs)
    raise TypeError(f"cannot execute {ex!r} without a feed context")


def _box_local(ex: ExecBox, inputs: list[DenseTensor]) -> DenseTensor:
    """One device's share of a same-device-set re-annotation."""
    src, dst, p, i = ex.src, ex.dst, ex.count, ex.index
    if isinstance(src, Split) and isinstance(dst, Split):
        if src.axis == dst.axis:
            return inputs[0]
        g = tz.concat(inputs, src.axis)
        return split_shard(g, dst.axis, p)[i]
    if isinstance(src, Split) and isinstance(dst, Broadcast):
        return tz.concat(inputs, src.axis)
    if isinstance(src, Split) and isinstance(dst, Partial):
        extent = ex.global_shape[src.axis]
        off = shard_offsets(extent, p)[i]
        return tz.pad_axis(inputs[0], src.axis, off, extent)
    if isinstance(src, Broadcast) and isinstance(dst, Split):
        return split_shard(inputs[0], dst.axis, p)[i]
    if isinstance(src, Broadcast) and isinstance(dst, Broadcast):
        return inputs[0]
    if isinstance(src, Broadcast) and isinstance(dst, Partial):
        return inputs[0] if i == 0 else identity_fill(inputs[0].shape, dst.reduce)
    if isinstance(src, Partial):
        if isinstance(dst, Partial):
            return inputs[0]  # keeps its own piece
        acc = inputs[0]
        for t in inputs[1:]:
            acc = tz.add(acc, t) if src.reduce == "sum" else tz.maximum(acc, t)
        if isinstance(dst, Split):
            return split_shard(acc, dst.axis, p)[i]
        return acc  # P -> B
    raise TypeError(f"unhandled box cell {src} -> {dst}")


def _normalize_feeds(plan: PhysicalPlan, feeds, n_batches: int) -> dict[str, list[DenseTensor]]:
    feeds = feeds or {}
    out: dict[str, list[DenseTensor]] = {}
    for op_id, src in plan.sources.items():
        if op_id in feeds:
            v = feeds[op_id]
            seq = [v] * n_batches if isinstance(v, DenseTensor) else list(v)
        elif src.value is not None:
            seq = [src.value] * n_batches
        else:
            raise ValueError(f"missing feed for source {op_id!r}")
        if len(seq) != n_batches:
            raise ValueError(f"feed for {op_id!r} has {len(seq)} batches, need {n_batches}")
        for t in seq:
            if t.shape != src.shape:
                raise ValueError(
                    f"feed for {op_id!r} has shape {t.shape}, declared {src.shape}"
                )
        out[op_id] = seq
    return out


class _EngineBase:
    """Protocol logic shared by both engines; scheduling is subclass policy."""

    def __init__(
        self,
        plan: PhysicalPlan,
        feeds,
        n_batches: int,
        check_invariants: bool = False,
        quota_free: bool = False,
        caps: dict | None = None,
    ):
        self.plan = plan
        self.n_batches = n_batches
        self.feeds = _normalize_feeds(plan, feeds, n_batches)
        self.actors = {aid: _ActorRt(a, n_batches) for aid, a in plan.actors.items()}
        self.quota_free = quota_free
        self.caps = dict(caps or {})
        self.pool_used: dict = {}
        for art in self.actors.values():
            for r in art.spec.out_registers:
                art.registers[r.rid] = _RegisterRt(r, dynamic=quota_free)
        self.check_invariants = check_invariants
        self.stats = RunStats()
        self.trace: list[tuple[int, int, str, int]] = []
        self.collected: dict[int, list[DenseTensor]] = {
            aid: [] for aid, a in plan.actors.items() if a.collect
        }
        self._group_of = {}
        for grp in plan.groups:
            self._group_of[grp.members[0]] = grp

    # memory pool (quota-free mode only)

    def _pool_key(self, spec: ActorSpec):
        return (spec.node, spec.device)

    def _pool_free(self, spec: ActorSpec) -> Optional[int]:
        key = self._pool_key(spec)
        if key not in self.caps:
            return None
        return self.caps[key] - self.pool_used.get(key, 0)

    def _fire_bytes(self, spec: ActorSpec) -> int:
        return sum(r.slot_bytes for r in spec.out_registers)

    def eligible(self, art: _ActorRt) -> bool:
        if art.done() or art.pending is not None:
            return False
        if any(c < 1 for c in art.in_counters):
            return False
        if self.quota_free:
            free = self._pool_free(art.spec)
            return free is None or self._fire_bytes(art.spec) <= free
        return all(reg.out_counter >= 1 for reg in art.registers.values())

    def begin_fire(self, art: _ActorRt) -> tuple[int, dict[int, int]]:
        batch = art.fired
        claimed: dict[int, int] = {}
        for rid, reg in art.registers.items():
            claimed[rid] = reg.claim()
        if self.quota_free:
            key = self._pool_key(art.spec)
            if key in self.caps:
                self.pool_used[key] = self.pool_used.get(key, 0) + self._fire_bytes(art.spec)
        return batch, claimed

    def complete_fire(self, art: _ActorRt, batch: int, claimed: dict[int, int], send):
        spec = art.spec
        inputs: list[DenseTensor] = []
        heads: list[tuple[int, tuple]] = []
        for i, q in enumerate(art.in_queues):
            head = q[0]
            if head[2] != batch:
                raise ProtocolError(
                    f"{spec.name}: input {i} is at batch {head[2]}, expected {batch}"
                )
            heads.append((i, head))
            if not spec.in_edges[i].is_control:
                src = self.actors[spec.in_edges[i].src]
                inputs.append(src.registers[head[0]].slots[head[1]].tensor)
            else:
                inputs.append(None)
        imap = spec.input_map or [
            i for i, e in enumerate(spec.in_edges) if not e.is_control
        ]
        exec_inputs = [inputs[k] for k in imap]
        if isinstance(spec.exec, ExecSource):
            ex = spec.exec
            global_t = self.feeds[ex.op_id][batch]
            out = materialize(global_t, ex.sbp, ex.placement)[ex.index]
        else:
            out = _run_exec(spec, [t for t in exec_inputs if t is not None])
        if spec.collect:
            data_reg = spec.data_register()
            self.collected[spec.aid].append(out if data_reg is not None else exec_inputs[0])
        for rid, slot_idx in claimed.items():
            reg = art.registers[rid]
            slot = reg.slots[slot_idx]
            if slot.refcount != 0:
                raise ProtocolError(
                    f"{spec.name}: writing slot {slot_idx} of r{rid} while referenced"
                )
            if not reg.spec.is_control:
                slot.tensor = out
            slot.batch = batch
            slot.claimed = False
        # consume inputs: drop heads, decrement ready counters, ack upstream
        for i, head in heads:
            art.in_queues[i].popleft()
            art.in_counters[i] -= 1
            if art.in_counters[i] < 0:
                raise ProtocolError(f"{spec.name}: input counter underflow")
            edge = spec.in_edges[i]
            send(("ack", edge.src, spec.aid, head[0], head[1]))
        # announce outputs: one req per consumer, counting live references
        for r in spec.out_registers:
            reg = art.registers[r.rid]
            slot_idx = claimed[r.rid]
            slot = reg.slots[slot_idx]
            for consumer in r.consumers:
                slot.refcount += 1
                reg.reqs_sent += 1
                send(("req", consumer, spec.aid, r.rid, slot_idx, batch))
            if not r.consumers:
                self._recycle(art, reg, slot_idx)
        art.fired += 1
        self.stats.actions += 1
        grp = self._group_of.get(spec.aid)
        if grp is not None:
            self.stats.bytes_moved += grp.nbytes

    def _recycle(self, art: _ActorRt, reg: _RegisterRt, slot_idx: int) -> None:
        if reg.dynamic:
            key = self._pool_key(art.spec)
            if key in self.caps:
                self.pool_used[key] = self.pool_used.get(key, 0) - reg.spec.slot_bytes
            reg.slots[slot_idx].tensor = None
        else:
            reg.out_counter += 1
            if reg.out_counter > reg.spec.slots:
                raise ProtocolError(f"register r{reg.spec.rid}: credit overflow")

    def handle(self, art: _ActorRt, msg, send) -> None:
        kind = msg[0]
        if kind == "req":
            _, _dst, src, rid, slot_idx, batch = msg
            for i, e in enumerate(art.spec.in_edges):
                if e.src == src and e.rid == rid:
                    art.in_counters[i] += 1
                    art.in_queues[i].append((rid, slot_idx, batch))
                    return
            raise ProtocolError(f"{art.spec.name}: req from unknown edge {src}/r{rid}")
        if kind == "ack":
            _, _dst, _consumer, rid, slot_idx = msg
            reg = art.registers.get(rid)
            if reg is None:
                raise ProtocolError(f"{art.spec.name}: ack for unknown register r{rid}")
            slot = reg.slots[slot_idx]
            slot.refcount -= 1
            reg.acks_received += 1
            if slot.refcount < 0:
                raise ProtocolError(f"{art.spec.name}: reference counter underflow")
            if slot.refcount == 0:
                self._recycle(art, reg, slot_idx)
            return
        raise ProtocolError(f"unknown message {msg!r}")

    def check_credit_conservation(self) -> None:
        for art in self.actors.values():
            for reg in art.registers.values():
                if reg.dynamic:
                    continue
                in_use = sum(1 for s in reg.slots if s.refcount > 0)
                claimed = sum(1 for s in reg.slots if s.claimed)
                if reg.out_counter + in_use + claimed != reg.spec.slots:
                    raise ProtocolError(
                        f"{art.spec.name}: credit conservation broken on r{reg.spec.rid}: "
                        f"{reg.out_counter} free + {in_use} referenced + {claimed} claimed "
                        f"!= {reg.spec.slots}"
                    )

    def check_final_balance(self) -> None:
        for art in self.actors.values():
            if not art.done():
                raise ProtocolError(f"{art.spec.name}: finished run but fired {art.fired}")
            for reg in art.registers.values():
                if reg.reqs_sent != reg.acks_received:
                    raise ProtocolError(
                        f"{art.spec.name}: r{reg.spec.rid} reqs {reg.reqs_sent} != acks {reg.acks_received}"
                    )
                if any(s.refcount != 0 for s in reg.slots):
                    raise ProtocolError(f"{art.spec.name}: live references at termination")
                if not reg.dynamic and reg.out_counter != reg.spec.slots:
                    raise ProtocolError(f"{art.spec.name}: credit not restored at termination")

    def wait_graph(self) -> str:
        lines = []
        for aid in sorted(self.actors):
            art = self.actors[aid]
            if art.done():
                continue
            reasons = []
            for i, e in enumerate(art.spec.in_edges):
                if art.in_counters[i] < 1:
                    reasons.append(f"data from {self.plan.actors[e.src].name}")
            if not self.quota_free:
                for reg in art.registers.values():
                    if reg.out_counter < 1:
                        holders = {
                            self.plan.actors[c].name
                            for c in reg.spec.consumers
                        }
                        reasons.append(
                            f"credit on r{reg.spec.rid} (held by {', '.join(sorted(holders))})"
                        )
            else:
                free = self._pool_free(art.spec)
                if free is not None and self._fire_bytes(art.spec) > free:
                    reasons.append(
                        f"memory ({self._fire_bytes(art.spec)} bytes needed, {free} free)"
                    )
            lines.append(
                f"{art.spec.name} [{art.fired}/{art.n_batches}] waits on: "
                + ("; ".join(reasons) if reasons else "scheduler")
            )
        return "\n".join(lines)

    def results(self) -> RunResult:
        outputs: dict[str, list[DenseTensor]] = {}
        for op_id, sink in self.plan.sinks.items():
            per_device = [self.collected[aid] for aid in sink.actors]
            outputs[op_id] = [
                reconstruct([col[b] for col in per_device], sink.sbp, sink.placement)
                for b in range(self.n_batches)
            ]
        return RunResult(outputs, self.collected, self.trace, self.stats)


# -- deterministic engine ---------------------------------------------------


class _DeterministicEngine(_EngineBase):
    def __init__(self, plan, feeds, n_batches, latency=1, max_ticks=1_000_000, **kw):
        super().__init__(plan, feeds, n_batches, **kw)
        self.latency = max(1, latency)
        self.max_ticks = max_ticks
        self.schedule: dict[int, list[tuple]] = {}  # arrival tick -> messages
        self.completions: dict[int, list[tuple[int, int, dict]]] = {}
        self.thread_free: dict[tuple[int, int], int] = {}
        self.tick = 0

    def _send(self, msg):
        # msg[1] is the receiver, msg[2] the sender, for both kinds.
        self.stats.messages += 1
        src_spec = self.plan.actors[msg[2]]
        dst_spec = self.plan.actors[msg[1]]
        if (src_spec.node, src_spec.thread) == (dst_spec.node, dst_spec.thread):
            # same hardware queue: handled without a queue hop
            self.handle(self.actors[msg[1]], msg, self._send)
            return
        if src_spec.node == dst_spec.node:
            arrival = self.tick + 1
        else:
            arrival = self.tick + self.latency
        self.schedule.setdefault(arrival, []).append(msg)

    def run(self) -> RunResult:
        actor_order = sorted(self.actors)
        while True:
            progressed = False
            for msg in self.schedule.pop(self.tick, []):
                self.handle(self.actors[msg[1]], msg, self._send)
                progressed = True
            for aid, batch, claimed in self.completions.pop(self.tick, []):
                art = self.actors[aid]
                self.complete_fire(art, batch, claimed, self._send)
                art.pending = None
                self.trace.append((self.tick, aid, "act", batch))
                self.stats.fire_ticks.setdefault(aid, []).append(self.tick)
                progressed = True
            for aid in actor_order:
                art = self.actors[aid]
                spec = art.spec
                tkey = (spec.node, spec.thread)
                if self.thread_free.get(tkey, 0) > self.tick:
                    continue
                if not self.eligible(art):
                    continue
                batch, claimed = self.begin_fire(art)
                self.thread_free[tkey] = self.tick + spec.ticks
                self.stats.first_fire.setdefault(aid, self.tick)
                if spec.ticks == 1:
                    self.complete_fire(art, batch, claimed, self._send)
                    self.trace.append((self.tick, aid, "act", batch))
                    self.stats.fire_ticks.setdefault(aid, []).append(self.tick)
                else:
                    art.pending = (batch, claimed)
                    self.completions.setdefault(self.tick + spec.ticks - 1, []).append(
                        (aid, batch, claimed)
                    )
                progressed = True
            if self.check_invariants:
                self.check_credit_conservation()
            all_done = all(a.done() for a in self.actors.values())
            idle = not self.schedule and not self.completions
            if all_done and idle:
                break
            if not progressed and idle:
                raise DeadlockError(
                    f"deadlock at tick {self.tick}: no actor can make progress",
                    self.wait_graph(),
                )
            self.tick += 1
            if self.tick > self.max_ticks:
                raise RuntimeError(f"exceeded {self.max_ticks} ticks")
        self.stats.ticks = self.tick
        self.check_final_balance()
        return self.results()


# -- threaded engine --------------------------------------------------------

_SENTINEL = ("stop",)


class _Worker(threading.Thread):
    def __init__(self, engine: "_ThreadedEngine", key):
        super().__init__(daemon=True)
        self.engine = engine
        self.key = key
        self.inbox: queue.SimpleQueue = queue.SimpleQueue()
        self.owned: list[int] = []

    def _send(self, msg):
        self.engine.route(msg)

    def fire_loop(self):
        eng = self.engine
        changed = True
        while changed:
            changed = False
            for aid in self.owned:
                art = eng.actors[aid]
                while eng.eligible(art):
                    batch, claimed = eng.begin_fire(art)
                    eng.complete_fire(art, batch, claimed, self._send)
                    with eng.progress_lock:
                        eng.remaining -= 1
                        if eng.remaining == 0:
                            eng.done_event.set()
                    changed = True

    def run(self):
        try:
            self.fire_loop()
            while True:
                msg = self.inbox.get()
                if msg[0] == "stop":
                    while True:
                        try:
                            extra = self.inbox.get_nowait()
                        except queue.Empty:
                            break
                        if extra[0] != "stop":
                            self.engine.handle(
                                self.engine.actors[extra[1]], extra, self._send
                            )
                    return
                self.engine.handle(self.engine.actors[msg[1]], msg, self._send)
                self.fire_loop()
        except BaseException as e:  # surfaced by the main thread
            self.engine.errors.append(e)
            self.engine.done_event.set()


class _ThreadedEngine(_EngineBase):
    def __init__(self, plan, feeds, n_batches, watchdog=10.0, **kw):
        super().__init__(plan, feeds, n_batches, **kw)
        if self.quota_free:
            raise ValueError("quota-free mode is deterministic-engine only")
        self.watchdog = watchdog
        self.workers: dict[tuple[int, int], _Worker] = {}
        self.owner: dict[int, _Worker] = {}
        for aid, spec in plan.actors.items():
            key = (spec.node, spec.thread)
            w = self.workers.get(key)
            if w is None:
                w = _Worker(self, key)
                self.workers[key] = w
            w.owned.append(aid)
            self.owner[aid] = w
        for w in self.workers.values():
            w.owned.sort()
        self.remaining = n_batches * len(plan.actors)
        self.progress_lock = threading.Lock()
        self.done_event = threading.Event()
        self.errors: list[BaseException] = []

    def route(self, msg):
        self.stats.messages += 1
        dst_worker = self.owner[msg[1]]
        cur = threading.current_thread()
        if dst_worker is cur:
            # same hardware queue: handle inline without a queue hop
            self.handle(self.actors[msg[1]], msg, dst_worker._send)
            return
        dst_worker.inbox.put(msg)

    def run(self) -> RunResult:
        for w in self.workers.values():
            w.start()
        deadline_progress = self.remaining
        waited = 0.0
        step = 0.05
        while not self.done_event.wait(step):
            waited += step
            with self.progress_lock:
                cur = self.remaining
            if cur != deadline_progress:
                deadline_progress = cur
                waited = 0.0
            elif waited >= self.watchdog:
                wait = self.wait_graph()
                for w in self.workers.values():
                    w.inbox.put(_SENTINEL)
                raise DeadlockError("threaded run stalled (watchdog)", wait)
        # every ack was enqueued before the final action's count reached
        # zero, so each sits ahead of the sentinel in its FIFO inbox
        for w in self.workers.values():
            w.inbox.put(_SENTINEL)
        for w in self.workers.values():
            w.join(timeout=self.watchdog)
        if self.errors:
            raise self.errors[0]
        self.check_final_balance()
        self.stats.actions = self.n_batches * len(self.actors)
        return self.results()


def run_plan(
    plan: PhysicalPlan,
    feeds=None,
    n_batches: int = 1,
    mode: str = "deterministic",
    latency: int = 1,
    check_invariants: bool = False,
    quota_free: bool = False,
    caps: dict | None = None,
    watchdog: float = 10.0,
    trace_path=None,
) -> RunResult:
    """Execute `n_batches` through the plan and reconstruct sink outputs.

    Deterministic mode advances a global tick, firing eligible actors in
    actor-id order, and detects deadlock when nothing can progress; threaded
    mode runs one worker per hardware queue with a watchdog. Outputs are
    identical between modes.
    """
    if mode == "deterministic":
        engine: _EngineBase = _DeterministicEngine(
            plan,
            feeds,
            n_batches,
            latency=latency,
            check_invariants=check_invariants,
            quota_free=quota_free,
            caps=caps,
        )
    elif mode == "threaded":
        engine = _ThreadedEngine(
            plan, feeds, n_batches, watchdog=watchdog, check_invariants=check_invariants
        )
    else:
        raise ValueError(f"unknown mode {mode!r}")
    result = engine.run()
    if trace_path is not None:
        with open(trace_path, "w") as f:
            for tick, aid, event, batch in result.trace:
                f.write(f"{tick}\t{fmt_actor_id(aid)}\t{event}\t{batch}\n")
    return result
