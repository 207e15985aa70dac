"""Multithreaded execution harness for all systems.

Drives a workload's thread programs over a shared heap with the selected
concurrency control, handles retries and explicit aborts, records a commit
log, and enforces liveness with a watchdog.  Thread lifecycle follows the
ordering model: the harness registers the main thread as the tree root,
registers each top-level program as a child entering round one, and the main
thread immediately consumes its stop slot, so the root is invisible to the
application but accounted for in the order.

The commit log has one record per application transaction plus one per stop
slot.  Records carry (sn, thread, label, mode, attempts, wait_cycles); the
application-visible label sequence (stop slots excluded) together with the
final cells forms the run digest.
"""
from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field
from hashlib import blake2b
from typing import NamedTuple, Optional, Sequence

from .digest import state_digest
from .errors import ExplicitAbort, HangError, RunCancelled, TxnAbort
from .heap import StripeMap, VersionedHeap
from .pogl import PoglTxn
from .pot import FastMonitor, OrderGate, PotConfig, PotTxn
from .sequencer import (ReplaySequencer, RoundRobinSequencer, STOP)
from .tl2 import Tl2Txn
from .workloads import ThreadProgram, Workload

SYSTEMS = ("tl2", "pot", "pot-minus", "pot-star", "pogl")
ORDERED_SYSTEMS = ("pot", "pot-minus", "pot-star", "pogl")


class CommitRecord(NamedTuple):
    sn: int
    thread: str
    label: str
    mode: str
    attempts: int
    wait_cycles: int


@dataclass
class RunStats:
    commits: int = 0
    no_retry_commits: int = 0
    aborts: dict = field(default_factory=dict)
    attempts_total: int = 0
    wait_polls_total: int = 0
    wait_polls_max: int = 0
    promotions: int = 0
    max_concurrent_fast: int = 0
    threads: int = 0

    @property
    def aborts_total(self) -> int:
        return sum(self.aborts.values())


@dataclass
class RunResult:
    system: str
    workload: str
    records: list[CommitRecord]
    app_labels: list[str]
    final_cells: list[int]
    digest: str
    trace: Optional[list[int]]
    violations: list
    stats: RunStats
    wall_seconds: float

    def visible_order(self) -> list[tuple[str, str]]:
        return [(r.thread, r.label) for r in self.records if r.mode != "stop"]


def run_ops(txn, ops: tuple, n_cells: int, violations: list) -> None:
    """Execute one transaction body against any txn-like object."""
    for op in ops:
        kind = op[0]
        if kind == "r":
            txn.read(op[1])
        elif kind == "w":
            txn.write(op[1], op[2])
        elif kind == "inc":
            i = op[1]
            txn.write(i, txn.read(i) + op[2])
        elif kind == "xfer":
            s, d, amount = op[1], op[2], op[3]
            txn.write(s, txn.read(s) - amount)
            txn.write(d, txn.read(d) + amount)
        elif kind == "audit":
            rd = txn.read
            total = 0
            for i in range(n_cells):
                total += rd(i)
            if total != op[1]:
                violations.append((txn.label, op[1], total))
        elif kind == "abort":
            raise ExplicitAbort(op[1])
        else:
            raise ValueError(f"unknown op {kind!r}")


class JitterInjector:
    """Seeded random delays at scheduling-sensitive points (tests only)."""

    __slots__ = ("_rng", "probability", "max_delay")

    def __init__(self, seed: int, probability: float = 0.2,
                 max_delay: float = 0.0002):
        self._rng = random.Random(seed)
        self.probability = probability
        self.max_delay = max_delay

    @staticmethod
    def fork(seed: int, label: str, probability: float,
             max_delay: float) -> "JitterInjector":
        h = blake2b(f"jitter/{seed}/{label}".encode(), digest_size=8)
        return JitterInjector(int.from_bytes(h.digest(), "big"),
                              probability, max_delay)

    def maybe_delay(self) -> None:
        rng = self._rng
        if rng.random() < self.probability:
            time.sleep(rng.random() * self.max_delay)


class _RunContext:
    def __init__(self, workload: Workload, heap: VersionedHeap, seq, gate,
                 monitor, cfg, hang_timeout: float,
                 jitter_seed: Optional[int], jitter_probability: float,
                 jitter_max_delay: float, runner):
        self.workload = workload
        self.heap = heap
        self.seq = seq
        self.gate = gate
        self.monitor = monitor
        self.cfg = cfg
        self.n_cells = workload.n_cells
        self.log: list[tuple] = []
        self.violations: list = []
        self.cancel_event = threading.Event()
        self.cancelled = False
        self.threads: list[threading.Thread] = []
        self.failures: list[BaseException] = []
        self.deadline = time.monotonic() + hang_timeout
        self._lock = threading.Lock()
        self.stats = RunStats()
        self._jitter_seed = jitter_seed
        self._jitter_probability = jitter_probability
        self._jitter_max_delay = jitter_max_delay
        self._runner = runner

    def jitter_for(self, label: str) -> Optional[JitterInjector]:
        if self._jitter_seed is None:
            return None
        return JitterInjector.fork(self._jitter_seed, label,
                                   self._jitter_probability,
                                   self._jitter_max_delay)

    def launch(self, node, prog: ThreadProgram) -> None:
        if self.cancelled:
            return
        t = threading.Thread(target=self._entry, args=(node, prog),
                             name=prog.label, daemon=True)
        with self._lock:
            self.threads.append(t)
        t.start()

    def _entry(self, node, prog: ThreadProgram) -> None:
        try:
            self._runner(self, node, prog)
        except BaseException as exc:  # noqa: BLE001 - propagated to the run
            with self._lock:
                self.failures.append(exc)
            self.cancel()

    def cancel(self) -> None:
        self.cancelled = True
        self.cancel_event.set()

    def merge_stats(self, commits: int, no_retry: int, aborts: dict,
                    attempts: int, polls_total: int, polls_max: int) -> None:
        with self._lock:
            st = self.stats
            st.commits += commits
            st.no_retry_commits += no_retry
            for kind, n in aborts.items():
                st.aborts[kind] = st.aborts.get(kind, 0) + n
            st.attempts_total += attempts
            st.wait_polls_total += polls_total
            if polls_max > st.wait_polls_max:
                st.wait_polls_max = polls_max


# -- per-system thread runners -------------------------------------------------


def _pot_thread(ctx: _RunContext, node, prog: ThreadProgram) -> None:
    seq = ctx.seq
    gate = ctx.gate
    txn = PotTxn(ctx.heap, gate, seq, node, ctx.cfg, ctx.monitor)
    jit = ctx.jitter_for(prog.label)
    log = ctx.log
    violations = ctx.violations
    n_cells = ctx.n_cells
    thread_label = prog.label
    commits = 0
    no_retry = 0
    aborts: dict[str, int] = {}
    attempts_total = 0
    polls_total = 0
    polls_max = 0

    for plan in prog.plans:
        if ctx.cancelled:
            raise RunCancelled(thread_label)
        ops = plan.ops
        children = None
        if plan.spawns:
            labels = [p.label for p in plan.spawns]
            sn, children = seq.get_seq_no_spawning(node, plan.label, labels)
            txn.start_with(plan.label, sn)
        else:
            txn.start(plan.label)
        attempts = 1
        polls = 0
        mode = "speculative"
        while True:
            if jit is not None:
                jit.maybe_delay()
            try:
                run_ops(txn, ops, n_cells, violations)
                w = txn.commit(jit)
            except ExplicitAbort as ab:
                if ab.retry:
                    aborts["explicit-retry"] = aborts.get("explicit-retry", 0) + 1
                    txn.rollback_to_retry()
                    attempts += 1
                    txn.begin()
                    continue
                was_fast = txn.mode
                done, w = txn.finish_no_retry(jit)
                polls += w
                if not done:
                    aborts["validate"] = aborts.get("validate", 0) + 1
                    attempts += 1
                    txn.begin()
                    continue
                mode = ("fast-nr" if was_fast else "speculative-nr")
                no_retry += 1
                break
            except TxnAbort as exc:
                aborts[exc.kind] = aborts.get(exc.kind, 0) + 1
                txn.rollback_to_retry()
                attempts += 1
                txn.begin()
                continue
            polls += w
            mode = "fast" if txn.mode else "speculative"
            break
        commits += 1
        attempts_total += attempts
        polls_total += polls
        if polls > polls_max:
            polls_max = polls
        log.append((txn.wv, thread_label, plan.label, mode, attempts, polls))
        if children is not None:
            for child_node, child_prog in zip(children, plan.spawns):
                ctx.launch(child_node, child_prog)

    sn = seq.stop(node)
    if sn is not None:
        w = gate.wait_for_turn(sn, jit) if ctx.cfg.gate_enabled else 0
        gate.advance(sn)
        log.append((sn, thread_label, STOP, "stop", 1, w))
    ctx.merge_stats(commits, no_retry, aborts, attempts_total,
                    polls_total, polls_max)


def _pogl_thread(ctx: _RunContext, node, prog: ThreadProgram) -> None:
    seq = ctx.seq
    gate = ctx.gate
    txn = PoglTxn(ctx.heap, gate, seq, node, ctx.cfg.gate_enabled)
    jit = ctx.jitter_for(prog.label)
    log = ctx.log
    violations = ctx.violations
    n_cells = ctx.n_cells
    thread_label = prog.label
    commits = 0
    no_retry = 0
    aborts: dict[str, int] = {}
    attempts_total = 0
    polls_total = 0
    polls_max = 0

    for plan in prog.plans:
        if ctx.cancelled:
            raise RunCancelled(thread_label)
        children = None
        txn.reset(plan.label)
        if plan.spawns:
            labels = [p.label for p in plan.spawns]
            sn, children = seq.get_seq_no_spawning(node, plan.label, labels)
            txn.wv = sn
        attempts = 0
        polls = 0
        mode = "pogl"
        while True:
            attempts += 1
            polls += txn.begin(jit)
            try:
                run_ops(txn, plan.ops, n_cells, violations)
            except ExplicitAbort as ab:
                if ab.retry:
                    aborts["explicit-retry"] = aborts.get("explicit-retry", 0) + 1
                    txn.rollback_to_retry()
                    continue
                txn.finish_no_retry()
                mode = "pogl-nr"
                no_retry += 1
                break
            txn.commit()
            break
        commits += 1
        attempts_total += attempts
        polls_total += polls
        if polls > polls_max:
            polls_max = polls
        log.append((txn.wv, thread_label, plan.label, mode, attempts, polls))
        if children is not None:
            for child_node, child_prog in zip(children, plan.spawns):
                ctx.launch(child_node, child_prog)

    sn = seq.stop(node)
    if sn is not None:
        w = gate.wait_for_turn(sn, jit) if ctx.cfg.gate_enabled else 0
        gate.advance(sn)
        log.append((sn, thread_label, STOP, "stop", 1, w))
    ctx.merge_stats(commits, no_retry, aborts, attempts_total,
                    polls_total, polls_max)


def _tl2_thread(ctx: _RunContext, node, prog: ThreadProgram) -> None:
    txn = Tl2Txn(ctx.heap)
    log = ctx.log
    violations = ctx.violations
    n_cells = ctx.n_cells
    thread_label = prog.label
    commits = 0
    no_retry = 0
    aborts: dict[str, int] = {}
    attempts_total = 0

    for plan in prog.plans:
        if ctx.cancelled:
            raise RunCancelled(thread_label)
        ops = plan.ops
        txn.start(plan.label)
        attempts = 1
        while True:
            try:
                run_ops(txn, ops, n_cells, violations)
                sn = txn.commit()
            except ExplicitAbort as ab:
                if ab.retry:
                    aborts["explicit-retry"] = aborts.get("explicit-retry", 0) + 1
                    time.sleep(0)
                    attempts += 1
                    txn.begin()
                    continue
                sn = txn.rv
                mode = "tl2-nr"
                no_retry += 1
                break
            except TxnAbort as exc:
                aborts[exc.kind] = aborts.get(exc.kind, 0) + 1
                time.sleep(0)
                attempts += 1
                txn.begin()
                continue
            mode = "tl2-ro" if txn.is_read_only else "tl2"
            break
        commits += 1
        attempts_total += attempts
        log.append((sn, thread_label, plan.label, mode, attempts, 0))
        if plan.spawns:
            for child_prog in plan.spawns:
                ctx.launch(None, child_prog)

    ctx.merge_stats(commits, no_retry, aborts, attempts_total, 0, 0)


# -- top-level driver ------------------------------------------------------------


def run_workload(system: str, workload: Workload, *,
                 spin_budget: int = 1000,
                 hang_timeout: float = 30.0,
                 jitter_seed: Optional[int] = None,
                 jitter_probability: float = 0.2,
                 jitter_max_delay: float = 0.0002,
                 record_trace: bool = False,
                 replay_order: Optional[Sequence[tuple[str, str]]] = None,
                 gate_enabled: bool = True,
                 stripe_map: Optional[StripeMap] = None) -> RunResult:
    if system not in SYSTEMS:
        raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    if replay_order is not None and system == "tl2":
        raise ValueError("replay requires an ordered system")

    heap = VersionedHeap(workload.n_cells, stripe_map,
                         list(workload.initial_cells))
    t0 = time.perf_counter()

    if system == "tl2":
        ctx = _RunContext(workload, heap, None, None, None, None, hang_timeout,
                          jitter_seed, jitter_probability, jitter_max_delay,
                          _tl2_thread)
        for prog in workload.programs:
            ctx.launch(None, prog)
        _join_all(ctx)
        trace = None
    else:
        if replay_order is not None:
            seq = ReplaySequencer(replay_order)
        else:
            seq = RoundRobinSequencer()
        gate = OrderGate(heap, spin_budget, record_trace)
        monitor = FastMonitor()
        if system == "pogl":
            cfg = PotConfig(False, False, gate_enabled)
            runner = _pogl_thread
        else:
            cfg = PotConfig.for_system(system)
            cfg.gate_enabled = gate_enabled
            runner = _pot_thread
        ctx = _RunContext(workload, heap, seq, gate, monitor, cfg, hang_timeout,
                          jitter_seed, jitter_probability, jitter_max_delay,
                          runner)
        gate.cancel_event = ctx.cancel_event
        gate.deadline = ctx.deadline
        gate.describe_owner = seq.describe_slot
        seq.cancel_event = ctx.cancel_event
        seq.deadline = ctx.deadline

        root = seq.register_main("main")
        nodes = [seq.spawn(root, prog.label) for prog in workload.programs]
        for node, prog in zip(nodes, workload.programs):
            ctx.launch(node, prog)
        try:
            sn = seq.stop(root)
            if sn is not None and gate_enabled:
                w = gate.wait_for_turn(sn)
                gate.advance(sn)
                ctx.log.append((sn, "main", STOP, "stop", 1, w))
            elif sn is not None:
                gate.advance(sn)
                ctx.log.append((sn, "main", STOP, "stop", 1, 0))
        except BaseException as exc:
            ctx.cancel()
            _join_all(ctx, best_effort=True)
            if isinstance(exc, RunCancelled) and ctx.failures:
                raise _pick_failure(ctx) from exc
            raise
        _join_all(ctx)
        trace = gate.trace

    wall = time.perf_counter() - t0

    records = [CommitRecord(*row) for row in sorted(ctx.log, key=lambda r: r[0])]
    app_labels = [r.label for r in records if r.mode != "stop"]
    final_cells = heap.snapshot_cells()
    stats = ctx.stats
    stats.threads = len(ctx.threads)
    if ctx.monitor is not None:
        stats.promotions = ctx.monitor.entries
        stats.max_concurrent_fast = ctx.monitor.max_active
    return RunResult(
        system=system,
        workload=workload.name,
        records=records,
        app_labels=app_labels,
        final_cells=final_cells,
        digest=state_digest(final_cells, app_labels),
        trace=trace,
        violations=ctx.violations,
        stats=stats,
        wall_seconds=wall,
    )


def _join_all(ctx: _RunContext, best_effort: bool = False) -> None:
    deadline = ctx.deadline + (5.0 if best_effort else 0.0)
    while True:
        with ctx._lock:
            threads = list(ctx.threads)
        pending = [t for t in threads if t.is_alive()]
        if not pending:
            with ctx._lock:
                grown = len(ctx.threads) > len(threads)
            if not grown:
                break
            continue
        for t in pending:
            remaining = deadline - time.monotonic()
            if remaining > 0:
                # chunked so the deadline is re-checked even if t never exits
                t.join(timeout=min(remaining, 0.5))
            if t.is_alive() and time.monotonic() > deadline:
                if best_effort:
                    return
                ctx.cancel()
                for other in pending:
                    other.join(timeout=2.0)
                raise _compose_hang(ctx)
    if not best_effort and ctx.failures:
        raise _pick_failure(ctx)


def _pick_failure(ctx: _RunContext) -> BaseException:
    hangs = [e for e in ctx.failures if isinstance(e, HangError)]
    if hangs:
        return hangs[0]
    real = [e for e in ctx.failures if not isinstance(e, RunCancelled)]
    if real:
        return real[0]
    return ctx.failures[0]


def _compose_hang(ctx: _RunContext) -> HangError:
    gv = ctx.heap.gv
    missing = gv + 1
    owner = None
    first_failure = None
    if ctx.seq is not None:
        try:
            owner = ctx.seq.describe_slot(missing)
        except Exception:
            owner = None
        first_failure = getattr(ctx.seq, "first_failure", None)
    msg = (f"run exceeded its deadline: global version stuck at {gv}; "
           f"slot {missing} never committed")
    if owner:
        msg += f" (it belongs to {owner})"
    if first_failure:
        msg += (f"; first sequencing failure: thread "
                f"{first_failure.get('thread')!r} transaction "
                f"{first_failure.get('label')!r} ({first_failure.get('kind')})")
    return HangError(msg, {"gv": gv, "missing_sn": missing, "owner": owner,
                           "first_failure": first_failure})


def verify_commit_order(result: RunResult) -> list[str]:
    """Check the ordered-commit contract on a run of an ordered system.

    Returns a list of problems (empty = clean): the advance trace must be
    exactly 1..K with no gaps, repeats, or reordering, and the sorted record
    sequence numbers must match it.
    """
    problems: list[str] = []
    trace = result.trace
    if trace is None:
        problems.append("no advance trace was recorded")
        return problems
    for idx, gv in enumerate(trace):
        if gv != idx + 1:
            problems.append(
                f"advance #{idx + 1} set the global version to {gv}")
            break
    sns = [r.sn for r in result.records]
    if sns != sorted(sns):
        problems.append("commit log is not sorted by sequence number")
    if sns != list(range(1, len(trace) + 1)):
        problems.append(
            f"commit log covers {len(sns)} slots but the trace advanced "
            f"{len(trace)} times" if len(sns) != len(trace)
            else "commit log sequence numbers are not exactly 1..K")
    return problems
