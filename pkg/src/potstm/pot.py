"""Preordered STM: commits happen in sequencer order through a global gate.

Every transaction owns a sequence number wv before it runs.  The gate admits
commit wv only once the global version equals wv - 1, and each commit
advances the global version to its own number, so the committed history is
exactly 1, 2, 3, ... in sequencer order.

Two execution modes:

* speculative: reads validate against a begin-time snapshot (no lock test is
  needed; nothing ever locks stripes here), writes are buffered, and commit
  waits for the gate, re-validates the read set, then publishes.
* fast: the transaction at the head of the order (global version == wv - 1)
  cannot be invalidated by anyone, so it reads and writes the heap directly,
  keeping an undo log only for explicit aborts.  At most one transaction can
  be fast at a time, by construction.

A speculative transaction promotes to fast the moment it observes the gate
open: pending writes are written back (after validating reads so far) and
execution continues in place.  A failed promotion or failed commit validation
retries the body; the retry begins with the gate open and an empty read set,
so it promotes immediately and is guaranteed to finish.

Explicit aborts: with retry the effects are undone and the body reruns under
the same sequence number; without retry the slot commits as a no-op (a
speculative no-retry abort must still reach the gate and validate its reads,
because an inconsistent read may be what triggered the abort - if validation
fails, the body reruns).
"""
from __future__ import annotations

import threading
import time
from typing import Callable, Optional

from .errors import HangError, RunCancelled, TxnAbort
from .heap import VersionedHeap
from .sequencer import RoundRobinSequencer

SPECULATIVE = 0
FAST = 1


class PotConfig:
    """Promotion policy knobs (the ablation axis) plus test hooks."""

    __slots__ = ("promote_at_begin", "promote_on_access", "gate_enabled")

    def __init__(self, promote_at_begin: bool = True,
                 promote_on_access: bool = True, gate_enabled: bool = True):
        self.promote_at_begin = promote_at_begin
        self.promote_on_access = promote_on_access
        self.gate_enabled = gate_enabled

    @staticmethod
    def for_system(system: str) -> "PotConfig":
        if system == "pot":
            return PotConfig(True, True)
        if system == "pot-star":
            return PotConfig(True, False)
        if system == "pot-minus":
            return PotConfig(False, False)
        raise ValueError(f"unknown promotion policy {system!r}")


class FastMonitor:
    """Tracks concurrent fast-mode occupancy.

    Entries and exits are serialized by the protocol itself (only the head of
    the order runs fast), so plain counters suffice while the invariant
    holds; ``max_active`` over 1 is the signal that it did not.
    """

    __slots__ = ("active", "max_active", "entries")

    def __init__(self):
        self.active = 0
        self.max_active = 0
        self.entries = 0

    def enter(self) -> None:
        n = self.active + 1
        self.active = n
        self.entries += 1
        if n > self.max_active:
            self.max_active = n

    def exit(self) -> None:
        self.active -= 1


class OrderGate:
    """Admits commits strictly in sequence-number order.

    Waiters spin for a configurable budget, then park on a per-number event.
    ``advance`` publishes the new global version and wakes the single thread
    waiting for the next slot, if any.  ``wait_cycles`` reported by waits are
    poll counts (spins plus wakeups), a scheduling-insensitive measure of how
    long the turn took to arrive.
    """

    __slots__ = ("heap", "spin_budget", "trace", "cancel_event", "deadline",
                 "describe_owner", "_lock", "_events", "poll_interval")

    def __init__(self, heap: VersionedHeap, spin_budget: int = 1000,
                 record_trace: bool = False):
        self.heap = heap
        self.spin_budget = spin_budget
        self.trace: Optional[list[int]] = [] if record_trace else None
        self.cancel_event: Optional[threading.Event] = None
        self.deadline: Optional[float] = None
        self.describe_owner: Optional[Callable[[int], Optional[str]]] = None
        self._lock = threading.Lock()
        self._events: dict[int, threading.Event] = {}
        self.poll_interval = 0.05

    def wait_for_turn(self, wv: int, jitter=None) -> int:
        heap = self.heap
        target = wv - 1
        if heap.gv == target:
            return 0
        if jitter is not None:
            jitter.maybe_delay()
        polls = 0
        budget = self.spin_budget
        while polls < budget:
            if heap.gv == target:
                return polls
            polls += 1
        ev = threading.Event()
        with self._lock:
            self._events[wv] = ev
        try:
            while True:
                if heap.gv == target:
                    return polls
                ce = self.cancel_event
                if ce is not None and ce.is_set():
                    raise RunCancelled(f"cancelled waiting for slot {wv}")
                if self.deadline is not None and time.monotonic() > self.deadline:
                    raise HangError(*self._hang_info(wv))
                ev.wait(self.poll_interval)
                ev.clear()
                polls += 1
        finally:
            with self._lock:
                self._events.pop(wv, None)

    def advance(self, wv: int) -> None:
        self.heap.gv = wv
        t = self.trace
        if t is not None:
            t.append(wv)
        if self._events:
            with self._lock:
                ev = self._events.pop(wv + 1, None)
            if ev is not None:
                ev.set()

    def _hang_info(self, wv: int) -> tuple[str, dict]:
        gv = self.heap.gv
        owner = None
        if self.describe_owner is not None:
            owner = self.describe_owner(gv + 1)
        msg = (f"no progress: global version stuck at {gv} while waiting to "
               f"commit slot {wv}; slot {gv + 1} never committed")
        if owner:
            msg += f" (it belongs to {owner})"
        return msg, {"gv": gv, "waiting_for": wv, "missing_sn": gv + 1,
                     "owner": owner}


class PotTxn:
    __slots__ = ("_heap", "_meta", "_cells", "_smap", "_n", "_gate", "_seq",
                 "_plain_seq", "_node", "_monitor", "_promote_at_begin",
                 "_promote_on_access", "_gate_enabled", "label", "wv", "rv",
                 "mode", "_reads", "_rappend", "_writes", "_undo")

    def __init__(self, heap: VersionedHeap, gate: OrderGate, seq, node,
                 cfg: PotConfig, monitor: FastMonitor):
        self._heap = heap
        self._meta = heap.meta
        self._cells = heap.cells
        self._n = len(heap.cells)
        sm = heap.stripe_map
        self._smap = None if sm.identity else sm.stripe_of
        self._gate = gate
        self._seq = seq
        self._plain_seq = isinstance(seq, RoundRobinSequencer)
        self._node = node
        self._monitor = monitor
        self._promote_at_begin = cfg.promote_at_begin
        self._promote_on_access = cfg.promote_on_access
        self._gate_enabled = cfg.gate_enabled
        self.label = ""
        self.wv = 0
        self.rv = 0
        self.mode = SPECULATIVE
        self._reads: list[int] = []
        self._rappend = self._reads.append
        self._writes: dict[int, int] = {}
        self._undo: Optional[list[tuple[int, int, int]]] = None

    def start(self, label: str) -> None:
        """Begin a new transaction: draw its sequence number and run the
        first attempt.  This is the per-transaction hot path, so the
        begin-time promotion check and the fast-entry bookkeeping are spelled
        out inline rather than routed through ``begin``."""
        self.label = label
        node = self._node
        seq = self._seq
        # Sole-live-thread shortcut: consecutive slots, no barrier to check
        # and nobody to wake.  Only this thread can change the live set while
        # it is alone, so the unlocked reads are safe.
        if (self._plain_seq and node.cached_epoch == seq._epoch
                and len(seq._live) == 1):
            wv = node.next_sn
            node.next_sn = wv + node.stride
            node.requested += 1
            node.frontier += 1
        else:
            wv = seq.get_seq_no(node, label)
        self.wv = wv
        gv = self._heap.gv
        self.rv = gv
        if self._promote_at_begin and gv == wv - 1:
            self.mode = FAST
            self._undo = None
            mon = self._monitor
            n = mon.active + 1
            mon.active = n
            mon.entries += 1
            if n > mon.max_active:
                mon.max_active = n
            return
        self.mode = SPECULATIVE
        reads: list[int] = []
        self._reads = reads
        self._rappend = reads.append
        self._writes = {}

    def start_with(self, label: str, sn: int) -> None:
        """Begin a new transaction whose slot was already assigned (used when
        the same slot also registers spawned threads)."""
        self.label = label
        self.wv = sn
        self.begin()

    def begin(self) -> None:
        """Enter the next attempt of the current transaction (retry path)."""
        gv = self._heap.gv
        self.rv = gv
        if self._promote_at_begin and gv == self.wv - 1:
            self.mode = FAST
            self._undo = None
            self._monitor.enter()
            return
        self.mode = SPECULATIVE
        reads: list[int] = []
        self._reads = reads
        self._rappend = reads.append
        self._writes = {}

    # -- body operations -----------------------------------------------------

    def read(self, i: int) -> int:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        if self.mode:
            return self._cells[i]
        if self._promote_on_access and self._heap.gv == self.wv - 1:
            self._promote()
            return self._cells[i]
        W = self._writes
        if W and i in W:
            return W[i]
        meta = self._meta
        smap = self._smap
        if smap is None:
            v1 = meta[i]
            value = self._cells[i]
            if meta[i] == v1 and v1 <= self.rv:
                self._rappend(i)
                return value
        else:
            s = smap(i)
            v1 = meta[s]
            value = self._cells[i]
            if meta[s] == v1 and v1 <= self.rv:
                self._rappend(s)
                return value
        raise TxnAbort("read")

    def write(self, i: int, value: int) -> None:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        if self.mode:
            # Build the undo entry before touching anything: a bad index
            # raises on the reads and leaves the heap unchanged.
            meta = self._meta
            cells = self._cells
            smap = self._smap
            s = i if smap is None else smap(i)
            entry = (i, meta[s], cells[i])
            u = self._undo
            if u is None:
                self._undo = [entry]
            else:
                u.append(entry)
            meta[s] = self.wv
            cells[i] = value
            return
        if self._promote_on_access and self._heap.gv == self.wv - 1:
            self._promote()
            self.write(i, value)
            return
        if i >= self._n:
            raise IndexError(f"cell index {i} out of range")
        self._writes[i] = value

    def _promote(self) -> None:
        """Switch a speculative attempt to fast, in place.

        Only called with the gate open (global version == wv - 1): nothing
        can invalidate us afterwards.  Reads so far must still be validated;
        buffered writes become direct ones.  The speculative buffers are left
        behind; fast mode never looks at them and the next attempt or
        transaction reallocates.
        """
        meta = self._meta
        rv = self.rv
        for s in self._reads:
            if meta[s] > rv:
                raise TxnAbort("promote")
        W = self._writes
        if W:
            undo = self._undo = []
            wv = self.wv
            cells = self._cells
            smap = self._smap
            if smap is None:
                for i, value in W.items():
                    undo.append((i, meta[i], cells[i]))
                    meta[i] = wv
                    cells[i] = value
            else:
                for i, value in W.items():
                    s = smap(i)
                    undo.append((i, meta[s], cells[i]))
                    meta[s] = wv
                    cells[i] = value
        else:
            self._undo = None
        self.mode = FAST
        self._monitor.enter()

    # -- outcomes ------------------------------------------------------------

    def commit(self, jitter=None) -> int:
        """Publish at this transaction's slot.  Returns wait poll count."""
        gate = self._gate
        wv = self.wv
        if self.mode:
            # gate.advance and monitor.exit unrolled; this is the fast-mode
            # per-transaction hot path.  The monitor decrement must precede
            # the version advance: the successor may promote the instant gv
            # moves, and the overlap would read as two concurrent fast
            # transactions.
            self._monitor.active -= 1
            self._heap.gv = wv
            t = gate.trace
            if t is not None:
                t.append(wv)
            if gate._events:
                with gate._lock:
                    ev = gate._events.pop(wv + 1, None)
                if ev is not None:
                    ev.set()
            return 0
        polls = gate.wait_for_turn(wv, jitter) if self._gate_enabled else 0
        meta = self._meta
        rv = self.rv
        for s in self._reads:
            if meta[s] > rv:
                raise TxnAbort("validate")
        cells = self._cells
        smap = self._smap
        if smap is None:
            for i, value in self._writes.items():
                meta[i] = wv
                cells[i] = value
        else:
            for i, value in self._writes.items():
                s = smap(i)
                meta[s] = wv
                cells[i] = value
        gate.advance(wv)
        return polls

    def rollback_to_retry(self) -> None:
        """Discard the current attempt; the sequence number is kept."""
        if self.mode:
            self._rollback_undo()
            self._monitor.exit()
            self.mode = SPECULATIVE

    def finish_no_retry(self, jitter=None) -> tuple[bool, int]:
        """Commit the slot as a no-op after an explicit no-retry abort.

        Returns (done, polls).  done=False means the speculative read set
        failed validation at the gate: the abort decision itself may have
        been based on inconsistent reads, so the caller must rerun the body
        (which will promote and settle the outcome for good).
        """
        gate = self._gate
        wv = self.wv
        if self.mode:
            self._rollback_undo()
            self._monitor.exit()  # before the advance; see commit()
            gate.advance(wv)
            self.mode = SPECULATIVE
            return True, 0
        polls = gate.wait_for_turn(wv, jitter) if self._gate_enabled else 0
        meta = self._meta
        rv = self.rv
        for s in self._reads:
            if meta[s] > rv:
                return False, polls
        gate.advance(wv)
        return True, polls

    def _rollback_undo(self) -> None:
        """Undo direct writes: newest first, value before version word."""
        u = self._undo
        if u:
            cells = self._cells
            meta = self._meta
            smap = self._smap
            for i, old_version, old_value in reversed(u):
                s = i if smap is None else smap(i)
                cells[i] = old_value
                meta[s] = old_version
        self._undo = None
