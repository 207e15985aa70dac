"""Sequence-number assignment for preordered transaction execution.

The ordering model: threads form a tree (a thread's children are the threads
it started, in creation order).  Commit slots are handed out in rounds; within
a round, every live thread gets exactly one slot, in post-order of the thread
tree (children before their parent).  Thread lifecycle is part of the order:

* a thread started by transaction number c enters the round after c's round,
* a thread's termination consumes one final slot (its "stop" slot), which is
  invisible to the application but still advances the global order.

``RoundRobinSequencer`` implements this online.  A slot's number is a pure
function of the tree's lifecycle history, so assignment does not depend on
which thread happens to call first; to make that safe, a request for a slot
in round r blocks until every slot of rounds < r has been requested (the
"request barrier").  Requests inside one round never wait on each other, and
since a thread only requests slot k+1 after slot k's transaction finished,
the barrier cannot deadlock.

``ReplaySequencer`` assigns numbers from a recorded (thread, label) list
instead, and reports divergence or exhaustion for hang diagnosis.

``enumerate_schedule`` is the offline mirror of the round-robin rules, used
by the serial oracle.
"""
from __future__ import annotations

import threading
import time
from typing import Iterable, Optional, Sequence

from .errors import HangError, RunCancelled

STOP = "<stop>"


class ThreadHandle:
    """Per-thread sequencer state. Owned by one OS thread after start."""

    __slots__ = ("label", "parent", "children", "entered_round", "stop_round",
                 "requested", "frontier", "cached_epoch", "next_sn", "stride")

    def __init__(self, label: str, parent: Optional["ThreadHandle"]):
        self.label = label
        self.parent = parent
        self.children: list[ThreadHandle] = []
        self.entered_round = 0
        self.stop_round: Optional[int] = None
        self.requested = 0          # slots this thread has requested so far
        self.frontier = 0           # round of the next request (= entered + requested)
        self.cached_epoch = -1      # fast-path cache validity
        self.next_sn = 0
        self.stride = 0

    def __repr__(self):
        return f"<thread {self.label!r} r{self.entered_round}+{self.requested}>"


class _Segment:
    """Slot layout for a run of rounds with stable membership.

    Covers rounds [start_round, end_round] (end None = open-ended).  Round r
    holds len(members) slots starting at
    start_sn + (r - start_round) * len(members), filled in post-order.
    """

    __slots__ = ("start_round", "end_round", "start_sn", "members", "pos")

    def __init__(self, start_round: int, start_sn: int,
                 members: tuple[ThreadHandle, ...]):
        self.start_round = start_round
        self.end_round: Optional[int] = None
        self.start_sn = start_sn
        self.members = members
        self.pos = {node: i for i, node in enumerate(members)}


class RoundRobinSequencer:
    def __init__(self):
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._root: Optional[ThreadHandle] = None
        self._nodes: list[ThreadHandle] = []       # registration order
        self._live: tuple[ThreadHandle, ...] = ()  # threads with pending slots
        self._segments: tuple[_Segment, ...] = ()
        self._epoch = 0            # bumped on any lifecycle change
        self._waiters = 0
        self.cancel_event: Optional[threading.Event] = None
        self.deadline: Optional[float] = None

    # -- registration ------------------------------------------------------

    def register_main(self, label: str = "main") -> ThreadHandle:
        with self._lock:
            if self._root is not None:
                raise ValueError("main thread already registered")
            node = ThreadHandle(label, None)
            node.entered_round = 1
            node.frontier = 1
            self._root = node
            self._nodes.append(node)
            self._rebuild_locked(from_round=1)
            return node

    def spawn(self, parent: ThreadHandle, label: str) -> ThreadHandle:
        """Register a child outside any transaction (harness setup).

        The child enters the parent's next unrequested round: its first slot
        lands in the same round as the parent's next one.
        """
        with self._lock:
            return self._register_child_locked(parent, label, parent.frontier)

    def _register_child_locked(self, parent: ThreadHandle, label: str,
                               entered: int) -> ThreadHandle:
        if parent.stop_round is not None:
            raise ValueError(f"thread {parent.label!r} already stopped")
        node = ThreadHandle(label, parent)
        node.entered_round = entered
        node.frontier = entered
        parent.children.append(node)
        self._nodes.append(node)
        self._rebuild_locked(from_round=entered)
        return node

    # -- slot assignment ---------------------------------------------------

    def get_seq_no(self, node: ThreadHandle, label: str = "") -> int:
        """Claim this thread's next slot and return its sequence number."""
        # Fast path: stable tree since this thread's last request, and no
        # barrier needed (sole live thread, or earlier rounds already full).
        # The live set is sampled before the epoch: a rebuild writes the epoch
        # first and the live tuple last, so passing the epoch check after
        # seeing a live tuple means that tuple was current for this epoch.
        live = self._live
        if node.cached_epoch == self._epoch:
            r = node.frontier
            if len(live) > 1:
                for other in live:
                    if other.frontier < r:
                        return self._request_slow(node, r)
            sn = node.next_sn
            node.next_sn = sn + node.stride
            node.requested += 1
            node.frontier = r + 1
            if self._waiters:
                with self._cond:
                    self._cond.notify_all()
            return sn
        return self._request_slow(node, node.frontier)

    def get_seq_no_spawning(self, node: ThreadHandle, label: str,
                            spawn_labels: Sequence[str],
                            ) -> tuple[int, list[ThreadHandle]]:
        """Claim a slot for a transaction that starts new threads.

        The children are registered before the number is returned so that
        every later slot is laid out around them consistently, regardless of
        when the child threads actually start running.  They enter the round
        after this transaction's round.
        """
        with self._cond:
            r = node.frontier
            self._wait_barrier_locked(node, r)
            sn = self._slot_sn_locked(node, r)
            children = [self._register_child_locked(node, lbl, r + 1)
                        for lbl in spawn_labels]
            node.requested += 1
            node.frontier = r + 1
            self._cond.notify_all()
            return sn, children

    def stop(self, node: ThreadHandle) -> int:
        """Consume the thread's final slot. Invisible to the application."""
        with self._cond:
            r = node.frontier
            self._wait_barrier_locked(node, r)
            sn = self._slot_sn_locked(node, r)
            node.stop_round = r
            node.requested += 1
            node.frontier = r + 1
            self._rebuild_locked(from_round=r + 1)
            self._cond.notify_all()
            return sn

    def _request_slow(self, node: ThreadHandle, r: int) -> int:
        with self._cond:
            self._wait_barrier_locked(node, r)
            sn = self._slot_sn_locked(node, r)
            node.requested += 1
            node.frontier = r + 1
            # Prime the fast path while the layout around r stays stable.
            seg = self._segment_for_locked(r)
            if seg.end_round is None:
                node.cached_epoch = self._epoch
                node.stride = len(seg.members)
                node.next_sn = sn + node.stride
            else:
                node.cached_epoch = -1
            self._cond.notify_all()
            return sn

    def _wait_barrier_locked(self, node: ThreadHandle, r: int) -> None:
        while True:
            pending = None
            for other in self._live:
                if other is not node and other.frontier < r:
                    pending = other
                    break
            if pending is None:
                return
            self._waiters += 1
            try:
                self._cond.wait(0.05)
            finally:
                self._waiters -= 1
            ce = self.cancel_event
            if ce is not None and ce.is_set():
                raise RunCancelled("sequencer barrier")
            if self.deadline is not None and time.monotonic() > self.deadline:
                raise HangError(
                    f"sequencer stalled before round {r}: thread "
                    f"{pending.label!r} never requested its round-{r - 1} slot",
                    {"round": r - 1, "pending_thread": pending.label})

    # -- layout ------------------------------------------------------------

    def _postorder(self) -> list[ThreadHandle]:
        out: list[ThreadHandle] = []

        def visit(n: ThreadHandle) -> None:
            for c in n.children:
                visit(c)
            out.append(n)

        if self._root is not None:
            visit(self._root)
        return out

    def _members_of_round(self, r: int) -> tuple[ThreadHandle, ...]:
        return tuple(
            n for n in self._postorder()
            if n.entered_round <= r and (n.stop_round is None or r <= n.stop_round)
        )

    def _rebuild_locked(self, from_round: int) -> None:
        """Recompute the layout for rounds >= from_round.

        Safe because the request barrier guarantees no slot in those rounds
        has been handed out yet when a lifecycle event lands there.
        """
        self._epoch += 1
        kept: list[_Segment] = []
        start_sn = 1
        for seg in self._segments:
            if seg.start_round >= from_round:
                break
            if seg.end_round is None or seg.end_round >= from_round:
                seg.end_round = from_round - 1
            kept.append(seg)
            start_sn = (seg.start_sn
                        + (seg.end_round - seg.start_round + 1) * len(seg.members))
        members = self._members_of_round(from_round)
        if members:
            kept.append(_Segment(from_round, start_sn, members))
        self._segments = tuple(kept)
        self._live = tuple(n for n in self._nodes if n.stop_round is None)

    def _segment_for_locked(self, r: int) -> _Segment:
        for seg in reversed(self._segments):
            if seg.start_round <= r and (seg.end_round is None or r <= seg.end_round):
                return seg
        raise LookupError(f"no segment covers round {r}")

    def _slot_sn_locked(self, node: ThreadHandle, r: int) -> int:
        seg = self._segment_for_locked(r)
        return (seg.start_sn
                + (r - seg.start_round) * len(seg.members)
                + seg.pos[node])

    # -- diagnosis ---------------------------------------------------------

    def describe_slot(self, sn: int) -> Optional[str]:
        """Human-readable owner of a sequence number, if laid out yet."""
        with self._lock:
            for seg in self._segments:
                width = len(seg.members)
                if width == 0 or sn < seg.start_sn:
                    continue
                offset = sn - seg.start_sn
                r = seg.start_round + offset // width
                if seg.end_round is not None and r > seg.end_round:
                    continue
                node = seg.members[offset % width]
                k = r - node.entered_round + 1
                return f"thread {node.label!r} (its slot {k})"
            return None


class ReplaySequencer:
    """Assigns sequence numbers from a recorded commit order.

    The order is the application-visible commit list: one (thread, label) per
    line, in sequence-number order, stop slots excluded.  Thread x's k-th
    request gets the global position of the k-th recorded entry for x.  A
    label mismatch or an exhausted allotment is reported immediately; either
    one means the recorded order cannot be reproduced.
    """

    def __init__(self, order: Sequence[tuple[str, str]]):
        self.order = list(order)
        self._lock = threading.Lock()
        self._by_thread: dict[str, list[tuple[int, str]]] = {}
        for sn0, (thread, label) in enumerate(self.order):
            self._by_thread.setdefault(thread, []).append((sn0 + 1, label))
        self._consumed: dict[str, int] = {}
        self.first_failure: Optional[dict] = None
        self.cancel_event: Optional[threading.Event] = None
        self.deadline: Optional[float] = None

    def register_main(self, label: str = "main") -> ThreadHandle:
        return ThreadHandle(label, None)

    def spawn(self, parent: ThreadHandle, label: str) -> ThreadHandle:
        return ThreadHandle(label, parent)

    def get_seq_no(self, node: ThreadHandle, label: str = "") -> int:
        with self._lock:
            entries = self._by_thread.get(node.label)
            k = self._consumed.get(node.label, 0)
            if entries is None or k >= len(entries):
                failure = {
                    "kind": "missing-slot",
                    "thread": node.label,
                    "label": label,
                    "recorded_entries": len(self.order),
                }
                if self.first_failure is None:
                    self.first_failure = failure
                raise HangError(
                    f"recorded order has no slot for thread {node.label!r} "
                    f"transaction {label!r}: record exhausted after "
                    f"{len(self.order)} entries", failure)
            sn, recorded_label = entries[k]
            if recorded_label != label:
                failure = {
                    "kind": "divergence",
                    "thread": node.label,
                    "label": label,
                    "expected_label": recorded_label,
                    "sn": sn,
                }
                if self.first_failure is None:
                    self.first_failure = failure
                raise HangError(
                    f"replay divergence: thread {node.label!r} ran {label!r} "
                    f"where the record expects {recorded_label!r} (slot {sn})",
                    failure)
            self._consumed[node.label] = k + 1
            return sn

    def get_seq_no_spawning(self, node: ThreadHandle, label: str,
                            spawn_labels: Sequence[str],
                            ) -> tuple[int, list[ThreadHandle]]:
        sn = self.get_seq_no(node, label)
        return sn, [ThreadHandle(lbl, node) for lbl in spawn_labels]

    def stop(self, node: ThreadHandle) -> None:
        return None  # stop slots are not recorded and consume nothing

    def describe_slot(self, sn: int) -> Optional[str]:
        if 1 <= sn <= len(self.order):
            thread, label = self.order[sn - 1]
            return f"thread {thread!r} transaction {label!r}"
        return None


# -- offline enumeration ----------------------------------------------------

def enumerate_schedule(root_children: Sequence) -> list[tuple[str, str]]:
    """Compute the full slot order for a static program tree.

    ``root_children`` are ThreadProgram-like objects: .label, .plans (each
    plan has .label and .spawns, a sequence of child programs).  Returns
    [(thread label, txn label or STOP)] covering every slot, including stop
    slots, in sequence-number order.  The main thread is the tree root: it
    runs no transactions of its own and stops in round one, after its
    children's first slots.
    """

    class _Sim:
        __slots__ = ("label", "plans", "children", "entered", "stopped", "taken")

        def __init__(self, label, plans, entered):
            self.label = label
            self.plans = plans
            self.children: list["_Sim"] = []
            self.entered = entered
            self.stopped = False
            self.taken = 0

    root = _Sim("main", (), 1)
    for prog in root_children:
        root.children.append(_Sim(prog.label, list(prog.plans), 1))

    def postorder(n: _Sim, out: list[_Sim]) -> list[_Sim]:
        for c in n.children:
            postorder(c, out)
        out.append(n)
        return out

    schedule: list[tuple[str, str]] = []
    r = 1
    while True:
        members = [n for n in postorder(root, [])
                   if n.entered <= r and not n.stopped]
        if not members:
            break
        for n in members:
            if n.taken < len(n.plans):
                plan = n.plans[n.taken]
                schedule.append((n.label, plan.label))
                for child_prog in getattr(plan, "spawns", ()) or ():
                    n.children.append(
                        _Sim(child_prog.label, list(child_prog.plans), r + 1))
            else:
                schedule.append((n.label, STOP))
                n.stopped = True
            n.taken += 1
        r += 1
    return schedule


def visible_schedule(schedule: Iterable[tuple[str, str]]) -> list[tuple[str, str]]:
    return [(t, lbl) for t, lbl in schedule if lbl != STOP]


# -- replay file I/O ---------------------------------------------------------

def save_order(path: str, order: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for thread, label in order:
            f.write(f"{thread}\t{label}\n")


def load_order(path: str) -> list[tuple[str, str]]:
    order: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected thread<TAB>label")
            order.append((parts[0], parts[1]))
    return order
