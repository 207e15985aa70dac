"""Global-order-lock comparator: the ordering gate without speculation.

Each transaction draws its sequence number, waits at the gate until the
global version reaches wv - 1, and only then runs its body, reading and
writing the heap directly.  Commit just advances the global version, so the
gate is held for the whole body: this isolates the cost/benefit of
speculative execution when compared against the preordered STM, while
producing the identical commit order and final state.

An undo log of old values supports explicit aborts (version words are never
stamped; nothing else runs concurrently with a body, so nobody looks).
"""
from __future__ import annotations

from .heap import VersionedHeap
from .pot import OrderGate


class PoglTxn:
    __slots__ = ("_heap", "_cells", "_gate", "_seq", "_node", "_gate_enabled",
                 "label", "wv", "_undo")

    def __init__(self, heap: VersionedHeap, gate: OrderGate, seq, node,
                 gate_enabled: bool = True):
        self._heap = heap
        self._cells = heap.cells
        self._gate = gate
        self._seq = seq
        self._node = node
        self._gate_enabled = gate_enabled
        self.label = ""
        self.wv = 0
        self._undo: list[tuple[int, int]] = []

    def reset(self, label: str) -> None:
        self.label = label
        self.wv = 0

    def begin(self, jitter=None) -> int:
        """Draw the slot (first attempt only) and wait for the turn."""
        if self.wv == 0:
            self.wv = self._seq.get_seq_no(self._node, self.label)
        self._undo = []
        if self._gate_enabled:
            return self._gate.wait_for_turn(self.wv, jitter)
        return 0

    def read(self, i: int) -> int:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        return self._cells[i]

    def write(self, i: int, value: int) -> None:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        cells = self._cells
        self._undo.append((i, cells[i]))
        cells[i] = value

    def commit(self) -> None:
        self._gate.advance(self.wv)

    def rollback_to_retry(self) -> None:
        """Undo effects; the turn is still held, the body may rerun."""
        self._rollback()

    def finish_no_retry(self) -> None:
        """Undo effects and commit the slot as a no-op."""
        self._rollback()
        self._gate.advance(self.wv)

    def _rollback(self) -> None:
        cells = self._cells
        for i, old_value in reversed(self._undo):
            cells[i] = old_value
        self._undo = []
