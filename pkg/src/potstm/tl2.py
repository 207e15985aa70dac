"""Baseline optimistic STM with versioned stripe locks (TL2 style).

Reads validate against a begin-time snapshot of the global version; writes
are buffered and published at commit under per-stripe locks with a fresh
version drawn by bumping the global version by 2 (version words stay even
when unlocked, odd while locked).

Read-only transactions commit without locking, validation, or a version
bump: every read was individually validated against the begin-time snapshot,
so the whole transaction is serialized at its begin point.

The commit stages are exposed as separate methods (lock, reserve, validate,
publish) so tests can drive interleavings deterministically; ``commit`` is
their composition.
"""
from __future__ import annotations

from typing import Callable, Optional

from .errors import TxnAbort
from .heap import VersionedHeap


class Tl2Txn:
    __slots__ = ("_heap", "_meta", "_cells", "_smap", "_n", "label", "rv",
                 "_reads", "_rappend", "_writes", "_locked", "_lockset")

    def __init__(self, heap: VersionedHeap):
        self._heap = heap
        self._meta = heap.meta
        self._cells = heap.cells
        self._n = len(heap.cells)
        sm = heap.stripe_map
        self._smap = None if sm.identity else sm.stripe_of
        self.label = ""
        self.rv = 0
        self._reads: list[int] = []
        self._rappend = self._reads.append
        self._writes: dict[int, int] = {}
        self._locked: list[tuple[int, int]] = []  # (stripe, pre-lock version)
        self._lockset: set[int] = set()

    def start(self, label: str) -> None:
        """Begin the first attempt of a new transaction."""
        self.label = label
        self.begin()

    def begin(self) -> None:
        self.rv = self._heap.gv
        reads: list[int] = []
        self._reads = reads
        self._rappend = reads.append
        self._writes = {}

    def read(self, i: int) -> int:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        W = self._writes
        if W and i in W:
            return W[i]
        meta = self._meta
        smap = self._smap
        if smap is None:
            v1 = meta[i]
            value = self._cells[i]
            if meta[i] == v1 and not v1 & 1 and v1 <= self.rv:
                self._rappend(i)
                return value
        else:
            s = smap(i)
            v1 = meta[s]
            value = self._cells[i]
            if meta[s] == v1 and not v1 & 1 and v1 <= self.rv:
                self._rappend(s)
                return value
        raise TxnAbort("read")

    def write(self, i: int, value: int) -> None:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        if i >= self._n:
            raise IndexError(f"cell index {i} out of range")
        self._writes[i] = value

    @property
    def is_read_only(self) -> bool:
        return not self._writes

    # -- commit stages -----------------------------------------------------

    def commit_lock_writes(self) -> None:
        """Acquire the write set's stripe locks in insertion order."""
        heap = self._heap
        smap = self._smap
        locked = self._locked
        lockset = self._lockset
        locked.clear()
        lockset.clear()
        for i in self._writes:
            s = i if smap is None else smap(i)
            if s in lockset:
                continue
            ok, prior = heap.try_lock_stripe(i, self.rv)
            if not ok:
                raise TxnAbort("lock")
            locked.append((s, prior))
            lockset.add(s)

    def commit_reserve_version(self) -> int:
        return self._heap.add_fetch_gv(2)

    def commit_validate_reads(self) -> None:
        """Re-check the read set; a stripe locked by us is fine, any other
        lock or a version past our snapshot is not."""
        meta = self._meta
        rv = self.rv
        lockset = self._lockset
        for s in self._reads:
            v = meta[s]
            if v & 1:
                if s not in lockset:
                    raise TxnAbort("validate")
            elif v > rv:
                raise TxnAbort("validate")

    def commit_publish(self, wv: int,
                       on_commit: Optional[Callable[[int], None]] = None) -> None:
        """Write back the write set, then unlock stripes at version wv."""
        cells = self._cells
        for i, value in self._writes.items():
            cells[i] = value
        if on_commit is not None:
            on_commit(wv)
        heap = self._heap
        for s, _prior in self._locked:
            heap.unlock_stripe(s, wv)
        self._locked.clear()
        self._lockset.clear()

    def release_locks(self) -> None:
        """Abort path: restore the pre-lock version words."""
        heap = self._heap
        for s, prior in self._locked:
            heap.unlock_stripe(s, prior)
        self._locked.clear()
        self._lockset.clear()

    def commit(self, on_commit: Optional[Callable[[int], None]] = None) -> int:
        """Commit and return the serialization version.

        Read-only transactions return their snapshot version untouched.
        """
        if not self._writes:
            if on_commit is not None:
                on_commit(self.rv)
            return self.rv
        try:
            self.commit_lock_writes()
            wv = self.commit_reserve_version()
            self.commit_validate_reads()
        except TxnAbort:
            self.release_locks()
            raise
        self.commit_publish(wv, on_commit)
        return wv
