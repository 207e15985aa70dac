"""Shared versioned heap: word cells plus per-stripe version/lock metadata.

Layout
------
``cells[i]`` holds the application value of cell i.  ``meta[s]`` holds the
version word of stripe s, where s = stripe_of(i).  An even version word means
"unlocked, last written at that version"; an odd word means "write-locked".
The global version counter ``gv`` lives here too, since every system advances
it (optimistic commits bump it by 2 via ``add_fetch_gv``; ordered commits set
it to their own sequence number through the gate).

Memory model
------------
On CPython, reads and writes of a single list element or attribute are atomic
and effectively sequentially consistent (the interpreter lock orders them), so
the acquire/release fences of the versioned-read and versioned-write protocols
collapse to program order here.  The fence points still exist in the code as
hook sites: tests install ``interleave_hook`` to force adversarial schedules
between the two metadata samples of a read.

Lock words are the one place needing a real atomic read-modify-write
(compare-and-swap); a single internal mutex serves that and the ``gv`` bump.
"""
from __future__ import annotations

import threading
from typing import Callable, Optional

from .errors import ContractViolation


class StripeMap:
    """Maps cell index -> stripe index.

    one_to_one: every cell has its own version word (no false conflicts).
    striped(size, shift): stripe = (i >> shift) & (size - 1), the classic
    hashed lock-table layout; size must be a power of two.
    """

    __slots__ = ("n_stripes", "shift", "mask", "identity")

    def __init__(self, n_stripes: int, shift: int, identity: bool):
        self.n_stripes = n_stripes
        self.shift = shift
        self.mask = n_stripes - 1
        self.identity = identity

    @staticmethod
    def one_to_one(n_cells: int) -> "StripeMap":
        return StripeMap(n_cells, 0, True)

    @staticmethod
    def striped(size: int, shift: int = 0) -> "StripeMap":
        if size <= 0 or size & (size - 1):
            raise ValueError("stripe table size must be a power of two")
        return StripeMap(size, shift, False)

    def stripe_of(self, i: int) -> int:
        if self.identity:
            return i
        return (i >> self.shift) & self.mask


class VersionedHeap:
    __slots__ = (
        "n_cells",
        "cells",
        "meta",
        "stripe_map",
        "gv",
        "_cas_lock",
        "_owners",
        "interleave_hook",
    )

    def __init__(self, n_cells: int, stripe_map: Optional[StripeMap] = None,
                 initial_cells: Optional[list[int]] = None):
        if n_cells <= 0:
            raise ValueError("heap needs at least one cell")
        if initial_cells is not None and len(initial_cells) != n_cells:
            raise ValueError("initial_cells length mismatch")
        self.n_cells = n_cells
        self.cells: list[int] = list(initial_cells) if initial_cells else [0] * n_cells
        self.stripe_map = stripe_map or StripeMap.one_to_one(n_cells)
        self.meta: list[int] = [0] * self.stripe_map.n_stripes
        self.gv = 0
        self._cas_lock = threading.Lock()
        # stripe -> thread ident, tracked while locked; guards misuse
        self._owners: dict[int, int] = {}
        self.interleave_hook: Optional[Callable[[str, int], None]] = None

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.n_cells:
            raise IndexError(f"cell index {i} out of range [0, {self.n_cells})")

    def stripe_of(self, i: int) -> int:
        return self.stripe_map.stripe_of(i)

    # -- versioned access -------------------------------------------------

    def read_cell_versioned(self, i: int) -> tuple[int, int, int]:
        """Sample (version-before, value, version-after) for cell i.

        The caller decides consistency: a clean read has version-before even,
        equal to version-after, and no newer than its snapshot bound.
        """
        self._check_index(i)
        s = self.stripe_map.stripe_of(i)
        hook = self.interleave_hook
        v1 = self.meta[s]
        if hook:
            hook("after_v1", i)
        value = self.cells[i]
        if hook:
            hook("after_value", i)
        v2 = self.meta[s]
        return v1, value, v2

    def write_cell_versioned(self, i: int, value: int, version: int) -> None:
        """Stamp the stripe with ``version`` then store the value.

        Version-first order means a concurrent versioned read either sees the
        new version (and rejects/retries) or the old value; never a new value
        under an old version.
        """
        self._check_index(i)
        s = self.stripe_map.stripe_of(i)
        hook = self.interleave_hook
        self.meta[s] = version
        if hook:
            hook("after_version", i)
        self.cells[i] = value

    # -- stripe locks ------------------------------------------------------

    def try_lock_stripe(self, i: int, rv: int) -> tuple[bool, int]:
        """Attempt to lock cell i's stripe for writing.

        Succeeds only if the stripe is unlocked and its version is no newer
        than ``rv`` (a stripe already past the caller's snapshot would fail
        commit validation anyway, so refuse early).  Returns (ok, version
        observed); on success the observed version is the even word to restore
        if the commit later backs out.
        """
        self._check_index(i)
        s = self.stripe_map.stripe_of(i)
        with self._cas_lock:
            v = self.meta[s]
            if v & 1 or v > rv:
                return False, v
            self.meta[s] = v | 1
            self._owners[s] = threading.get_ident()
            return True, v

    def unlock_stripe(self, s: int, new_version: int) -> None:
        """Release stripe s, setting its version word to ``new_version``.

        Used both for commit publication (new write version) and for abort
        paths (restore the pre-lock version).  ``new_version`` must be even.
        """
        if new_version & 1:
            raise ContractViolation("unlock requires an even version word")
        with self._cas_lock:
            owner = self._owners.get(s)
            if owner != threading.get_ident():
                raise ContractViolation(f"stripe {s} unlocked by non-owner")
            del self._owners[s]
            self.meta[s] = new_version

    def stripe_locked(self, s: int) -> bool:
        return bool(self.meta[s] & 1)

    # -- global version ----------------------------------------------------

    def add_fetch_gv(self, delta: int) -> int:
        with self._cas_lock:
            self.gv += delta
            return self.gv

    def snapshot_cells(self) -> list[int]:
        return list(self.cells)
