"""Deterministic workload construction.

A workload is a static tree of thread programs; each program is a list of
transaction plans; each plan is a flat tuple of operations.  Everything is
derived from the workload seed, so the same arguments always produce the same
plans, and any two systems (or the serial oracle) executing them differ only
in scheduling.

Operations (first element selects):
    ("r", i)            read cell i
    ("w", i, v)         write v to cell i
    ("inc", i, d)       read-modify-write: cell i += d
    ("xfer", s, d, a)   move a from cell s to cell d
    ("audit", total)    read every cell; record a violation if the sum
                        differs from the expected invariant total
    ("abort", retry)    explicitly abort here (retry=False commits a no-op)

Plans never use retry=True aborts: a deterministic body that aborted once
would abort forever.  Retrying aborts are exercised by dedicated tests with
state-dependent bodies.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from hashlib import blake2b
from typing import Optional, Sequence


@dataclass(frozen=True)
class TxnPlan:
    label: str
    ops: tuple
    spawns: tuple["ThreadProgram", ...] = ()


@dataclass(frozen=True)
class ThreadProgram:
    label: str
    plans: tuple[TxnPlan, ...]


@dataclass(frozen=True)
class Workload:
    name: str
    n_cells: int
    initial_cells: tuple[int, ...]
    programs: tuple[ThreadProgram, ...]
    invariant_total: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    def all_programs(self) -> list[ThreadProgram]:
        """Every program in the tree, spawned ones included."""
        out: list[ThreadProgram] = []
        stack = list(self.programs)
        while stack:
            prog = stack.pop(0)
            out.append(prog)
            for plan in prog.plans:
                stack.extend(plan.spawns)
        return out


def txn_rng(seed: int, thread_label: str, index: int) -> random.Random:
    """Stable per-transaction generator, independent of execution order."""
    h = blake2b(f"{seed}/{thread_label}/{index}".encode(), digest_size=8)
    return random.Random(int.from_bytes(h.digest(), "big"))


# -- counter table ------------------------------------------------------------

def counter_workload(n_threads: int, txns_per_thread: int, n_cells: int,
                     accesses: int, read_fraction: float, seed: int,
                     ) -> Workload:
    """Uniform random reads/blind writes over a table of counters."""
    programs = []
    for ti in range(n_threads):
        label = f"t{ti}"
        plans = []
        for k in range(txns_per_thread):
            rng = txn_rng(seed, label, k)
            ops = []
            for _ in range(accesses):
                i = rng.randrange(n_cells)
                if rng.random() < read_fraction:
                    ops.append(("r", i))
                else:
                    ops.append(("w", i, rng.getrandbits(32)))
            plans.append(TxnPlan(f"{label}.{k}", tuple(ops)))
        programs.append(ThreadProgram(label, tuple(plans)))
    return Workload(
        name=f"counter[{n_threads}x{txns_per_thread},c{n_cells},"
             f"a{accesses},r{read_fraction:g},s{seed}]",
        n_cells=n_cells,
        initial_cells=(0,) * n_cells,
        programs=tuple(programs),
    )


# -- bank transfers ------------------------------------------------------------

def bank_workload(n_threads: int, txns_per_thread: int, n_accounts: int,
                  seed: int, initial_balance: int = 100,
                  audit_fraction: float = 0.0625) -> Workload:
    """Random transfers preserving a fixed total, with occasional audits.

    An audit reads every account inside one transaction and checks the sum
    against the invariant total; any mismatch seen by a live transaction is a
    consistency violation (a torn snapshot), even if that attempt later
    aborts.
    """
    total = n_accounts * initial_balance
    programs = []
    for ti in range(n_threads):
        label = f"t{ti}"
        plans = []
        for k in range(txns_per_thread):
            rng = txn_rng(seed, label, k)
            if rng.random() < audit_fraction:
                ops = (("audit", total),)
            else:
                src = rng.randrange(n_accounts)
                dst = rng.randrange(n_accounts - 1)
                if dst >= src:
                    dst += 1
                ops = (("xfer", src, dst, rng.randint(1, 10)),)
            plans.append(TxnPlan(f"{label}.{k}", ops))
        programs.append(ThreadProgram(label, tuple(plans)))
    return Workload(
        name=f"bank[{n_threads}x{txns_per_thread},acc{n_accounts},s{seed}]",
        n_cells=n_accounts,
        initial_cells=(initial_balance,) * n_accounts,
        programs=tuple(programs),
        invariant_total=total,
    )


# -- mixed fuzz generator -------------------------------------------------------

def mixed_workload(n_threads: int, txns_per_thread: int, n_cells: int,
                   seed: int, hot_cells: int = 4, ops_per_txn: int = 6,
                   no_retry_abort_rate: float = 0.0, ragged: bool = False,
                   ) -> Workload:
    """Contended mixture of reads, writes and increments for fuzzing.

    A few hot cells draw most of the traffic; the rest of each transaction
    touches a per-thread private slice.  ``ragged`` gives threads unequal
    transaction counts so stop slots land mid-run rather than together.
    """
    hot = max(1, min(hot_cells, n_cells))
    programs = []
    for ti in range(n_threads):
        label = f"t{ti}"
        count = txns_per_thread - (ti % 3 if ragged else 0)
        count = max(1, count)
        private_base = hot + (ti * max(1, (n_cells - hot) // max(1, n_threads)))
        plans = []
        for k in range(count):
            rng = txn_rng(seed, label, k)
            ops = []
            for _ in range(ops_per_txn):
                if rng.random() < 0.7:
                    i = rng.randrange(hot)
                else:
                    span = max(1, (n_cells - hot) // max(1, n_threads))
                    i = private_base + rng.randrange(span)
                    i = min(i, n_cells - 1)
                pick = rng.random()
                if pick < 0.4:
                    ops.append(("r", i))
                elif pick < 0.7:
                    ops.append(("inc", i, rng.randint(1, 9)))
                else:
                    ops.append(("w", i, rng.getrandbits(16)))
            if no_retry_abort_rate and rng.random() < no_retry_abort_rate:
                cut = rng.randrange(len(ops) + 1)
                ops = ops[:cut] + [("abort", False)]
            plans.append(TxnPlan(f"{label}.{k}", tuple(ops)))
        programs.append(ThreadProgram(label, tuple(plans)))
    return Workload(
        name=f"mixed[{n_threads}x{txns_per_thread},c{n_cells},s{seed}"
             f"{',ragged' if ragged else ''}]",
        n_cells=n_cells,
        initial_cells=(0,) * n_cells,
        programs=tuple(programs),
    )


# -- lifecycle examples ---------------------------------------------------------

def _plan(label: str, cell: int, delta: int,
          spawns: Sequence[ThreadProgram] = ()) -> TxnPlan:
    return TxnPlan(label, (("inc", cell, delta),), tuple(spawns))


def two_thread_example() -> Workload:
    """Two three-transaction threads; expected order a d b e c f."""
    t = ThreadProgram("t", (_plan("a", 0, 1), _plan("b", 0, 2), _plan("c", 0, 3)))
    u = ThreadProgram("u", (_plan("d", 1, 1), _plan("e", 1, 2), _plan("f", 1, 3)))
    return Workload("two-thread-example", 2, (0, 0), (t, u),
                    meta={"expected_order": list("adbecf")})


def spawn_example() -> Workload:
    """Transaction b starts thread v = (g, h); expected a d b e g c f h."""
    v = ThreadProgram("v", (_plan("g", 2, 1), _plan("h", 2, 2)))
    t = ThreadProgram("t", (_plan("a", 0, 1),
                            TxnPlan("b", (("inc", 0, 2),), (v,)),
                            _plan("c", 0, 3)))
    u = ThreadProgram("u", (_plan("d", 1, 1), _plan("e", 1, 2), _plan("f", 1, 3)))
    return Workload("spawn-example", 3, (0, 0, 0), (t, u),
                    meta={"expected_order": list("adbegcfh")})


def early_stop_example() -> Workload:
    """The first thread ends after b; expected a d b e f."""
    t = ThreadProgram("t", (_plan("a", 0, 1), _plan("b", 0, 2)))
    u = ThreadProgram("u", (_plan("d", 1, 1), _plan("e", 1, 2), _plan("f", 1, 3)))
    return Workload("early-stop-example", 2, (0, 0), (t, u),
                    meta={"expected_order": list("adbef")})
