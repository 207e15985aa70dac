"""Serial reference execution.

Runs a workload's transactions one at a time, in exactly the slot order the
sequencer would assign, with buffered writes so an explicit abort leaves no
trace.  The preordered systems must reproduce this oracle's final cells and
commit label sequence bit for bit; that is the whole point of preordering.
"""
from __future__ import annotations

from dataclasses import dataclass

from .digest import state_digest
from .errors import ExplicitAbort
from .runtime import run_ops
from .sequencer import STOP, enumerate_schedule
from .workloads import Workload


class SerialTxn:
    __slots__ = ("_cells", "_buf", "label")

    def __init__(self, cells: list[int], label: str):
        self._cells = cells
        self._buf: dict[int, int] = {}
        self.label = label

    def read(self, i: int) -> int:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        buf = self._buf
        if i in buf:
            return buf[i]
        return self._cells[i]

    def write(self, i: int, value: int) -> None:
        if i < 0:
            raise IndexError(f"cell index {i} is negative")
        if i >= len(self._cells):
            raise IndexError(f"cell index {i} out of range")
        self._buf[i] = value

    def apply(self) -> None:
        cells = self._cells
        for i, value in self._buf.items():
            cells[i] = value


@dataclass
class SerialResult:
    final_cells: list[int]
    labels: list[str]
    schedule: list[tuple[str, str]]
    digest: str
    violations: list


def run_serial(workload: Workload) -> SerialResult:
    schedule = enumerate_schedule(workload.programs)
    plans_by_thread = {
        prog.label: list(prog.plans) for prog in workload.all_programs()
    }
    taken = {label: 0 for label in plans_by_thread}
    cells = list(workload.initial_cells)
    n_cells = workload.n_cells
    labels: list[str] = []
    violations: list = []
    for thread, slot_label in schedule:
        if slot_label == STOP:
            continue
        k = taken[thread]
        taken[thread] = k + 1
        plan = plans_by_thread[thread][k]
        if plan.label != slot_label:
            raise AssertionError(
                f"schedule/plan mismatch for {thread}: {plan.label} vs {slot_label}")
        txn = SerialTxn(cells, plan.label)
        try:
            run_ops(txn, plan.ops, n_cells, violations)
        except ExplicitAbort as ab:
            if ab.retry:
                raise ValueError(
                    "retrying explicit aborts are not expressible in plans") from ab
            labels.append(plan.label)  # the slot commits as a no-op
            continue
        txn.apply()
        labels.append(plan.label)
    for thread, remaining in plans_by_thread.items():
        if taken[thread] != len(remaining):
            raise AssertionError(f"thread {thread} has unexecuted plans")
    return SerialResult(
        final_cells=cells,
        labels=labels,
        schedule=schedule,
        digest=state_digest(cells, labels),
        violations=violations,
    )
