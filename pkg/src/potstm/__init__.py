"""Deterministic software transactional memory with preordered commits.

Transactions are ordered before they execute: a sequencer assigns each one a
slot in a round-robin schedule over the thread tree, and the commit protocol
makes the execution equivalent to running them serially in that order.  The
same workload therefore always produces the same final state and commit
sequence, which makes runs reproducible, comparable against a serial oracle,
and replayable from a recorded order.

The package also ships the optimistic baseline (``tl2``), a gate-only
comparator (``pogl``), promotion-policy ablations (``pot-minus``,
``pot-star``), deterministic workload builders, and a benchmark/verification
harness with a CLI (``potstm``).
"""
from .digest import fnv1a64, state_digest
from .errors import (ContractViolation, ExplicitAbort, HangError,
                     RunCancelled, TxnAbort)
from .heap import StripeMap, VersionedHeap
from .oracle import SerialResult, run_serial
from .pogl import PoglTxn
from .pot import FastMonitor, OrderGate, PotConfig, PotTxn
from .runtime import (CommitRecord, JitterInjector, RunResult, RunStats,
                      SYSTEMS, run_ops, run_workload, verify_commit_order)
from .sequencer import (ReplaySequencer, RoundRobinSequencer, STOP,
                        enumerate_schedule, load_order, save_order,
                        visible_schedule)
from .tl2 import Tl2Txn
from .workloads import (TxnPlan, ThreadProgram, Workload, bank_workload,
                        counter_workload, early_stop_example, mixed_workload,
                        spawn_example, two_thread_example)

__version__ = "0.1.0"

__all__ = [
    "CommitRecord", "ContractViolation", "ExplicitAbort", "FastMonitor",
    "HangError", "JitterInjector", "OrderGate", "PoglTxn", "PotConfig",
    "PotTxn", "ReplaySequencer", "RoundRobinSequencer", "RunCancelled",
    "RunResult", "RunStats", "STOP", "SerialResult", "StripeMap", "SYSTEMS",
    "ThreadProgram", "Tl2Txn", "TxnAbort", "TxnPlan", "VersionedHeap",
    "Workload", "bank_workload", "counter_workload", "early_stop_example",
    "enumerate_schedule", "fnv1a64", "load_order", "mixed_workload",
    "run_ops", "run_serial", "run_workload", "save_order", "spawn_example",
    "state_digest", "two_thread_example", "verify_commit_order",
    "visible_schedule",
]
