"""Preordered transactions: promotion, fast/speculative interplay, undo,
explicit aborts, and the order gate."""
import threading
import time

import pytest

from potstm.errors import HangError, RunCancelled, TxnAbort
from potstm.heap import VersionedHeap
from potstm.pot import FAST, FastMonitor, OrderGate, PotConfig, PotTxn, SPECULATIVE
from potstm.sequencer import RoundRobinSequencer


def make_env(n_cells=4, system="pot", spin_budget=64, initial=None,
             trace=False):
    heap = VersionedHeap(n_cells, initial_cells=initial)
    seq = RoundRobinSequencer()
    root = seq.register_main()
    gate = OrderGate(heap, spin_budget, record_trace=trace)
    mon = FastMonitor()
    cfg = PotConfig.for_system(system)
    return heap, seq, root, gate, mon, cfg


def new_txn(env, node=None):
    heap, seq, root, gate, mon, cfg = env
    return PotTxn(heap, gate, seq, node or root, cfg, mon)


def test_sole_thread_promotes_at_begin_and_commits_fast():
    env = make_env(initial=[10, 20, 30, 40])
    heap, seq, root, gate, mon, cfg = env
    txn = new_txn(env)
    txn.start("a")
    assert txn.wv == 1 and txn.mode == FAST
    assert mon.active == 1
    txn.write(0, 11)
    assert heap.cells[0] == 11 and heap.meta[0] == 1  # direct, no buffering
    assert txn.read(0) == 11
    assert txn.commit() == 0
    assert heap.gv == 1 and mon.active == 0
    txn.start("b")
    assert txn.wv == 2 and txn.mode == FAST  # consecutive slot, still alone
    txn.commit()
    assert heap.gv == 2
    assert mon.entries == 2 and mon.max_active == 1


def test_gap_forces_speculative_then_gate_orders_commit():
    env = make_env(initial=[5, 6, 0, 0])
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")          # wv=1, fast
    b.start("b")          # wv=2 but gv=0: not its turn yet
    assert b.mode == SPECULATIVE
    b.write(1, 66)
    assert heap.cells[1] == 6, "speculative write must be buffered"
    assert b.read(1) == 66  # read-own-write from the buffer
    a.write(0, 55)
    a.commit()
    assert b.commit() == 0  # gate already open, writeback happens now
    assert heap.cells[:2] == [55, 66]
    assert heap.gv == 2
    assert heap.meta[1] == 2  # stamped with b's slot number


def test_promotion_on_access_writes_back_buffers():
    env = make_env(initial=[1, 2, 3, 4])
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    b.start("b")
    b.write(0, 100)       # buffered
    assert b.read(3) == 4
    a.commit()            # opens the gate for slot 2
    assert b.mode == SPECULATIVE
    assert b.read(1) == 2  # touch triggers promotion
    assert b.mode == FAST
    assert heap.cells[0] == 100, "buffered write published on promotion"
    assert heap.meta[0] == 2
    b.write(1, 200)       # now direct
    assert heap.cells[1] == 200
    b.commit()
    assert heap.gv == 2
    assert mon.entries == 2  # a at begin, b on access


def test_pot_star_skips_on_access_promotion():
    env = make_env(system="pot-star")
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    assert a.mode == FAST  # at-begin promotion still on
    b.start("b")
    a.commit()
    assert b.read(0) == 0
    assert b.mode == SPECULATIVE, "pot-star never promotes mid-flight"
    b.write(0, 9)
    assert heap.cells[0] == 0
    b.commit()
    assert heap.cells[0] == 9 and heap.gv == 2


def test_pot_minus_is_always_speculative():
    env = make_env(system="pot-minus")
    heap, seq, root, gate, mon, cfg = env
    txn = new_txn(env)
    txn.start("only")
    assert txn.mode == SPECULATIVE
    txn.write(2, 7)
    txn.commit()
    assert heap.cells[2] == 7 and heap.gv == 1
    assert mon.entries == 0 and mon.max_active == 0


def test_fast_undo_restores_exact_state_newest_first():
    env = make_env(initial=[10, 20, 30, 40])
    heap, seq, root, gate, mon, cfg = env
    txn = new_txn(env)
    txn.start("w")
    txn.write(0, 11)
    txn.write(1, 21)
    txn.write(0, 12)      # second write to the same cell
    assert heap.cells[:2] == [12, 21]
    with pytest.raises(IndexError):
        txn.write(99, 1)  # out of range: raises before touching anything
    txn.rollback_to_retry()
    assert heap.cells == [10, 20, 30, 40]
    assert heap.meta == [0, 0, 0, 0]
    assert mon.active == 0
    # the slot is kept; the retry promotes again and can finish
    txn.begin()
    assert txn.mode == FAST and txn.wv == 1
    txn.write(0, 13)
    txn.commit()
    assert heap.cells[0] == 13 and heap.gv == 1


def test_speculative_validation_abort_then_retry_same_slot():
    env = make_env(initial=[7, 0, 0, 0])
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    b.start("b")
    assert b.read(0) == 7  # reads before a's write lands
    b.write(1, 1)
    a.write(0, 8)
    a.commit()
    with pytest.raises(TxnAbort) as info:
        b.commit()
    assert info.value.kind == "validate"
    assert heap.cells[1] == 0, "failed commit must not write back"
    b.rollback_to_retry()   # speculative: nothing to undo
    b.begin()               # same wv, gate now open: promotes
    assert b.wv == 2 and b.mode == FAST
    assert b.read(0) == 8   # sees the committed value this time
    b.write(1, 1)
    b.commit()
    assert heap.gv == 2 and heap.cells[1] == 1


def test_promote_on_access_can_itself_abort():
    env = make_env()
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    b.start("b")
    assert b.read(0) == 0   # speculative read at rv=0
    a.write(0, 5)
    a.commit()
    with pytest.raises(TxnAbort) as info:
        b.read(1)           # promotion validates the read set first
    assert info.value.kind == "promote"
    assert b.mode == SPECULATIVE and mon.active == 0
    b.rollback_to_retry()
    b.begin()
    assert b.mode == FAST
    b.commit()


def test_no_retry_abort_in_fast_mode_commits_empty_slot():
    env = make_env(initial=[3, 0, 0, 0])
    heap, seq, root, gate, mon, cfg = env
    txn = new_txn(env)
    txn.start("nr")
    txn.write(0, 4)
    done, polls = txn.finish_no_retry()
    assert done
    assert heap.cells[0] == 3, "no-retry abort must discard the write"
    assert heap.gv == 1, "the slot still commits so later slots can run"
    assert mon.active == 0


def test_no_retry_abort_speculative_validates_first():
    env = make_env(initial=[1, 0, 0, 0])
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    b.start("b")
    assert b.read(0) == 1   # stale by commit time
    b.write(1, 9)
    a.write(0, 2)
    a.commit()
    done, _ = b.finish_no_retry()
    assert not done, "abort decision based on doomed reads must rerun"
    b.rollback_to_retry()
    b.begin()               # promotes; suppose the body aborts again
    done, _ = b.finish_no_retry()
    assert done
    assert heap.gv == 2 and heap.cells[1] == 0


def test_parked_waiter_is_woken_by_fast_commit():
    env = make_env(spin_budget=0)
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    b.start("b")
    b.write(0, 1)
    finished = []

    def committer():
        finished.append(b.commit())

    t = threading.Thread(target=committer)
    t.start()
    time.sleep(0.1)
    assert not finished, "slot 2 must park behind the open slot 1"
    a.commit()              # inline fast-commit path must wake the event
    t.join(5)
    assert finished and heap.gv == 2 and heap.cells[0] == 1


def test_gate_deadline_names_missing_slot():
    env = make_env(spin_budget=0)
    heap, seq, root, gate, mon, cfg = env
    gate.deadline = time.monotonic() + 0.15
    gate.describe_owner = lambda sn: f"slot#{sn}" if sn == 1 else None
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    b.start("b")
    with pytest.raises(HangError) as info:
        b.commit()
    assert info.value.report["missing_sn"] == 1
    assert info.value.report["waiting_for"] == 2
    assert "slot#1" in str(info.value)


def test_gate_cancel_unwinds_waiter():
    env = make_env(spin_budget=0)
    heap, seq, root, gate, mon, cfg = env
    gate.cancel_event = threading.Event()
    a, b = new_txn(env), new_txn(env)
    a.start("a")
    b.start("b")
    result = []

    def committer():
        try:
            b.commit()
        except RunCancelled:
            result.append("cancelled")

    t = threading.Thread(target=committer)
    t.start()
    time.sleep(0.05)
    gate.cancel_event.set()
    t.join(5)
    assert result == ["cancelled"]


def test_trace_records_every_advance():
    env = make_env(trace=True)
    heap, seq, root, gate, mon, cfg = env
    a, b = new_txn(env), new_txn(env)
    a.start("a")            # fast
    b.start("b")            # speculative
    b.write(0, 1)
    a.commit()
    b.commit()
    assert gate.trace == [1, 2]


def test_inline_slot_claim_composes_with_spawning():
    """start() claims slots without calling the sequencer while the thread
    is alone; the bookkeeping must line up when a spawn follows."""
    env = make_env()
    heap, seq, root, gate, mon, cfg = env
    txn = new_txn(env)
    txn.start("a")
    txn.commit()
    txn.start("b")
    txn.commit()
    assert (txn.wv, heap.gv) == (2, 2)
    sn, (child,) = seq.get_seq_no_spawning(root, "p", ["C"])
    assert sn == 3
    spawner = new_txn(env)
    spawner.start_with("p", sn)
    spawner.commit()
    child_txn = new_txn(env, node=child)
    child_txn.start("c1")   # two live threads now: the real sequencer path
    assert child_txn.wv == 4 and child_txn.mode == FAST
    child_txn.commit()
    txn.start("q")
    assert txn.wv == 5
    txn.commit()
    assert seq.stop(child) == 6
    assert seq.stop(root) == 7
    assert heap.gv == 5


def test_single_fast_invariant_under_scripted_overlap():
    env = make_env()
    heap, seq, root, gate, mon, cfg = env
    a, b, c = new_txn(env), new_txn(env), new_txn(env)
    a.start("a")            # fast
    b.start("b")            # speculative (slot 2, gate closed)
    c.start("c")            # speculative (slot 3)
    assert (a.mode, b.mode, c.mode) == (FAST, SPECULATIVE, SPECULATIVE)
    assert mon.active == 1
    b.write(0, 1)
    c.write(1, 2)
    a.commit()
    assert b.read(3) == 0 and b.mode == FAST  # promoted, a is done
    assert mon.active == 1
    b.commit()
    c.commit()
    assert mon.max_active == 1
    assert heap.gv == 3
