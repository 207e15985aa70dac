"""Acceptance gate: the nine shipping criteria, one verdict line each.

Every test prints exactly one ``criterion N: PASS/FAIL - detail`` line
(visible with -s, or in the captured output of a failing test) and then
asserts it.  Criteria are checked at their stated tolerances; nothing here
is tuned to the machine beyond the published measurement protocol
(interleaved pairs, median of five, warmup discarded, gc paused).
"""
import itertools
import time

import pytest

from potstm import bench
from potstm.errors import ExplicitAbort, HangError, TxnAbort
from potstm.heap import VersionedHeap
from potstm.oracle import SerialTxn, run_serial
from potstm.runtime import (ORDERED_SYSTEMS, run_ops, run_workload,
                            verify_commit_order)
from potstm.tl2 import Tl2Txn
from potstm.workloads import (bank_workload, early_stop_example,
                              mixed_workload, spawn_example)

WORKLOADS = ("kv", "bank", "mixgen")
THREAD_COUNTS = (1, 2, 4, 8)
SEEDS = (0, 1, 2)
TXNS_PER_THREAD = 12


def _verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


def _grid():
    for name in WORKLOADS:
        for threads in THREAD_COUNTS:
            for seed in SEEDS:
                yield bench.make_workload(name, threads=threads,
                                          txns=TXNS_PER_THREAD, seed=seed)


def test_criterion_1_determinism_across_jittered_runs():
    t0 = time.perf_counter()
    configs = 0
    runs = 0
    failures = []
    for wl in _grid():
        rep = bench.check_determinism(wl, system="pot", runs=20,
                                      jitter_probability=0.25)
        configs += 1
        runs += rep.runs
        if not rep.ok:
            failures.append(f"{wl.name}: " + "; ".join(rep.problems))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120.0
    detail = (f"{configs} configs x 20 jittered runs ({runs} runs), "
              f"identical digests and label orders, {elapsed:.1f}s"
              + (f"; failures: {failures[:2]}" if failures else ""))
    _verdict(1, ok, detail)


def test_criterion_2_oracle_equivalence_all_ordered_systems():
    checked = 0
    failures = []
    for wl in _grid():
        oracle = run_serial(wl)
        for system in ORDERED_SYSTEMS:
            res = run_workload(system, wl, jitter_seed=1,
                               jitter_probability=0.25)
            checked += 1
            if res.digest != oracle.digest or res.app_labels != oracle.labels:
                failures.append(f"{system} on {wl.name}")
    ok = not failures
    detail = (f"{checked} runs across {len(ORDERED_SYSTEMS)} systems match "
              f"the serial oracle digest exactly"
              + (f"; mismatches: {failures[:3]}" if failures else ""))
    _verdict(2, ok, detail)


def test_criterion_3_sequencer_worked_examples():
    spawn_expected = list("adbegcfh")
    skip_expected = list("adbef")
    results = []
    for wl, expected in ((spawn_example(), spawn_expected),
                         (early_stop_example(), skip_expected)):
        assert wl.meta["expected_order"] == expected
        for system in ORDERED_SYSTEMS:
            res = run_workload(system, wl, jitter_seed=3,
                               jitter_probability=0.5)
            results.append(res.app_labels == expected)
    ok = all(results)
    detail = (f"spawn scenario -> {','.join(spawn_expected)}; "
              f"skip scenario -> {','.join(skip_expected)}; exact on "
              f"{len(results)} runs")
    _verdict(3, ok, detail)


def test_criterion_4_ordered_commits_and_gate_off_mutation():
    clean = []
    for system in ("pot", "pogl"):
        for seed in SEEDS:
            wl = bench.make_workload("mixgen", threads=4, txns=10, seed=seed)
            res = run_workload(system, wl, jitter_seed=seed,
                               jitter_probability=0.3, record_trace=True)
            sns = sorted(r.sn for r in res.records)
            clean.append(sns == list(range(1, len(sns) + 1)))
            clean.append(verify_commit_order(res) == [])
    mutated = []
    for seed in SEEDS:
        wl = bench.make_workload("kv", threads=4, txns=30, seed=seed,
                                 cells=4, accesses=2, read_fraction=0.0)
        res = run_workload("pot", wl, jitter_seed=seed,
                           jitter_probability=0.5, record_trace=True,
                           gate_enabled=False)
        mutated.extend(verify_commit_order(res))
    ok = all(clean) and bool(mutated)
    detail = (f"slot numbers exactly 1..K in {len(clean) // 2} runs; gate-off "
              f"mutation flagged {len(mutated)} order violations")
    _verdict(4, ok, detail)


def test_criterion_5_fast_mode_microbenchmark_trend():
    t0 = time.perf_counter()
    rep = bench.microbench(accesses=(0, 1, 64), read_fractions=(0.0, 1.0),
                           txns=2000, reps=4, passes=5, seed=5)
    elapsed = time.perf_counter() - t0
    r0 = rep.row(0, 0.0).ratio
    r1w = rep.row(1, 0.0).ratio
    r64w = rep.row(64, 0.0).ratio
    r64r = rep.row(64, 1.0).ratio
    clause_a = 0.8 <= r0 <= 1.3
    clause_b = r64w >= 2.0 and r64w >= r1w
    clause_c = 0.7 <= r64r <= 2.0
    ok = clause_a and clause_b and clause_c and elapsed < 60.0
    detail = (f"ratio(0 accesses)={r0:.2f} in [0.8,1.3]:"
              f"{'yes' if clause_a else 'NO'}; "
              f"ratio(64w)={r64w:.2f} >=2.0 and >= ratio(1w)={r1w:.2f}:"
              f"{'yes' if clause_b else 'NO'}; "
              f"ratio(64r,100%)={r64r:.2f} in [0.7,2.0]:"
              f"{'yes' if clause_c else 'NO'}; {elapsed:.1f}s")
    _verdict(5, ok, detail)


def test_criterion_6_opacity_proxy_bank_100k():
    wl = bank_workload(8, 12500, 64, seed=3)
    failures = []
    for system in ("tl2", "pot"):
        res = run_workload(system, wl, hang_timeout=120.0)
        if res.violations:
            failures.append(f"{system}: {len(res.violations)} snapshot "
                            f"violations")
        if sum(res.final_cells) != wl.invariant_total:
            failures.append(f"{system}: conservation broken")
        if res.stats.commits != 100000:
            failures.append(f"{system}: {res.stats.commits} commits")
    ok = not failures
    detail = ("tl2+pot, 100000 txns at 8 threads each: zero snapshot and "
              "conservation violations" + (f"; {failures}" if failures else ""))
    _verdict(6, ok, detail)


def test_criterion_7_single_fast_and_liveness():
    runs = []
    t0 = time.perf_counter()
    cases = [
        ("pot", spawn_example()),
        ("pot", early_stop_example()),
        ("pot", mixed_workload(8, 10, 16, seed=1, ragged=True)),
        ("pot-star", mixed_workload(8, 10, 16, seed=2, ragged=True)),
        ("pot", bench.make_workload("kv", threads=4, txns=40, seed=4)),
        ("pot-minus", bench.make_workload("bank", threads=4, txns=20, seed=5)),
    ]
    failures = []
    promoted_somewhere = False
    for system, wl in cases:
        try:
            res = run_workload(system, wl, jitter_seed=7,
                               jitter_probability=0.4, hang_timeout=30.0)
        except HangError as exc:
            failures.append(f"{system} on {wl.name} hung: {exc}")
            continue
        runs.append(res)
        if res.stats.max_concurrent_fast > 1:
            failures.append(f"{system} on {wl.name}: "
                            f"{res.stats.max_concurrent_fast} concurrent fast")
        if res.stats.max_concurrent_fast == 1 and res.stats.promotions >= 0:
            promoted_somewhere = True
    elapsed = time.perf_counter() - t0
    ok = not failures and promoted_somewhere and len(runs) == len(cases)
    detail = (f"{len(runs)} runs (spawns, early stops, ragged threads): "
              f"max concurrent fast = "
              f"{max(r.stats.max_concurrent_fast for r in runs)}, all "
              f"terminated in {elapsed:.1f}s"
              + (f"; {failures[:2]}" if failures else ""))
    _verdict(7, ok, detail)


def test_criterion_8_record_replay_and_truncation(tmp_path):
    wl_args = dict(name="mixgen", threads=4, txns=10, seed=6)
    wl = bench.make_workload(**wl_args)
    order_path = str(tmp_path / "recorded.order")
    recorded = bench.record_run(wl, order_path, system="tl2",
                                workload_args=wl_args, jitter_seed=2)
    replayed, meta = bench.replay_run_from(order_path, system="pot")
    digest_ok = (replayed.digest == recorded.digest == meta["digest"])

    lines = open(order_path).read().splitlines()
    dropped_thread, dropped_label = lines[-1].split("\t")
    with open(order_path, "w") as f:
        f.write("\n".join(lines[:-1]) + "\n")
    t0 = time.perf_counter()
    named = False
    timely = False
    try:
        bench.replay_run_from(order_path, system="pot", hang_timeout=10.0)
    except HangError as exc:
        waited = time.perf_counter() - t0
        timely = waited < 15.0
        failure = exc.report.get("first_failure") or exc.report
        named = (failure.get("thread") == dropped_thread
                 and failure.get("label") == dropped_label)
    ok = digest_ok and named and timely
    detail = (f"replayed digest {replayed.digest} == recorded; truncated log "
              f"reported missing slot ({dropped_thread}, {dropped_label}) "
              f"within timeout")
    _verdict(8, ok, detail)


# -- criterion 9 machinery ----------------------------------------------------

def _interleavings(counts):
    """All distinct merge orders of len(counts) step streams."""
    total = sum(counts)
    seq = []
    remaining = list(counts)

    def rec():
        if len(seq) == total:
            yield tuple(seq)
            return
        for tid, left in enumerate(remaining):
            if left:
                remaining[tid] -= 1
                seq.append(tid)
                yield from rec()
                seq.pop()
                remaining[tid] += 1

    yield from rec()


def _run_staged_schedule(schedule, scripts, steps, n_cells, initial):
    heap = VersionedHeap(n_cells, initial_cells=list(initial))
    txns = [Tl2Txn(heap) for _ in scripts]
    for k, t in enumerate(txns):
        t.start(f"t{k}")
    state = ["live"] * len(scripts)
    wvs = [0] * len(scripts)
    pos = [0] * len(scripts)
    for tid in schedule:
        if state[tid] != "live":
            continue
        txn = txns[tid]
        step = steps[tid][pos[tid]]
        pos[tid] += 1
        try:
            if step[0] == "op":
                run_ops(txn, (step[1],), n_cells, [])
            elif step[0] == "commit":
                txn.commit()
                state[tid] = "committed"
            elif txn.is_read_only:
                if step[0] == "publish":
                    txn.commit()
                    state[tid] = "committed"
            elif step[0] == "lock":
                txn.commit_lock_writes()
            elif step[0] == "reserve":
                wvs[tid] = txn.commit_reserve_version()
            elif step[0] == "validate":
                txn.commit_validate_reads()
            else:
                txn.commit_publish(wvs[tid])
                state[tid] = "committed"
        except TxnAbort:
            txn.release_locks()
            state[tid] = "aborted"
    committed = [k for k, s in enumerate(state) if s == "committed"]
    return list(heap.cells), committed


def _serial_states(scripts, committed, n_cells, initial):
    states = set()
    for perm in itertools.permutations(committed):
        cells = list(initial)
        for tid in perm:
            txn = SerialTxn(cells, str(tid))
            run_ops(txn, scripts[tid], n_cells, [])
            txn.apply()
        states.add(tuple(cells))
    return states


def _program_order_states(wl):
    """Final states of every serial execution respecting program order."""
    programs = [list(p.plans) for p in wl.programs]
    states = set()
    for merge in _interleavings([len(p) for p in programs]):
        cells = list(wl.initial_cells)
        taken = [0] * len(programs)
        for t in merge:
            plan = programs[t][taken[t]]
            taken[t] += 1
            txn = SerialTxn(cells, plan.label)
            try:
                run_ops(txn, plan.ops, wl.n_cells, [])
            except ExplicitAbort:
                continue
            txn.apply()
        states.add(tuple(cells))
    return states


def test_criterion_9_tl2_small_scale_serializability():
    scenarios = [
        # write skew shape: each reads the other's cell, full stage split
        ([(("r", 0), ("w", 1, 9)), (("r", 1), ("w", 0, 7))], 2, [1, 1]),
        # same-cell increments: lost updates would be non-serializable
        ([(("inc", 0, 1), ("inc", 0, 1)), (("inc", 0, 10),)], 2, [0, 0]),
        # reader vs writer: read-only snapshot across two cells
        ([(("r", 0), ("r", 1)), (("w", 0, 5), ("w", 1, 6))], 2, [1, 2]),
    ]
    schedules = 0
    bad = []
    for scripts, n_cells, initial in scenarios:
        steps = [[("op", op) for op in ops]
                 + [("lock",), ("reserve",), ("validate",), ("publish",)]
                 for ops in scripts]
        for schedule in _interleavings([len(s) for s in steps]):
            schedules += 1
            cells, committed = _run_staged_schedule(
                schedule, scripts, steps, n_cells, initial)
            if tuple(cells) not in _serial_states(scripts, committed,
                                                  n_cells, initial):
                bad.append((scripts, schedule, cells, committed))

    # three transactions, coarse commit step, still exhaustive
    scripts3 = [(("inc", 0, 1),), (("inc", 0, 2), ("w", 1, 5)),
                (("r", 1), ("inc", 2, 3))]
    steps3 = [[("op", op) for op in ops] + [("commit",)] for ops in scripts3]
    for schedule in _interleavings([len(s) for s in steps3]):
        schedules += 1
        cells, committed = _run_staged_schedule(
            schedule, scripts3, steps3, 4, [0, 0, 0, 0])
        if tuple(cells) not in _serial_states(scripts3, committed,
                                              4, [0, 0, 0, 0]):
            bad.append((scripts3, schedule, cells, committed))

    # threaded tiny runs checked against every program-order merge
    threaded = 0
    for seed in range(6):
        wl = mixed_workload(3, 3, 4, seed=seed, ops_per_txn=2)
        legal = _program_order_states(wl)
        res = run_workload("tl2", wl, jitter_seed=seed,
                           jitter_probability=0.5)
        threaded += 1
        if tuple(res.final_cells) not in legal:
            bad.append(("threaded", seed, res.final_cells))

    ok = not bad
    detail = (f"{schedules} exhaustive staged schedules + {threaded} threaded "
              f"runs vs permutation enumeration, all serializable"
              + (f"; first counterexample: {bad[0]}" if bad else ""))
    _verdict(9, ok, detail)
