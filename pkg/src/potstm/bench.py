"""Benchmark and verification drivers behind the CLI.

Four entry points: ``check_determinism`` (repeated runs under schedule
jitter, compared against the serial oracle), ``microbench`` (single-thread
counter-array timing of the preordered STM against the baseline),
``record_run``/``replay_run`` (commit-order capture and reproduction), and
the plain ``run_once``.  Reports are lists of ``key=value`` lines so the CLI
can print them and tests can parse them.
"""
from __future__ import annotations

import gc
import json
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .oracle import run_serial
from .runtime import ORDERED_SYSTEMS, RunResult, run_workload, verify_commit_order
from .sequencer import load_order, save_order, visible_schedule
from .workloads import Workload, bank_workload, counter_workload, mixed_workload

WORKLOAD_NAMES = ("kv", "bank", "mixgen")


def make_workload(name: str, *, threads: int, txns: int, seed: int,
                  cells: int = 0, accesses: int = 4, read_fraction: float = 0.5,
                  hot_cells: int = 4, ops_per_txn: int = 6,
                  abort_rate: float = 0.0, ragged: bool = False) -> Workload:
    """Build one of the named workload families with shared knobs.

    ``cells=0`` picks a family-appropriate default size.
    """
    if name == "kv":
        return counter_workload(threads, txns, cells or 128, accesses,
                                read_fraction, seed)
    if name == "bank":
        return bank_workload(threads, txns, cells or 64, seed)
    if name == "mixgen":
        return mixed_workload(threads, txns, cells or 32, seed, hot_cells,
                              ops_per_txn, abort_rate, ragged)
    raise ValueError(f"unknown workload {name!r}; expected one of {WORKLOAD_NAMES}")


# -- single run ---------------------------------------------------------------


def run_once(system: str, workload: Workload, **kwargs) -> tuple[RunResult, list[str]]:
    """Run a workload once and return (result, problem list).

    Problems cover the ordered-commit contract (for ordered systems) and
    in-transaction snapshot violations (for every system).
    """
    record_trace = kwargs.pop("record_trace", system in ORDERED_SYSTEMS)
    res = run_workload(system, workload, record_trace=record_trace, **kwargs)
    problems: list[str] = []
    if system in ORDERED_SYSTEMS and res.trace is not None:
        problems.extend(verify_commit_order(res))
    for thread_label, expected, got in res.violations:
        problems.append(
            f"audit in {thread_label!r} read total {got}, expected {expected}")
    return res, problems


def run_report_lines(res: RunResult, problems: Sequence[str] = ()) -> list[str]:
    st = res.stats
    lines = [
        f"system={res.system}",
        f"workload={res.workload}",
        f"threads={st.threads}",
        f"commits={st.commits}",
        f"no_retry_commits={st.no_retry_commits}",
        f"attempts={st.attempts_total}",
        f"aborts_total={st.aborts_total}",
    ]
    for kind in sorted(st.aborts):
        lines.append(f"aborts.{kind}={st.aborts[kind]}")
    lines += [
        f"promotions={st.promotions}",
        f"max_concurrent_fast={st.max_concurrent_fast}",
        f"wait_polls_total={st.wait_polls_total}",
        f"wait_polls_max={st.wait_polls_max}",
        f"violations={len(res.violations)}",
        f"wall_seconds={res.wall_seconds:.6f}",
        f"digest={res.digest}",
        f"ok={'true' if not problems else 'false'}",
    ]
    for p in problems:
        lines.append(f"problem={p}")
    return lines


def save_commit_log(path: str, res: RunResult) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# sn\tthread\tlabel\tmode\tattempts\twait_cycles\n")
        for r in res.records:
            f.write(f"{r.sn}\t{r.thread}\t{r.label}\t{r.mode}"
                    f"\t{r.attempts}\t{r.wait_cycles}\n")


# -- determinism --------------------------------------------------------------


@dataclass
class DeterminismReport:
    workload: str
    system: str
    runs: int
    oracle_digest: str
    digests: list[str] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)
    first_divergence: Optional[dict] = None
    wall_seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return (not self.problems
                and all(d == self.oracle_digest for d in self.digests))

    def lines(self) -> list[str]:
        out = [
            f"check=determinism",
            f"workload={self.workload}",
            f"system={self.system}",
            f"runs={self.runs}",
            f"oracle_digest={self.oracle_digest}",
            f"distinct_digests={len(set(self.digests))}",
            f"ok={'true' if self.ok else 'false'}",
            f"wall_seconds={self.wall_seconds:.3f}",
        ]
        d = self.first_divergence
        if d is not None:
            out.append(
                "first_divergence=run {run} position {position}: expected "
                "{expected}, got {got}".format(**d))
        out.extend(f"problem={p}" for p in self.problems)
        return out


def check_determinism(workload: Workload, system: str = "pot", runs: int = 20,
                      base_jitter_seed: int = 0, jitter_probability: float = 0.25,
                      jitter_max_delay: float = 0.0002, spin_budget: int = 1000,
                      hang_timeout: float = 30.0,
                      gate_enabled: bool = True) -> DeterminismReport:
    """Run a workload ``runs`` times under distinct jitter seeds and compare
    every commit order and digest against the serial oracle."""
    t0 = time.perf_counter()
    oracle = run_serial(workload)
    expected_pairs = visible_schedule(oracle.schedule)
    rep = DeterminismReport(workload.name, system, runs, oracle.digest)
    for k in range(runs):
        res = run_workload(system, workload, jitter_seed=base_jitter_seed + k,
                           jitter_probability=jitter_probability,
                           jitter_max_delay=jitter_max_delay,
                           spin_budget=spin_budget, hang_timeout=hang_timeout,
                           record_trace=True, gate_enabled=gate_enabled)
        rep.digests.append(res.digest)
        for p in verify_commit_order(res):
            rep.problems.append(f"run {k}: {p}")
        got_pairs = res.visible_order()
        if got_pairs != expected_pairs and rep.first_divergence is None:
            n = min(len(got_pairs), len(expected_pairs))
            pos = next((i for i in range(n) if got_pairs[i] != expected_pairs[i]), n)
            exp = expected_pairs[pos] if pos < len(expected_pairs) else "<end>"
            got = got_pairs[pos] if pos < len(got_pairs) else "<end>"
            rep.first_divergence = {
                "run": k, "position": pos + 1, "expected": exp, "got": got,
            }
            rep.problems.append(
                f"run {k}: commit order diverges at position {pos + 1}: "
                f"expected {exp}, got {got}")
        if res.violations:
            rep.problems.append(
                f"run {k}: {len(res.violations)} snapshot violations")
        if res.digest != oracle.digest and got_pairs == expected_pairs:
            rep.problems.append(
                f"run {k}: labels match the oracle but final cells differ "
                f"(digest {res.digest} vs {oracle.digest})")
    rep.wall_seconds = time.perf_counter() - t0
    return rep


def oracle_equivalence(workload: Workload,
                       systems: Sequence[str] = ORDERED_SYSTEMS,
                       **kwargs) -> tuple[bool, list[str]]:
    """One run per ordered system; every digest must equal the oracle's."""
    oracle = run_serial(workload)
    lines = [f"oracle_digest={oracle.digest}"]
    ok = True
    for system in systems:
        res = run_workload(system, workload, **kwargs)
        match = res.digest == oracle.digest
        ok = ok and match
        lines.append(f"digest.{system}={res.digest}"
                     + ("" if match else " (MISMATCH)"))
    lines.append(f"ok={'true' if ok else 'false'}")
    return ok, lines


# -- microbenchmark -----------------------------------------------------------


@dataclass
class MicrobenchRow:
    accesses: int
    read_fraction: float
    tl2_us: float
    pot_us: float
    ratio: float
    pot_fast_fraction: float


@dataclass
class MicrobenchReport:
    rows: list[MicrobenchRow]
    txns: int
    n_cells: int
    seed: int
    reps: int
    wall_seconds: float

    def row(self, accesses: int, read_fraction: float) -> MicrobenchRow:
        for r in self.rows:
            if r.accesses == accesses and r.read_fraction == read_fraction:
                return r
        raise KeyError((accesses, read_fraction))

    def lines(self) -> list[str]:
        out = [
            "check=microbench",
            f"txns={self.txns}",
            f"cells={self.n_cells}",
            f"seed={self.seed}",
            f"reps={self.reps}",
            f"wall_seconds={self.wall_seconds:.3f}",
        ]
        for r in self.rows:
            tag = f"a{r.accesses}.rf{int(r.read_fraction * 100)}"
            out.append(f"tl2_us.{tag}={r.tl2_us:.2f}")
            out.append(f"pot_us.{tag}={r.pot_us:.2f}")
            out.append(f"ratio.{tag}={r.ratio:.3f}")
            out.append(f"fast_fraction.{tag}={r.pot_fast_fraction:.3f}")
        return out


def microbench(accesses: Sequence[int] = (0, 1, 2, 4, 8, 16, 32, 64),
               read_fractions: Sequence[float] = (0.0, 0.5, 1.0),
               txns: int = 3000, n_cells: int = 128, seed: int = 5,
               reps: int = 5, passes: int = 1,
               hang_timeout: float = 120.0) -> MicrobenchReport:
    """Single-thread timing of tl2 vs pot over the counter-array workload.

    Per configuration: one discarded warmup pair, then ``reps`` timed pairs
    per pass, with the two systems back to back and the order alternated
    pair by pair, so slow machine phases and load ramps hit both sides
    roughly equally.  ``passes`` repeats the whole grid and pools the pairs:
    samples of one configuration then sit far apart in time, which is the
    only defense against background-load bursts that outlast a single
    configuration's measurement window.  The reported ratio is the median of
    the per-pair ratios; a burst that lands on one pair moves that pair,
    not the epoch.  Garbage collection is paused around the timed region; it
    would otherwise fire at arbitrary points and dominate the short runs.
    """
    t0 = time.perf_counter()
    gc_was_enabled = gc.isenabled()
    gc.disable()
    configs = [(acc, rf) for rf in read_fractions for acc in accesses]
    samples: dict[tuple[int, float], dict[str, list]] = {
        c: {"tl2": [], "pot": [], "ratio": [], "fast": 0, "commits": 0}
        for c in configs}
    try:
        for p in range(passes):
            for acc, rf in configs:
                wl = counter_workload(1, txns, n_cells, acc, rf, seed)
                if p == 0:
                    run_workload("tl2", wl, hang_timeout=hang_timeout)
                    run_workload("pot", wl, hang_timeout=hang_timeout)
                cell = samples[(acc, rf)]
                for k in range(reps):
                    if k & 1:
                        rp = run_workload("pot", wl,
                                          hang_timeout=hang_timeout)
                        r2 = run_workload("tl2", wl,
                                          hang_timeout=hang_timeout)
                    else:
                        r2 = run_workload("tl2", wl,
                                          hang_timeout=hang_timeout)
                        rp = run_workload("pot", wl,
                                          hang_timeout=hang_timeout)
                    cell["tl2"].append(r2.wall_seconds)
                    cell["pot"].append(rp.wall_seconds)
                    cell["ratio"].append(r2.wall_seconds / rp.wall_seconds)
                    cell["commits"] += rp.stats.commits
                    cell["fast"] += sum(1 for r in rp.records
                                        if r.mode in ("fast", "fast-nr"))
    finally:
        if gc_was_enabled:
            gc.enable()
    rows: list[MicrobenchRow] = []
    for acc, rf in configs:
        cell = samples[(acc, rf)]
        rows.append(MicrobenchRow(
            accesses=acc, read_fraction=rf,
            tl2_us=statistics.median(cell["tl2"]) / txns * 1e6,
            pot_us=statistics.median(cell["pot"]) / txns * 1e6,
            ratio=statistics.median(cell["ratio"]),
            pot_fast_fraction=(cell["fast"] / cell["commits"]
                               if cell["commits"] else 0.0)))
    return MicrobenchReport(rows, txns, n_cells, seed, reps,
                            time.perf_counter() - t0)


# -- record / replay ----------------------------------------------------------


def serialization_order(res: RunResult) -> list[tuple[str, str]]:
    """The run's application-visible serialization as (thread, label) pairs.

    For the baseline, read-only transactions share their snapshot version
    with the writer that produced it and serialize after it, so ties sort
    writer first.  Ordered systems already have unique slot numbers.
    """
    recs = [r for r in res.records if r.mode != "stop"]
    if res.system == "tl2":
        recs.sort(key=lambda r: (r.sn, 0 if r.mode == "tl2" else 1))
    return [(r.thread, r.label) for r in recs]


def record_run(workload: Workload, order_path: str, system: str = "tl2",
               workload_args: Optional[dict] = None, **kwargs) -> RunResult:
    """Run once and save the commit order plus a sidecar metadata file.

    workload_args, when given, are the make_workload() kwargs that produced
    the workload; replay_run_from uses them to rebuild it.
    """
    res = run_workload(system, workload, **kwargs)
    order = serialization_order(res)
    save_order(order_path, order)
    meta = {
        "workload": workload.name,
        "system": system,
        "digest": res.digest,
        "entries": len(order),
        "n_cells": workload.n_cells,
    }
    if workload_args is not None:
        meta["workload_args"] = dict(workload_args)
    with open(order_path + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    return res


def replay_run(workload: Workload, order_path: str, system: str = "pot",
               hang_timeout: float = 10.0, **kwargs) -> tuple[RunResult, Optional[dict]]:
    """Re-execute a recorded order; returns (result, recorded metadata)."""
    order = load_order(order_path)
    meta: Optional[dict] = None
    try:
        with open(order_path + ".meta.json", encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError:
        pass
    res = run_workload(system, workload, replay_order=order,
                       hang_timeout=hang_timeout, **kwargs)
    return res, meta


def replay_run_from(order_path: str, system: str = "pot",
                    hang_timeout: float = 10.0,
                    **kwargs) -> tuple[RunResult, Optional[dict]]:
    """Replay using only the order file; the workload is rebuilt from the
    sidecar metadata written by record_run."""
    with open(order_path + ".meta.json", encoding="utf-8") as f:
        meta = json.load(f)
    args = meta.get("workload_args")
    if args is None:
        raise FileNotFoundError(
            f"{order_path}.meta.json has no workload_args; "
            "pass the workload explicitly via replay_run()")
    workload = make_workload(**args)
    return replay_run(workload, order_path, system=system,
                      hang_timeout=hang_timeout, **kwargs)


def replay_report_lines(res: RunResult, meta: Optional[dict],
                        order_path: str) -> list[str]:
    lines = [
        "check=replay",
        f"order_file={order_path}",
        f"replayed_system={res.system}",
        f"commits={res.stats.commits}",
        f"digest={res.digest}",
    ]
    if meta is not None:
        match = res.digest == meta.get("digest")
        lines.append(f"recorded_digest={meta.get('digest')}")
        lines.append(f"recorded_system={meta.get('system')}")
        lines.append(f"ok={'true' if match else 'false'}")
    else:
        lines.append("recorded_digest=<missing metadata>")
        lines.append("ok=unknown")
    return lines
