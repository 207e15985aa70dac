"""Command line interface.

Subcommands: run, check-determinism, microbench, record, replay.  Reports
are key=value lines on stdout (and under --out as files); exit status 0
means every check passed.  Figures are rendered only with --plot.
"""
from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from . import bench
from .errors import HangError
from .runtime import SYSTEMS

ORDERED_CHOICES = ("pot", "pot-minus", "pot-star", "pogl")


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--workload", choices=bench.WORKLOAD_NAMES, default="kv")
    g.add_argument("--threads", type=int, default=4)
    g.add_argument("--txns", type=int, default=200,
                   help="transactions per thread")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--cells", type=int, default=0,
                   help="heap size (0 = workload default)")
    g.add_argument("--accesses", type=int, default=4, help="kv accesses per txn")
    g.add_argument("--read-fraction", type=float, default=0.5,
                   help="kv read share of accesses")
    g.add_argument("--hot-cells", type=int, default=4, help="mixgen hot set size")
    g.add_argument("--ops-per-txn", type=int, default=6, help="mixgen ops per txn")
    g.add_argument("--abort-rate", type=float, default=0.0,
                   help="mixgen no-retry abort probability")
    g.add_argument("--ragged", action="store_true",
                   help="mixgen: uneven transaction counts per thread")


def _add_exec_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("execution")
    g.add_argument("--jitter-seed", type=int, default=None,
                   help="inject seeded scheduling delays")
    g.add_argument("--jitter-probability", type=float, default=0.2)
    g.add_argument("--spin-budget", type=int, default=1000,
                   help="gate spin polls before parking")
    g.add_argument("--hang-timeout", type=float, default=30.0)
    g.add_argument("--no-gate", action="store_true",
                   help="disable the commit gate (breaks ordering; for "
                        "demonstrating that the order checker catches it)")


def _workload_args(ns: argparse.Namespace) -> dict:
    return {
        "name": ns.workload, "threads": ns.threads, "txns": ns.txns,
        "seed": ns.seed, "cells": ns.cells, "accesses": ns.accesses,
        "read_fraction": ns.read_fraction, "hot_cells": ns.hot_cells,
        "ops_per_txn": ns.ops_per_txn, "abort_rate": ns.abort_rate,
        "ragged": ns.ragged,
    }


def _exec_kwargs(ns: argparse.Namespace) -> dict:
    return {
        "jitter_seed": ns.jitter_seed,
        "jitter_probability": ns.jitter_probability,
        "spin_budget": ns.spin_budget,
        "hang_timeout": ns.hang_timeout,
        "gate_enabled": not ns.no_gate,
    }


def _emit(lines: list[str], out_dir: Optional[str], filename: str) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, filename), "w", encoding="utf-8") as f:
            f.write(text)


def _cmd_run(ns: argparse.Namespace) -> int:
    wl = bench.make_workload(**_workload_args(ns))
    try:
        res, problems = bench.run_once(ns.system, wl, **_exec_kwargs(ns))
    except HangError as exc:
        sys.stdout.write(f"ok=false\nhang={exc}\n")
        return 2
    lines = bench.run_report_lines(res, problems)
    _emit(lines, ns.out, "report.txt")
    if ns.out:
        bench.save_commit_log(os.path.join(ns.out, "commits.tsv"), res)
    if ns.plot:
        from . import plotting
        out = ns.out or "."
        os.makedirs(out, exist_ok=True)
        path = plotting.run_figure(res, os.path.join(out, "run.png"))
        sys.stdout.write(f"figure={path}\n")
    return 0 if not problems else 1


def _cmd_check_determinism(ns: argparse.Namespace) -> int:
    wl = bench.make_workload(**_workload_args(ns))
    rep = bench.check_determinism(
        wl, system=ns.system, runs=ns.runs,
        base_jitter_seed=ns.base_jitter_seed,
        jitter_probability=ns.jitter_probability,
        spin_budget=ns.spin_budget, hang_timeout=ns.hang_timeout,
        gate_enabled=not ns.no_gate)
    _emit(rep.lines(), ns.out, "determinism.txt")
    return 0 if rep.ok else 1


def _cmd_microbench(ns: argparse.Namespace) -> int:
    accesses = [int(x) for x in ns.accesses.split(",") if x]
    fractions = [float(x) for x in ns.read_fractions.split(",") if x]
    rep = bench.microbench(accesses=accesses, read_fractions=fractions,
                           txns=ns.txns, n_cells=ns.cells or 128,
                           seed=ns.seed, reps=ns.reps, passes=ns.passes)
    _emit(rep.lines(), ns.out, "microbench.txt")
    if ns.plot:
        from . import plotting
        out = ns.out or "."
        os.makedirs(out, exist_ok=True)
        path = plotting.microbench_figure(rep, os.path.join(out, "microbench.png"))
        sys.stdout.write(f"figure={path}\n")
    return 0


def _cmd_record(ns: argparse.Namespace) -> int:
    args = _workload_args(ns)
    wl = bench.make_workload(**args)
    res = bench.record_run(wl, ns.order, system=ns.system,
                           workload_args=args, **_exec_kwargs(ns))
    lines = bench.run_report_lines(res)
    lines.append(f"order_file={ns.order}")
    _emit(lines, ns.out, "record.txt")
    return 0


def _cmd_replay(ns: argparse.Namespace) -> int:
    try:
        res, meta = bench.replay_run_from(ns.order, system=ns.system,
                                          hang_timeout=ns.hang_timeout)
    except HangError as exc:
        sys.stdout.write("ok=false\n")
        sys.stdout.write(f"hang={exc}\n")
        for key, value in sorted((exc.report or {}).items()):
            sys.stdout.write(f"hang.{key}={value}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    lines = bench.replay_report_lines(res, meta, ns.order)
    _emit(lines, ns.out, "replay.txt")
    return 0 if "ok=true" in lines else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="potstm",
        description="Preordered software transactional memory harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one workload and report")
    p.add_argument("--system", choices=SYSTEMS, default="pot")
    _add_workload_flags(p)
    _add_exec_flags(p)
    p.add_argument("--out", default=None, help="directory for report files")
    p.add_argument("--plot", action="store_true", help="render figures")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check-determinism",
                       help="repeated jittered runs vs the serial oracle")
    p.add_argument("--system", choices=ORDERED_CHOICES, default="pot")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--base-jitter-seed", type=int, default=0)
    _add_workload_flags(p)
    _add_exec_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_check_determinism)

    p = sub.add_parser("microbench",
                       help="single-thread tl2-vs-pot timing table")
    p.add_argument("--accesses", default="0,1,2,4,8,16,32,64",
                   help="comma separated access counts")
    p.add_argument("--read-fractions", default="0,0.5,1",
                   help="comma separated read fractions")
    p.add_argument("--txns", type=int, default=3000)
    p.add_argument("--cells", type=int, default=128)
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--passes", type=int, default=1,
                   help="grid repetitions pooled per configuration")
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_microbench)

    p = sub.add_parser("record", help="run once and save the commit order")
    p.add_argument("--system", choices=SYSTEMS, default="tl2")
    p.add_argument("--order", required=True, help="output order file")
    _add_workload_flags(p)
    _add_exec_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_record)

    p = sub.add_parser("replay", help="re-execute a recorded commit order")
    p.add_argument("--system", choices=ORDERED_CHOICES, default="pot")
    p.add_argument("--order", required=True, help="recorded order file")
    p.add_argument("--hang-timeout", type=float, default=10.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_replay)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
