"""Figure rendering for bench reports.  Imported lazily by the CLI so that
headless runs without --plot never touch matplotlib."""
from __future__ import annotations

from .bench import MicrobenchReport
from .runtime import RunResult


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def microbench_figure(report: MicrobenchReport, path: str) -> str:
    """Speedup-over-baseline curves, one line per read fraction."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    fractions = sorted({r.read_fraction for r in report.rows})
    for rf in fractions:
        rows = sorted((r for r in report.rows if r.read_fraction == rf),
                      key=lambda r: r.accesses)
        xs = [r.accesses for r in rows]
        ys = [r.ratio for r in rows]
        ax.plot(xs, ys, marker="o", label=f"{int(rf * 100)}% reads")
    ax.axhline(1.0, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xlabel("accesses per transaction")
    ax.set_ylabel("baseline time / preordered time")
    ax.set_title(f"Fast-transaction speedup ({report.txns} txns, "
                 f"median of {report.reps})")
    if max(r.accesses for r in report.rows) > 8:
        ax.set_xscale("symlog", base=2, linthresh=1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def run_figure(res: RunResult, path: str) -> str:
    """Commit/abort/promotion counts for a single run."""
    plt = _pyplot()
    st = res.stats
    labels = ["commits", "no-retry"]
    values = [st.commits, st.no_retry_commits]
    for kind in sorted(st.aborts):
        labels.append(f"abort:{kind}")
        values.append(st.aborts[kind])
    labels.append("promotions")
    values.append(st.promotions)
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    bars = ax.bar(range(len(values)), values, color="steelblue")
    ax.bar_label(bars, padding=2)
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
    ax.set_ylabel("count")
    ax.set_title(f"{res.system} on {res.workload} "
                 f"({st.threads} threads, {res.wall_seconds:.3f}s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
