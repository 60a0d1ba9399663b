"""Report rendering: raw JSON for re-rendering, CSV for analysis, SVG plots.

CSV columns are fixed: protocol, mode, step, requests, mean_ms, median_ms,
p95_ms, total_bytes, mean_bytes, mean_cpu_pct, max_cpu_pct. When no CPU was
sampled the two CPU cells are left empty; absence is not zero.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from pathlib import Path

from .runner import BenchmarkReport

CSV_COLUMNS = ("protocol", "mode", "step", "requests", "mean_ms", "median_ms",
               "p95_ms", "total_bytes", "mean_bytes", "mean_cpu_pct", "max_cpu_pct")


def percentile_95(values: list) -> float:
    """Nearest-rank 95th percentile; equals the max for fewer than 20 samples."""
    ordered = sorted(values)
    rank = max(1, math.ceil(0.95 * len(ordered)))
    return ordered[rank - 1]


def save_raw(report: BenchmarkReport, path):
    Path(path).write_text(json.dumps(report.as_dict(), indent=2) + "\n",
                          encoding="utf-8")


def load_raw(path) -> BenchmarkReport:
    return BenchmarkReport.from_dict(
        json.loads(Path(path).read_text(encoding="utf-8")))


def write_csv(report: BenchmarkReport, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for result in report.results:
            if result.latencies_ms:
                mean_ms = f"{statistics.fmean(result.latencies_ms):.3f}"
                median_ms = f"{statistics.median(result.latencies_ms):.3f}"
                p95_ms = f"{percentile_95(result.latencies_ms):.3f}"
                mean_bytes = f"{result.total_bytes / result.requests:.1f}"
            else:
                mean_ms = median_ms = p95_ms = mean_bytes = ""
            if result.cpu_samples:
                percents = [p for _, p in result.cpu_samples]
                mean_cpu = f"{statistics.fmean(percents):.1f}"
                max_cpu = f"{max(percents):.1f}"
            else:
                mean_cpu = max_cpu = ""  # not sampled; an empty cell, not 0
            writer.writerow([result.protocol, result.mode, result.step,
                             result.requests, mean_ms, median_ms, p95_ms,
                             result.total_bytes, mean_bytes, mean_cpu, max_cpu])


def write_plots(report: BenchmarkReport, out_dir) -> list:
    """latency-vs-step, bytes-vs-step, and cpu-vs-time SVGs, one series per
    protocol; returns the written paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    protocols: dict = {}
    for result in report.results:
        protocols.setdefault(result.protocol, []).append(result)
    written = []

    def series_plot(filename, ylabel, title, value_of):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for protocol, results in protocols.items():
            points = [(r.step, value_of(r)) for r in results if r.latencies_ms]
            if points:
                ax.plot([p[0] for p in points], [p[1] for p in points],
                        marker="o", label=protocol)
        ax.set_xlabel("step (observations requested)")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        path = out / filename
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)

    series_plot("latency_vs_step.svg", "mean latency (ms)",
                "Response time by query size",
                lambda r: statistics.fmean(r.latencies_ms))
    series_plot("bytes_vs_step.svg", "total body bytes",
                "Response size by query size", lambda r: r.total_bytes)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    any_samples = False
    for protocol, results in protocols.items():
        samples = [s for r in results for s in r.cpu_samples]
        if not samples:
            continue
        any_samples = True
        t0 = samples[0][0]
        ax.plot([(t - t0).total_seconds() for t, _ in samples],
                [p for _, p in samples], label=protocol)
    ax.set_xlabel("time into sweep (s)")
    ax.set_ylabel("server CPU (% of one core)")
    ax.set_title("Server CPU during sweep")
    ax.grid(True, alpha=0.3)
    if any_samples:
        ax.legend()
    else:
        ax.text(0.5, 0.5, "no CPU samples (run with server-pid set)",
                ha="center", va="center", transform=ax.transAxes)
    path = out / "cpu_vs_time.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    written.append(path)
    return written
