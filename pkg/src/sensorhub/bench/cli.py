"""Benchmark command line:

    sensorhub-bench seed --config bench.conf [--force]
    sensorhub-bench run --config bench.conf [--out DIR] [--svg]
    sensorhub-bench report raw.json [--csv] [--svg] [--out DIR]

`run` always writes raw.json and report.csv under the output directory;
`report` re-renders either format from a saved raw.json.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .report import load_raw, save_raw, write_csv, write_plots
from .runner import BenchError, run_scaling_experiment, seed_dataset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensorhub-bench",
                                     description="scaling benchmark for the sensing hub")
    sub = parser.add_subparsers(dest="command", required=True)

    seed_p = sub.add_parser("seed", help="populate the target with a deterministic dataset")
    seed_p.add_argument("--config", help="experiment config file (defaults apply if omitted)")
    seed_p.add_argument("--target", help="override the target base URL")
    seed_p.add_argument("--force", action="store_true",
                        help="reset a non-empty target before seeding")

    run_p = sub.add_parser("run", help="run the scaling sweep")
    run_p.add_argument("--config", help="experiment config file (defaults apply if omitted)")
    run_p.add_argument("--target", help="override the target base URL")
    run_p.add_argument("--out", default="bench-out", help="output directory (default bench-out)")
    run_p.add_argument("--svg", action="store_true", help="also render SVG plots")

    report_p = sub.add_parser("report", help="re-render outputs from a saved raw.json")
    report_p.add_argument("raw", help="raw.json written by a previous run")
    report_p.add_argument("--csv", action="store_true", help="write report.csv")
    report_p.add_argument("--svg", action="store_true", help="write SVG plots")
    report_p.add_argument("--out", default=None,
                          help="output directory (default: next to the raw file)")
    return parser


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "target", None):
        config = ExperimentConfig(**{**config.as_dict(), "target": args.target,
                                     "protocols": config.protocols,
                                     "steps": config.steps})
    return config


def cmd_seed(args) -> int:
    summary = seed_dataset(_config(args), force=args.force)
    print(f"seeded {summary['things']} things, {summary['datastreams']} datastreams, "
          f"{summary['observations']} observations")
    return 0


def cmd_run(args) -> int:
    config = _config(args)
    report = run_scaling_experiment(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw_path = out / "raw.json"
    csv_path = out / "report.csv"
    save_raw(report, raw_path)
    write_csv(report, csv_path)
    written = [raw_path, csv_path]
    if args.svg:
        written += write_plots(report, out)
    aborted = [r for r in report.results if r.aborted]
    for result in aborted:
        print(f"warning: {result.protocol} step {result.step} aborted "
              f"(statuses {result.statuses})", file=sys.stderr)
    print("\n".join(str(p) for p in written))
    return 1 if aborted else 0


def cmd_report(args) -> int:
    report = load_raw(args.raw)
    out = Path(args.out) if args.out else Path(args.raw).resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.csv or not args.svg:  # default to CSV when nothing was requested
        csv_path = out / "report.csv"
        write_csv(report, csv_path)
        written.append(csv_path)
    if args.svg:
        written += write_plots(report, out)
    print("\n".join(str(p) for p in written))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "seed":
            return cmd_seed(args)
        if args.command == "run":
            return cmd_run(args)
        return cmd_report(args)
    except (ConfigError, BenchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
