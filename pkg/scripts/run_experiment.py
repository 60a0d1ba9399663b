#!/usr/bin/env python3
"""One-command local reproduction of the scaling experiment.

Starts a hub in-process on an ephemeral port, seeds 1 datastream x 1000
observations, sweeps all three protocols over the default steps, and writes
raw.json, report.csv, and the three SVG plots. CPU is sampled from this very
process since server and script share it.

    python scripts/run_experiment.py [--out bench-out] [--steps 1,100,1000]
"""

import argparse
import os
import sys
import threading
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sensorhub.bench.config import DEFAULT_STEPS, ExperimentConfig
from sensorhub.bench.report import save_raw, write_csv, write_plots
from sensorhub.bench.runner import run_scaling_experiment, seed_dataset
from sensorhub.server import SensorHubApp, ServiceConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="bench-out")
    parser.add_argument("--steps", default=",".join(str(s) for s in DEFAULT_STEPS))
    parser.add_argument("--repetitions", type=int, default=5)
    parser.add_argument("--mode", default="one-request-n-items")
    args = parser.parse_args()

    app = SensorHubApp(ServiceConfig(bind="127.0.0.1:0"))
    threading.Thread(target=app.serve_forever, daemon=True).start()
    print(f"hub listening at {app.base_url}")
    try:
        config = ExperimentConfig(
            target=app.base_url,
            steps=tuple(int(s) for s in args.steps.split(",")),
            mode=args.mode, repetitions=args.repetitions,
            server_pid=os.getpid())
        summary = seed_dataset(config, force=True)
        print(f"seeded {summary['observations']} observations")
        report = run_scaling_experiment(config)
    finally:
        app.shutdown()
        app.server_close()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_raw(report, out / "raw.json")
    write_csv(report, out / "report.csv")
    write_plots(report, out)
    print(f"wrote {out}/raw.json, {out}/report.csv, and plots")
    for result in report.results:
        mean = sum(result.latencies_ms) / len(result.latencies_ms)
        print(f"  {result.protocol:13s} step {result.step:5d}: "
              f"{mean:8.2f} ms mean, {result.total_bytes:9d} body bytes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
