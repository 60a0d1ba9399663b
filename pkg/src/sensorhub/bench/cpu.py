"""Server CPU sampling via OS process accounting.

Percent is (process CPU time delta) / (wall-clock delta) x 100, normalized to
a single core, so a saturated spin loop reads near 100 even on a many-core
host. psutil's NoSuchProcess/AccessDenied propagate to the caller.
"""

from __future__ import annotations

import threading
import time
from datetime import datetime, timezone

import psutil


def _cpu_seconds(proc: psutil.Process) -> float:
    times = proc.cpu_times()
    return times.user + times.system


def sample_cpu(pid: int, interval_ms: int = 250, duration_ms: int = 1000) -> list:
    """Sample one process for a fixed duration; returns [(UTC instant, percent)]
    with timestamps monotone in time and roughly duration/interval entries."""
    proc = psutil.Process(pid)
    samples: list = []
    last_wall = time.perf_counter()
    last_cpu = _cpu_seconds(proc)
    deadline = last_wall + duration_ms / 1000.0
    while True:
        now = time.perf_counter()
        remaining = deadline - now
        if remaining <= 0:
            break
        time.sleep(min(interval_ms / 1000.0, remaining))
        wall = time.perf_counter()
        cpu = _cpu_seconds(proc)
        percent = (cpu - last_cpu) / (wall - last_wall) * 100.0
        samples.append((datetime.now(timezone.utc), percent))
        last_wall, last_cpu = wall, cpu
    return samples


class CpuSampler:
    """Background sampler running for the duration of one benchmark step."""

    def __init__(self, pid: int, interval_ms: int = 250):
        self._proc = psutil.Process(pid)  # raises NoSuchProcess up front
        self._interval = interval_ms / 1000.0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self.samples: list = []

    def _run(self):
        last_wall = time.perf_counter()
        last_cpu = _cpu_seconds(self._proc)
        while not self._stop.wait(self._interval):
            try:
                cpu = _cpu_seconds(self._proc)
            except psutil.NoSuchProcess:
                return
            wall = time.perf_counter()
            percent = (cpu - last_cpu) / (wall - last_wall) * 100.0
            self.samples.append((datetime.now(timezone.utc), percent))
            last_wall, last_cpu = wall, cpu

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc_info):
        self._stop.set()
        self._thread.join(timeout=5)
        return False
