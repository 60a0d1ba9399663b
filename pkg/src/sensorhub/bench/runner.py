"""Dataset seeding and the scaling sweep itself.

The seeded population is deterministic: station procedures are registered
over the XML endpoint, then observations are inserted with timestamps on a
fixed one-minute grid starting 2020-04-01T00:00:00Z and results drawn from a
seeded RNG. That makes response bodies byte-identical across runs, so size
columns can be compared exactly.

A sweep measures, per protocol and step s, either one request returning s
observations (default) or s requests returning one observation each. Latency
is wall-clock from issuing the request to the last body byte read.
"""

from __future__ import annotations

import random
import socket
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from time import perf_counter

import requests

from .config import ExperimentConfig
from .cpu import CpuSampler

EPOCH = datetime(2020, 4, 1, 0, 0, 0, tzinfo=timezone.utc)
STEP_SECONDS = 60


class BenchError(Exception):
    pass


class TargetUnreachable(BenchError):
    pass


class SeedConflict(BenchError):
    pass


class DatasetTooSmall(BenchError):
    pass


@dataclass
class StepResult:
    protocol: str
    mode: str
    step: int
    requests: int
    latencies_ms: list
    total_bytes: int
    statuses: dict  # status code -> count
    cpu_samples: list  # (UTC instant, percent)
    aborted: bool = False

    def as_dict(self) -> dict:
        return {"protocol": self.protocol, "mode": self.mode, "step": self.step,
                "requests": self.requests, "latencies_ms": self.latencies_ms,
                "total_bytes": self.total_bytes,
                "statuses": {str(k): v for k, v in self.statuses.items()},
                "cpu_samples": [[t.isoformat(), p] for t, p in self.cpu_samples],
                "aborted": self.aborted}

    @classmethod
    def from_dict(cls, raw: dict) -> "StepResult":
        return cls(protocol=raw["protocol"], mode=raw["mode"], step=raw["step"],
                   requests=raw["requests"], latencies_ms=list(raw["latencies_ms"]),
                   total_bytes=raw["total_bytes"],
                   statuses={int(k): v for k, v in raw["statuses"].items()},
                   cpu_samples=[(datetime.fromisoformat(t), p)
                                for t, p in raw["cpu_samples"]],
                   aborted=raw.get("aborted", False))


@dataclass
class BenchmarkReport:
    config: dict
    environment: dict
    results: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"config": self.config, "environment": self.environment,
                "results": [r.as_dict() for r in self.results]}

    @classmethod
    def from_dict(cls, raw: dict) -> "BenchmarkReport":
        return cls(config=raw["config"], environment=raw["environment"],
                   results=[StepResult.from_dict(r) for r in raw["results"]])


def _instant(k: int) -> str:
    return (EPOCH + timedelta(seconds=k * STEP_SECONDS)).strftime("%Y-%m-%dT%H:%M:%SZ")


def _probe(session: requests.Session, target: str) -> dict:
    try:
        response = session.get(f"{target}/", timeout=10)
    except requests.RequestException as exc:
        raise TargetUnreachable(f"cannot reach {target}: {exc}") from None
    if response.status_code != 200:
        raise TargetUnreachable(f"{target}/ answered {response.status_code}")
    return {"server": response.headers.get("Server", "unknown")}


def _count(session: requests.Session, url: str) -> int:
    response = session.get(url, params={"$top": 0, "$count": "true"}, timeout=30)
    if response.status_code != 200:
        raise BenchError(f"{url} answered {response.status_code}: {response.text[:200]}")
    return response.json()["@iot.count"]


def _expect(response: requests.Response, what: str):
    if not 200 <= response.status_code < 300:
        raise BenchError(f"{what} failed with {response.status_code}: "
                         f"{response.text[:300]}")


# -- seeding -----------------------------------------------------------------


def _register_body(station: int, properties: list, lat: float, lon: float) -> bytes:
    props = "\n".join(
        f'  <ObservedProperty definition="urn:x-sensorhub:property:{name}">{name}</ObservedProperty>'
        for name in properties)
    return (f"<RegisterSensor>\n"
            f"  <Procedure>station-{station}</Procedure>\n"
            f"  <Name>monitoring station {station}</Name>\n"
            f"{props}\n"
            f'  <UnitOfMeasurement code="Cel">degree Celsius</UnitOfMeasurement>\n'
            f"  <FeatureOfInterest>\n"
            f"    <Name>site-{station}</Name>\n"
            f'    <Point lat="{lat}" lon="{lon}"/>\n'
            f"  </FeatureOfInterest>\n"
            f"</RegisterSensor>").encode("utf-8")


def _insert_body(station: int, property_name: str, k: int, result: float) -> bytes:
    return (f"<InsertObservation>\n"
            f"  <Procedure>station-{station}</Procedure>\n"
            f"  <ObservedProperty>{property_name}</ObservedProperty>\n"
            f"  <PhenomenonTime>{_instant(k)}</PhenomenonTime>\n"
            f"  <Result>{result}</Result>\n"
            f"</InsertObservation>").encode("utf-8")


def seed_dataset(config: ExperimentConfig, force: bool = False) -> dict:
    """Populate the target with the configured things x datastreams x
    observations grid; refuses a non-empty store unless force resets it."""
    session = requests.Session()
    _probe(session, config.target)
    populated = _count(session, f"{config.target}/v1.0/Things") \
        + _count(session, f"{config.target}/v1.0/Observations")
    if populated:
        if not force:
            raise SeedConflict(
                "target store is not empty; pass --force to reset and reseed")
        response = session.post(f"{config.target}/admin/reset", timeout=30)
        _expect(response, "reset")
    rng = random.Random(config.rng_seed)
    properties = [f"metric-{j}" for j in range(1, config.seed_datastreams + 1)]
    for station in range(1, config.seed_things + 1):
        lat = round(52.0 + station * 0.01, 4)
        lon = round(13.0 + station * 0.01, 4)
        response = session.post(f"{config.target}/sos",
                                data=_register_body(station, properties, lat, lon),
                                headers={"Content-Type": "application/xml"}, timeout=30)
        _expect(response, f"register station-{station}")
        for property_name in properties:
            for k in range(config.seed_observations):
                result = round(36.0 + rng.random() * 4.0, 2)
                response = session.post(
                    f"{config.target}/sos",
                    data=_insert_body(station, property_name, k, result),
                    headers={"Content-Type": "application/xml"}, timeout=30)
                _expect(response, f"insert {property_name}[{k}] for station-{station}")
    return {"things": config.seed_things,
            "datastreams": config.seed_things * config.seed_datastreams,
            "observations": (config.seed_things * config.seed_datastreams
                             * config.seed_observations)}


# -- the sweep -----------------------------------------------------------------


def _sos_window_body(begin_k: int, end_k: int) -> bytes:
    return (f"<GetObservation>\n"
            f"  <Procedure>station-1</Procedure>\n"
            f"  <ObservedProperty>metric-1</ObservedProperty>\n"
            f"  <TemporalFilter>\n"
            f"    <Begin>{_instant(begin_k)}</Begin>\n"
            f"    <End>{_instant(end_k)}</End>\n"
            f"  </TemporalFilter>\n"
            f"</GetObservation>").encode("utf-8")


def _step_requests(config: ExperimentConfig, protocol: str, step: int) -> list:
    """The (method, url, body) tuples one step issues, in order."""
    base = config.target
    observations = f"{base}/v1.0/Datastreams(1)/Observations"
    array_suffix = "&resultFormat=dataArray" if protocol == "sta-dataArray" else ""
    if config.mode == "one-request-n-items":
        if protocol == "sos":
            body = _sos_window_body(0, step - 1)
            return [("POST", f"{base}/sos", body)] * config.repetitions
        url = f"{observations}?$top={step}{array_suffix}"
        return [("GET", url, None)] * config.repetitions
    if protocol == "sos":
        return [("POST", f"{base}/sos", _sos_window_body(k, k)) for k in range(step)]
    return [("GET", f"{observations}?$top=1&$skip={k}{array_suffix}", None)
            for k in range(step)]


def _issue(session: requests.Session, method: str, url: str, body):
    headers = {"Content-Type": "application/xml"} if body is not None else None
    start = perf_counter()
    response = session.request(method, url, data=body, headers=headers, timeout=120)
    nbytes = len(response.content)  # content read = last byte received
    latency_ms = (perf_counter() - start) * 1000.0
    return latency_ms, response.status_code, nbytes


def run_scaling_experiment(config: ExperimentConfig) -> BenchmarkReport:
    session = requests.Session()
    probe = _probe(session, config.target)
    available = _count(session, f"{config.target}/v1.0/Datastreams(1)/Observations")
    if available < config.steps[-1]:
        raise DatasetTooSmall(
            f"datastream 1 holds {available} observations but the sweep needs "
            f"{config.steps[-1]}; run `sensorhub-bench seed` first")
    environment = {"host": socket.gethostname(), "platform": platform.platform(),
                   "python": platform.python_version(),
                   "timestamp": datetime.now(timezone.utc).isoformat(),
                   "server": probe["server"],
                   "note": "byte counts are HTTP body bytes, not wire packets"}
    report = BenchmarkReport(config=config.as_dict(), environment=environment)
    for protocol in config.protocols:
        for method, url, body in _step_requests(config, protocol, 1)[:1] * config.warmup:
            _issue(session, method, url, body)  # warmup, excluded from stats
        for step in config.steps:
            report.results.append(_run_step(session, config, protocol, step))
    return report


def _run_step(session: requests.Session, config: ExperimentConfig,
              protocol: str, step: int) -> StepResult:
    plan = _step_requests(config, protocol, step)
    latencies: list = []
    statuses: dict = {}
    total_bytes = 0
    aborted = False
    sampler = CpuSampler(config.server_pid) if config.server_pid else None
    try:
        if sampler:
            sampler.__enter__()
        if config.concurrency <= 1:
            for method, url, body in plan:
                latency, status, nbytes = _issue(session, method, url, body)
                latencies.append(latency)
                statuses[status] = statuses.get(status, 0) + 1
                total_bytes += nbytes
                if not 200 <= status < 300:
                    aborted = True
                    break
        else:
            # sessions are not thread-safe; one per worker
            local_sessions = [requests.Session() for _ in range(config.concurrency)]
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                futures = [pool.submit(_issue, local_sessions[i % config.concurrency],
                                       method, url, body)
                           for i, (method, url, body) in enumerate(plan)]
                for future in futures:
                    latency, status, nbytes = future.result()
                    latencies.append(latency)
                    statuses[status] = statuses.get(status, 0) + 1
                    total_bytes += nbytes
                    if not 200 <= status < 300:
                        aborted = True
                        break
    finally:
        if sampler:
            sampler.__exit__(None, None, None)
    return StepResult(protocol=protocol, mode=config.mode, step=step,
                      requests=len(latencies), latencies_ms=latencies,
                      total_bytes=total_bytes, statuses=statuses,
                      cpu_samples=sampler.samples if sampler else [],
                      aborted=aborted)
