"""Experiment configuration and its key-value file format.

The config file is plain text, one `key = value` per line, `#` comments and
blank lines ignored:

    target = http://127.0.0.1:8080
    protocols = sta-default, sta-dataArray, sos
    steps = 1, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000
    mode = one-request-n-items
    repetitions = 5
    concurrency = 1
    warmup = 10
    server-pid = 12345
    seed-things = 1
    seed-datastreams = 1
    seed-observations = 1000
    rng-seed = 20200401

Steps must be strictly increasing and capped at 1000, the same ceiling the
server enforces on $top.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PROTOCOLS = ("sta-default", "sta-dataArray", "sos")
MODES = ("one-request-n-items", "n-requests-one-item")
DEFAULT_STEPS = (1, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000)
MAX_STEP = 1000


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    target: str = "http://127.0.0.1:8080"
    protocols: tuple = PROTOCOLS
    steps: tuple = DEFAULT_STEPS
    mode: str = "one-request-n-items"
    repetitions: int = 5
    concurrency: int = 1
    warmup: int = 10
    server_pid: int | None = None
    seed_things: int = 1
    seed_datastreams: int = 1
    seed_observations: int = 1000
    rng_seed: int = 20200401

    def __post_init__(self):
        self.target = self.target.rstrip("/")
        if not self.target:
            raise ConfigError("target must be a URL")
        for protocol in self.protocols:
            if protocol not in PROTOCOLS:
                raise ConfigError(f"unknown protocol {protocol!r}; "
                                  f"expected one of {', '.join(PROTOCOLS)}")
        if not self.protocols:
            raise ConfigError("at least one protocol required")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not self.steps:
            raise ConfigError("at least one step required")
        if any(s <= 0 for s in self.steps):
            raise ConfigError("steps must be positive")
        if list(self.steps) != sorted(set(self.steps)):
            raise ConfigError("steps must be strictly increasing")
        if self.steps[-1] > MAX_STEP:
            raise ConfigError(f"max step is {MAX_STEP}")
        for name in ("repetitions", "concurrency", "warmup",
                     "seed_things", "seed_datastreams", "seed_observations"):
            if getattr(self, name) < (0 if name == "warmup" else 1):
                raise ConfigError(f"{name} out of range")

    def as_dict(self) -> dict:
        return {"target": self.target, "protocols": list(self.protocols),
                "steps": list(self.steps), "mode": self.mode,
                "repetitions": self.repetitions, "concurrency": self.concurrency,
                "warmup": self.warmup, "server_pid": self.server_pid,
                "seed_things": self.seed_things,
                "seed_datastreams": self.seed_datastreams,
                "seed_observations": self.seed_observations,
                "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        values = dict(values)
        for key in ("protocols", "steps"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


_INT_KEYS = {"repetitions": "repetitions", "concurrency": "concurrency",
             "warmup": "warmup", "server-pid": "server_pid",
             "seed-things": "seed_things", "seed-datastreams": "seed_datastreams",
             "seed-observations": "seed_observations", "rng-seed": "rng_seed"}


def parse_config(text: str) -> ExperimentConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key == "target":
            values["target"] = value
        elif key == "protocols" or key == "protocol":
            values["protocols"] = tuple(p.strip() for p in value.split(",") if p.strip())
        elif key == "steps":
            try:
                values["steps"] = tuple(int(s) for s in value.split(",") if s.strip())
            except ValueError:
                raise ConfigError(f"line {lineno}: steps must be integers") from None
        elif key == "mode":
            values["mode"] = value
        elif key in _INT_KEYS:
            try:
                values[_INT_KEYS[key]] = int(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} must be an integer") from None
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
