"""Threaded HTTP server wrapping the router.

One OS thread per connection (HTTP/1.1 keep-alive), every response carries an
explicit Content-Length, and all handlers share a single store under its
readers/writer contract.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

from .cop import CopIngestor, SymptomTable
from .rest import Router
from .sos import SosService
from .store import Store

ENV_PREFIX = "SENSORHUB_"


@dataclass
class ServiceConfig:
    bind: str = "127.0.0.1:8080"
    base_url: str | None = None  # defaults to http://<bind>; never keeps a trailing slash
    data_dir: str | None = None
    max_top: int = 1000
    strict: bool = False
    symptoms: str | None = None  # optional symptom-table JSON path
    quiet: bool = True

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.bind.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"--bind must look like HOST:PORT, got {self.bind!r}")
        return host, int(port)


def config_from_env(environ=None) -> dict:
    """SENSORHUB_* variables as a config field map (CLI flags override)."""
    environ = os.environ if environ is None else environ
    values: dict = {}
    for field, cast in (("bind", str), ("base_url", str), ("data_dir", str),
                        ("max_top", int), ("symptoms", str)):
        raw = environ.get(ENV_PREFIX + field.upper())
        if raw is not None:
            values[field] = cast(raw)
    raw = environ.get(ENV_PREFIX + "STRICT")
    if raw is not None:
        values["strict"] = raw.lower() in ("1", "true", "yes", "on")
    return values


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "sensorhub/0.1"
    disable_nagle_algorithm = True  # header+body writes would hit delayed ACK otherwise

    def _handle(self):
        try:
            length = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            length = 0
        body = self.rfile.read(length) if length > 0 else b""
        parts = urlsplit(self.path)
        status, headers, payload = self.server.router.dispatch(
            self.command, parts.path, parts.query, body)
        self.send_response(status)
        for name, value in headers:
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    do_GET = _handle
    do_POST = _handle
    do_PATCH = _handle
    do_DELETE = _handle

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        if not self.server.quiet:
            super().log_message(format, *args)


class SensorHubApp(ThreadingHTTPServer):
    """Bound server owning the store; usable as a context manager in tests."""

    daemon_threads = True

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.quiet = config.quiet
        super().__init__(config.host_port(), _Handler)
        host, port = self.server_address[0], self.server_address[1]
        base_url = config.base_url or f"http://{host}:{port}"
        self.base_url = base_url.rstrip("/")
        self.store = Store(data_dir=config.data_dir, max_top=config.max_top)
        table = SymptomTable.from_file(config.symptoms) if config.symptoms \
            else SymptomTable.default()
        self.router = Router(
            self.store, self.base_url, max_top=config.max_top, strict=config.strict,
            sos=SosService(self.store, strict=config.strict),
            cop=CopIngestor(self.store, table=table, strict=config.strict))

    def server_close(self):
        super().server_close()
        self.store.close()


def serve(config: ServiceConfig):
    """Run until interrupted; flushes the store on the way out."""
    app = SensorHubApp(config)
    host, port = app.server_address[0], app.server_address[1]
    print(f"serving on http://{host}:{port} (base url {app.base_url})", flush=True)
    try:
        app.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        app.server_close()
