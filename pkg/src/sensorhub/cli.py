"""Command line entry point: run the hub, validate or send edge reports.

    sensorhub serve --bind 0.0.0.0:8080 --data-dir ./data
    sensorhub cop validate report.xml
    sensorhub cop send report.xml --url http://host:8080/cop

Every serve flag has a SENSORHUB_* environment variable equivalent
(SENSORHUB_BIND, SENSORHUB_BASE_URL, SENSORHUB_DATA_DIR, SENSORHUB_MAX_TOP,
SENSORHUB_STRICT, SENSORHUB_SYMPTOMS); explicit flags win.
"""

from __future__ import annotations

import argparse
import sys

from . import cop as cop_codec
from .server import ServiceConfig, config_from_env, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensorhub",
                                     description="sensing data hub and edge-report tools")
    sub = parser.add_subparsers(dest="command", required=True)

    env = config_from_env()
    serve_p = sub.add_parser("serve", help="run the HTTP service")
    serve_p.add_argument("--bind", default=env.get("bind", "127.0.0.1:8080"),
                         help="HOST:PORT to listen on (default 127.0.0.1:8080)")
    serve_p.add_argument("--base-url", default=env.get("base_url"),
                         help="absolute URL clients see in links (default http://<bind>)")
    serve_p.add_argument("--data-dir", default=env.get("data_dir"),
                         help="directory for store.snap/store.wal (default: in-memory)")
    serve_p.add_argument("--max-top", type=int, default=env.get("max_top", 1000),
                         help="hard ceiling for $top (default 1000)")
    serve_p.add_argument("--strict", action="store_true", default=env.get("strict", False),
                         help="reject unknown fields instead of ignoring them")
    serve_p.add_argument("--symptoms", default=env.get("symptoms"),
                         help="JSON file extending the symptom code table")
    serve_p.add_argument("--verbose", action="store_true", help="log each request")

    cop_p = sub.add_parser("cop", help="edge symptom-report tools")
    cop_sub = cop_p.add_subparsers(dest="cop_command", required=True)

    validate_p = cop_sub.add_parser("validate", help="check a report file against the schema")
    validate_p.add_argument("file", help="XML report file")
    validate_p.add_argument("--symptoms", default=env.get("symptoms"),
                            help="JSON file extending the symptom code table")
    validate_p.add_argument("--strict", action="store_true",
                            help="also reject unknown attributes")

    send_p = cop_sub.add_parser("send", help="POST a report file to a running hub")
    send_p.add_argument("file", help="XML report file")
    send_p.add_argument("--url", required=True, help="ingestion endpoint, e.g. http://host:8080/cop")
    return parser


def _load_table(path):
    return cop_codec.SymptomTable.from_file(path) if path else cop_codec.SymptomTable.default()


def cmd_serve(args) -> int:
    config = ServiceConfig(bind=args.bind, base_url=args.base_url, data_dir=args.data_dir,
                           max_top=args.max_top, strict=args.strict,
                           symptoms=args.symptoms, quiet=not args.verbose)
    serve(config)
    return 0


def cmd_cop_validate(args) -> int:
    with open(args.file, "rb") as fh:
        blob = fh.read()
    try:
        msg = cop_codec.decode(blob, _load_table(args.symptoms), strict=args.strict)
    except cop_codec.CopError as exc:
        print(f"invalid: [{exc.code}] {exc.message}")
        return 1
    patient = msg.patient or "-"
    print(f"valid: umi={msg.umi} symptoms={'-'.join(msg.symptoms)} "
          f"patient={patient} at=({msg.lat}, {msg.lon})")
    return 0


def cmd_cop_send(args) -> int:
    import requests

    with open(args.file, "rb") as fh:
        blob = fh.read()
    try:
        cop_codec.decode(blob)  # fail fast locally with a precise error
    except cop_codec.CopError as exc:
        print(f"invalid: [{exc.code}] {exc.message}")
        return 1
    response = requests.post(args.url, data=blob,
                             headers={"Content-Type": "application/xml"}, timeout=30)
    print(f"{response.status_code} {response.text}")
    return 0 if response.ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)
    if args.cop_command == "validate":
        return cmd_cop_validate(args)
    return cmd_cop_send(args)


if __name__ == "__main__":
    sys.exit(main())
