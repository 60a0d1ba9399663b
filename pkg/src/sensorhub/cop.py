"""Edge-message codec for compact symptom reports, plus ingestion into the
entity store.

The wire form is one self-closing XML element with a fixed attribute order:

    <cop umi="..." symptoms="F-C-N-B" time="<ISO-8601 UTC>"
         patient="RP-19800101"? lat="52.51" lon="13.35"/>

``symptoms`` is a dash-joined list of registered single-letter codes
(F fever, C cough, N nausea, B loss of breath by default; the table is a
JSON config so new codes need no code change). ``patient`` is optional:
1-4 uppercase initials, a dash, then a real YYYYMMDD birth date. The ``umi``
is the message's serial number and the deduplication key: re-ingesting the
same umi changes nothing. The schema is documented in schemas/cop/cop.xsd.
"""

from __future__ import annotations

import json
import re
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime
from xml.sax.saxutils import quoteattr

from .entities import (
    Datastream,
    EntityKind,
    EntityRef,
    Observation,
    ObservedProperty,
    Point,
    Sensor,
    Thing,
    UnitOfMeasurement,
    format_instant,
    parse_instant,
)
from .store import Store

DEFAULT_SYMPTOMS = {"F": "fever", "C": "cough", "N": "nausea", "B": "loss of breath"}
PATIENT_GRAMMAR = re.compile(r"^[A-Z]{1,4}-(\d{8})$")

_ATTRIBUTES = ("umi", "symptoms", "time", "patient", "lat", "lon")
_REQUIRED = ("umi", "symptoms", "time", "lat", "lon")

UMI_REGISTRY = "cop:umis"
SUBJECT_REGISTRY = "cop:subjects"
STREAM_REGISTRY = "cop:streams"
SHARED_REGISTRY = "cop:shared"


class CopError(Exception):
    code = "CopError"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class MalformedXml(CopError):
    code = "MalformedXml"


class MissingAttribute(CopError):
    code = "MissingAttribute"

    def __init__(self, name: str):
        super().__init__(f"required attribute {name!r} is missing or empty")
        self.name = name


class BadSymptomList(CopError):
    code = "BadSymptomList"


class BadCoordinate(CopError):
    code = "BadCoordinate"


class BadPatientGrammar(CopError):
    code = "BadPatientGrammar"


class BadTimestamp(CopError):
    code = "BadTimestamp"


class UnregisteredSymptom(CopError):
    code = "UnregisteredSymptom"


class SymptomTable:
    """Registered single-letter symptom codes and their labels."""

    def __init__(self, codes: dict):
        for code, label in codes.items():
            if not (len(code) == 1 and code.isalpha() and code.isupper()):
                raise ValueError(f"symptom code must be one uppercase letter, got {code!r}")
            if not isinstance(label, str) or not label:
                raise ValueError(f"symptom label for {code!r} must be non-empty text")
        self._codes = dict(codes)

    @classmethod
    def default(cls) -> "SymptomTable":
        return cls(DEFAULT_SYMPTOMS)

    @classmethod
    def from_file(cls, path) -> "SymptomTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def registered(self, code: str) -> bool:
        return code in self._codes

    def label(self, code: str) -> str:
        return self._codes[code]

    def codes(self) -> tuple:
        return tuple(self._codes)


@dataclass(frozen=True)
class CopMessage:
    umi: str
    symptoms: tuple
    timestamp: datetime
    lat: float
    lon: float
    patient: str | None = None


def validate_message(msg: CopMessage, table: SymptomTable):
    """Raise the matching error class for any invariant breach."""
    if not msg.umi:
        raise MissingAttribute("umi")
    if not msg.symptoms:
        raise BadSymptomList("symptom list must not be empty")
    if len(set(msg.symptoms)) != len(msg.symptoms):
        raise BadSymptomList(f"duplicate symptom codes in {list(msg.symptoms)}")
    for code in msg.symptoms:
        if not table.registered(code):
            raise UnregisteredSymptom(f"symptom code {code!r} is not registered")
    if not isinstance(msg.timestamp, datetime) or msg.timestamp.tzinfo is None:
        raise BadTimestamp("timestamp must be a timezone-aware instant")
    if not -90.0 <= msg.lat <= 90.0:
        raise BadCoordinate(f"lat {msg.lat} out of [-90, 90]")
    if not -180.0 <= msg.lon <= 180.0:
        raise BadCoordinate(f"lon {msg.lon} out of [-180, 180]")
    if msg.patient is not None:
        _check_patient(msg.patient)


def _check_patient(patient: str):
    match = PATIENT_GRAMMAR.match(patient)
    if not match:
        raise BadPatientGrammar(
            f"patient {patient!r} must be 1-4 uppercase initials, '-', YYYYMMDD")
    try:
        datetime.strptime(match.group(1), "%Y%m%d")
    except ValueError:
        raise BadPatientGrammar(
            f"patient {patient!r} birth date is not a real calendar date") from None


def encode(msg: CopMessage, table: SymptomTable | None = None) -> bytes:
    """Canonical bytes: fixed attribute order, so encoding is deterministic."""
    table = table or SymptomTable.default()
    validate_message(msg, table)
    parts = [f"umi={quoteattr(msg.umi)}",
             f"symptoms={quoteattr('-'.join(msg.symptoms))}",
             f"time={quoteattr(format_instant(msg.timestamp))}"]
    if msg.patient is not None:
        parts.append(f"patient={quoteattr(msg.patient)}")
    parts.append(f"lat={quoteattr(str(msg.lat))}")
    parts.append(f"lon={quoteattr(str(msg.lon))}")
    return ("<cop " + " ".join(parts) + "/>").encode("utf-8")


def decode(xml: bytes, table: SymptomTable | None = None, strict: bool = False) -> CopMessage:
    """Inverse of encode on valid documents; every corrupt field maps to its
    own error class. Unknown attributes are rejected only in strict mode."""
    table = table or SymptomTable.default()
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise MalformedXml(f"not well-formed XML: {exc}") from None
    if root.tag != "cop":
        raise MalformedXml(f"expected a <cop> element, got <{root.tag}>")
    if len(root) != 0:
        raise MalformedXml("a report is a single element without children")
    if strict:
        for name in root.attrib:
            if name not in _ATTRIBUTES:
                raise MalformedXml(f"unknown attribute {name!r}")
    for name in _REQUIRED:
        if not root.get(name, ""):
            raise MissingAttribute(name)

    tokens = root.get("symptoms").split("-")
    if any(not token for token in tokens):
        raise BadSymptomList(f"empty symptom token in {root.get('symptoms')!r}")
    if len(set(tokens)) != len(tokens):
        raise BadSymptomList(f"duplicate symptom codes in {root.get('symptoms')!r}")
    for token in tokens:
        if not table.registered(token):
            raise UnregisteredSymptom(f"symptom code {token!r} is not registered")

    try:
        timestamp = parse_instant(root.get("time"))
    except ValueError as exc:
        raise BadTimestamp(f"bad time attribute: {exc}") from None

    coords = {}
    for name in ("lat", "lon"):
        try:
            coords[name] = float(root.get(name))
        except ValueError:
            raise BadCoordinate(f"{name} {root.get(name)!r} is not a number") from None

    patient = root.get("patient")
    if patient is not None:
        _check_patient(patient)

    msg = CopMessage(umi=root.get("umi"), symptoms=tuple(tokens), timestamp=timestamp,
                     lat=coords["lat"], lon=coords["lon"], patient=patient)
    validate_message(msg, table)
    return msg


def map_to_sta(msg: CopMessage, store: Store, table: SymptomTable | None = None) -> list:
    """Idempotent upsert keyed by umi.

    A repeated umi is a no-op returning the refs recorded on first ingest.
    The reporting subject (patient id, or the station's coordinates when
    anonymous) becomes a Thing reused across messages; each symptom code gets
    one presence-flag Datastream per subject and one Observation per message;
    the feature of interest comes from the report coordinates.
    """
    table = table or SymptomTable.default()
    validate_message(msg, table)

    recorded = store.registry_get(UMI_REGISTRY, msg.umi)
    if recorded is not None:
        return [EntityRef(EntityKind[kind], entity_id) for kind, entity_id in recorded]

    created: list[EntityRef] = []
    subject_key = f"patient:{msg.patient}" if msg.patient else f"station:{msg.lat},{msg.lon}"
    subject_label = msg.patient if msg.patient else f"station {msg.lat}, {msg.lon}"

    thing_id = store.registry_get(SUBJECT_REGISTRY, subject_key)
    if thing_id is None or not _exists(store, EntityKind.Thing, thing_id):
        thing_ref = store.create(Thing(
            id=0, name=subject_label, description="symptom reporting subject",
            properties={"subject": subject_key}))
        store.registry_put(SUBJECT_REGISTRY, subject_key, thing_ref.id)
        created.append(thing_ref)
    else:
        thing_ref = EntityRef(EntityKind.Thing, thing_id)

    sensor_id = store.registry_get(SHARED_REGISTRY, "sensor")
    if sensor_id is None or not _exists(store, EntityKind.Sensor, sensor_id):
        sensor_ref = store.create(Sensor(
            id=0, name="self-report", description="symptom self-report codec",
            encodingType="text/xml", metadata="urn:x-sensorhub:cop:v1"))
        store.registry_put(SHARED_REGISTRY, "sensor", sensor_ref.id)
        created.append(sensor_ref)
    else:
        sensor_ref = EntityRef(EntityKind.Sensor, sensor_id)

    foi_before = store.count(EntityKind.FeatureOfInterest)
    foi_ref = store.find_or_create_foi(
        Point(lon=msg.lon, lat=msg.lat), f"report site {msg.lat}, {msg.lon}",
        "coordinates attached to a symptom report")
    if store.count(EntityKind.FeatureOfInterest) > foi_before:
        created.append(foi_ref)

    refs: list[EntityRef] = []
    for code in msg.symptoms:
        op_id = store.registry_get(SHARED_REGISTRY, f"property:{code}")
        if op_id is None or not _exists(store, EntityKind.ObservedProperty, op_id):
            op_ref = store.create(ObservedProperty(
                id=0, name=table.label(code),
                definition=f"urn:x-sensorhub:symptom:{code}",
                description=f"presence of {table.label(code)}"))
            store.registry_put(SHARED_REGISTRY, f"property:{code}", op_ref.id)
            created.append(op_ref)
        else:
            op_ref = EntityRef(EntityKind.ObservedProperty, op_id)

        stream_key = f"{thing_ref.id}:{code}"
        ds_id = store.registry_get(STREAM_REGISTRY, stream_key)
        if ds_id is None or not _exists(store, EntityKind.Datastream, ds_id):
            ds_ref = store.create(Datastream(
                id=0, name=f"{subject_label}: {table.label(code)}",
                description=f"{table.label(code)} reports for {subject_label}",
                unitOfMeasurement=UnitOfMeasurement(
                    name="presence", symbol="1",
                    definition="urn:x-sensorhub:unit:presence"),
                thing=thing_ref, sensor=sensor_ref, observedProperty=op_ref))
            store.registry_put(STREAM_REGISTRY, stream_key, ds_ref.id)
            created.append(ds_ref)
        else:
            ds_ref = EntityRef(EntityKind.Datastream, ds_id)

        obs_ref = store.create(Observation(
            id=0, phenomenonTime=msg.timestamp, result=True, resultTime=msg.timestamp,
            datastream=ds_ref, featureOfInterest=foi_ref))
        created.append(obs_ref)
        refs.append(obs_ref)

    store.registry_put(UMI_REGISTRY, msg.umi,
                       [[ref.kind.name, ref.id] for ref in created])
    return created


def _exists(store: Store, kind: EntityKind, entity_id: int) -> bool:
    from .store import NotFound

    try:
        store.get(EntityRef(kind, entity_id))
        return True
    except NotFound:
        return False


class CopIngestor:
    """POST /cop handler: decode, upsert, acknowledge as JSON."""

    def __init__(self, store: Store, table: SymptomTable | None = None,
                 strict: bool = False):
        self.store = store
        self.table = table or SymptomTable.default()
        self.strict = strict
        self._lock = threading.Lock()  # one compound upsert at a time

    def handle(self, body: bytes):
        try:
            msg = decode(body, self.table, strict=self.strict)
        except CopError as exc:
            payload = json.dumps({"code": exc.code, "message": exc.message},
                                 separators=(",", ":")).encode("utf-8")
            return 400, [("Content-Type", "application/json")], payload
        with self._lock:
            duplicate = self.store.registry_get(UMI_REGISTRY, msg.umi) is not None
            refs = map_to_sta(msg, self.store, self.table)
        ack = {"umi": msg.umi, "duplicate": duplicate,
               "entities": [str(ref) for ref in refs]}
        payload = json.dumps(ack, separators=(",", ":")).encode("utf-8")
        return 200 if duplicate else 201, [("Content-Type", "application/json")], payload
