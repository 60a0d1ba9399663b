"""XML observation-service facade over the same store as the REST surface.

Three transactional operations dispatched by root element of a document
POSTed to /sos: RegisterSensor, InsertObservation, GetObservation. A sensor
must be registered before observations can be inserted for it; inserting
against an unknown procedure is a hard error, never an implicit
registration.

Responses are deliberately verbose XML: every observation element repeats
procedure, observed property, unit, and feature-of-interest metadata. The
request and response shapes are documented in schemas/sos/.
"""

from __future__ import annotations

import math
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .entities import (
    GEOJSON_ENCODING,
    Datastream,
    EntityKind,
    EntityRef,
    Location,
    Observation,
    ObservedProperty,
    Point,
    Sensor,
    Thing,
    UnitOfMeasurement,
    format_instant,
    parse_instant,
)
from .store import QueryParams, Store, StoreError

XML_TYPE = "application/xml"
PROCEDURE_REGISTRY = "sos:procedures"


class SosError(Exception):
    code = "SosError"
    status = 400

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class MalformedXml(SosError):
    code = "MalformedXml"


class MissingElement(SosError):
    code = "MissingElement"

    def __init__(self, element: str):
        super().__init__(f"required element <{element}> is missing or empty")
        self.element = element


class BadResult(SosError):
    code = "BadResult"


class BadTemporalFilter(SosError):
    code = "BadTemporalFilter"


class UnknownProcedure(SosError):
    code = "UnknownProcedure"
    status = 404

    def __init__(self, procedure_id: str):
        super().__init__(f"procedure {procedure_id!r} is not registered; "
                         "a sensor must be registered before use")
        self.procedure_id = procedure_id


class DuplicateProcedure(SosError):
    code = "DuplicateProcedure"
    status = 409

    def __init__(self, procedure_id: str):
        super().__init__(f"procedure {procedure_id!r} is already registered")
        self.procedure_id = procedure_id


@dataclass
class ProcedureStream:
    property_name: str
    definition: str
    datastream: int  # backing Datastream id
    uom_name: str
    uom_code: str


@dataclass
class Procedure:
    procedure_id: str
    name: str
    registered_at: datetime
    thing: int  # backing Thing id
    sensor: int  # backing Sensor id
    foi_name: str
    lat: float
    lon: float
    streams: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {"procedure_id": self.procedure_id, "name": self.name,
                "registered_at": format_instant(self.registered_at),
                "thing": self.thing, "sensor": self.sensor,
                "foi_name": self.foi_name, "lat": self.lat, "lon": self.lon,
                "streams": [{"property_name": s.property_name, "definition": s.definition,
                             "datastream": s.datastream, "uom_name": s.uom_name,
                             "uom_code": s.uom_code} for s in self.streams]}

    @classmethod
    def from_record(cls, record: dict) -> "Procedure":
        return cls(procedure_id=record["procedure_id"], name=record["name"],
                   registered_at=parse_instant(record["registered_at"]),
                   thing=record["thing"], sensor=record["sensor"],
                   foi_name=record["foi_name"], lat=record["lat"], lon=record["lon"],
                   streams=[ProcedureStream(**s) for s in record["streams"]])


@dataclass
class SosEnvelope:
    operation: str  # RegisterSensor | InsertObservation | GetObservation
    payload: ET.Element


OPERATIONS = ("RegisterSensor", "InsertObservation", "GetObservation")


def parse_envelope(body: bytes) -> SosEnvelope:
    try:
        root = ET.fromstring(body)
    except ET.ParseError as exc:
        raise MalformedXml(f"request is not well-formed XML: {exc}") from None
    if root.tag not in OPERATIONS:
        raise MalformedXml(
            f"unknown operation <{root.tag}>; expected one of {', '.join(OPERATIONS)}")
    return SosEnvelope(operation=root.tag, payload=root)


def _text(root: ET.Element, element: str, required: bool = True) -> str | None:
    node = root.find(element)
    if node is None or not (node.text or "").strip():
        if required:
            raise MissingElement(element)
        return None
    return node.text.strip()


def _render(root: ET.Element) -> bytes:
    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def exception_report(code: str, message: str) -> bytes:
    root = ET.Element("ExceptionReport")
    node = ET.SubElement(root, "Exception", {"code": code})
    node.text = message
    return _render(root)


class SosService:
    """Stateless XML handlers over the shared store; the procedure registry
    lives in the store so registrations survive restarts."""

    def __init__(self, store: Store, strict: bool = False):
        self.store = store
        self.strict = strict
        self._lock = threading.Lock()  # register/insert are compound store writes

    # -- registry ----------------------------------------------------------------

    def procedure(self, procedure_id: str) -> Procedure:
        record = self.store.registry_get(PROCEDURE_REGISTRY, procedure_id)
        if record is None:
            raise UnknownProcedure(procedure_id)
        return Procedure.from_record(record)

    def procedures(self) -> list:
        return sorted(self.store.registry_items(PROCEDURE_REGISTRY))

    # -- operations ----------------------------------------------------------------

    def register_sensor(self, envelope: SosEnvelope) -> str:
        if envelope.operation != "RegisterSensor":
            raise MalformedXml(f"expected RegisterSensor, got {envelope.operation}")
        root = envelope.payload
        procedure_id = _text(root, "Procedure")
        name = _text(root, "Name", required=False) or procedure_id
        properties = root.findall("ObservedProperty")
        if not properties or not any((p.text or "").strip() for p in properties):
            raise MissingElement("ObservedProperty")
        foi = root.find("FeatureOfInterest")
        if foi is None:
            raise MissingElement("FeatureOfInterest")
        foi_name = _text(foi, "Name")
        point = foi.find("Point")
        if point is None:
            raise MissingElement("FeatureOfInterest/Point")
        try:
            lat = float(point.get("lat", ""))
            lon = float(point.get("lon", ""))
        except ValueError:
            raise MissingElement("FeatureOfInterest/Point[@lat,@lon]") from None
        uom_node = root.find("UnitOfMeasurement")
        uom_name = "unitless"
        uom_code = "1"
        if uom_node is not None and (uom_node.text or "").strip():
            uom_name = uom_node.text.strip()
            uom_code = uom_node.get("code", uom_name)

        with self._lock:
            if self.store.registry_get(PROCEDURE_REGISTRY, procedure_id) is not None:
                raise DuplicateProcedure(procedure_id)
            location_ref = self.store.create(Location(
                id=0, name=foi_name, description=f"site of procedure {procedure_id}",
                encodingType=GEOJSON_ENCODING, location=Point(lon=lon, lat=lat)))
            thing_ref = self.store.create(Thing(
                id=0, name=name, description=f"platform for procedure {procedure_id}",
                properties={"procedure": procedure_id},
                locations=(location_ref,)))
            sensor_ref = self.store.create(Sensor(
                id=0, name=procedure_id, description=name,
                encodingType="text/xml", metadata=f"urn:x-sensorhub:procedure:{procedure_id}"))
            procedure = Procedure(
                procedure_id=procedure_id, name=name,
                registered_at=datetime.now(timezone.utc),
                thing=thing_ref.id, sensor=sensor_ref.id,
                foi_name=foi_name, lat=lat, lon=lon)
            for node in properties:
                property_name = (node.text or "").strip()
                if not property_name:
                    raise MissingElement("ObservedProperty")
                definition = node.get(
                    "definition", f"urn:x-sensorhub:property:{property_name}")
                op_ref = self.store.create(ObservedProperty(
                    id=0, name=property_name, definition=definition,
                    description=f"{property_name} reported by {procedure_id}"))
                ds_ref = self.store.create(Datastream(
                    id=0, name=f"{procedure_id}:{property_name}",
                    description=f"{property_name} measured by {procedure_id}",
                    unitOfMeasurement=UnitOfMeasurement(
                        name=uom_name, symbol=uom_code,
                        definition=f"urn:x-sensorhub:unit:{uom_code}"),
                    thing=thing_ref, sensor=sensor_ref, observedProperty=op_ref))
                procedure.streams.append(ProcedureStream(
                    property_name=property_name, definition=definition,
                    datastream=ds_ref.id, uom_name=uom_name, uom_code=uom_code))
            self.store.registry_put(PROCEDURE_REGISTRY, procedure_id,
                                    procedure.to_record())
        return procedure_id

    def insert_observation(self, envelope: SosEnvelope) -> EntityRef:
        if envelope.operation != "InsertObservation":
            raise MalformedXml(f"expected InsertObservation, got {envelope.operation}")
        root = envelope.payload
        procedure_id = _text(root, "Procedure")
        property_name = _text(root, "ObservedProperty", required=False)
        time_text = _text(root, "PhenomenonTime")
        result_text = _text(root, "Result")
        with self._lock:
            procedure = self.procedure(procedure_id)
            stream = self._stream_for(procedure, property_name)
            try:
                phenomenon = parse_instant(time_text)
            except ValueError as exc:
                raise BadTemporalFilter(f"bad PhenomenonTime: {exc}") from None
            try:
                result = float(result_text)
                if not math.isfinite(result):
                    raise ValueError("not finite")
            except ValueError:
                raise BadResult(
                    f"result {result_text!r} is not numeric for "
                    f"{stream.property_name!r}") from None
            if result == int(result):
                result = int(result)
            foi_ref = self.store.find_or_create_foi(
                Point(lon=procedure.lon, lat=procedure.lat), procedure.foi_name,
                f"feature of interest for {procedure_id}")
            return self.store.create(Observation(
                id=0, phenomenonTime=phenomenon, result=result, resultTime=phenomenon,
                datastream=EntityRef(EntityKind.Datastream, stream.datastream),
                featureOfInterest=foi_ref))

    @staticmethod
    def _stream_for(procedure: Procedure, property_name: str | None) -> ProcedureStream:
        if property_name is None:
            return procedure.streams[0]
        for stream in procedure.streams:
            if stream.property_name == property_name:
                return stream
        raise MissingElement(f"ObservedProperty {property_name!r} of {procedure.procedure_id!r}")

    def get_observation(self, procedure_id: str, begin: datetime | None = None,
                        end: datetime | None = None,
                        property_name: str | None = None) -> bytes:
        """All matching observations as one verbose XML document; the time
        window is inclusive at both ends. An observed-property name narrows
        the response to one of the procedure's streams."""
        procedure = self.procedure(procedure_id)
        streams = procedure.streams if property_name is None else \
            [self._stream_for(procedure, property_name)]
        root = ET.Element("GetObservationResponse")
        proc_node = ET.SubElement(root, "Procedure", {
            "id": procedure.procedure_id, "name": procedure.name,
            "registeredAt": format_instant(procedure.registered_at)})
        foi_node = ET.SubElement(proc_node, "FeatureOfInterest", {"name": procedure.foi_name})
        ET.SubElement(foi_node, "Point", {"lat": str(procedure.lat), "lon": str(procedure.lon)})
        collection = ET.SubElement(root, "ObservationCollection")
        total = 0
        for stream in streams:
            ds_ref = EntityRef(EntityKind.Datastream, stream.datastream)
            for obs in self._all_observations(ds_ref):
                key = obs.phenomenonTime if isinstance(obs.phenomenonTime, datetime) \
                    else obs.phenomenonTime[0]
                if begin is not None and key < begin:
                    continue
                if end is not None and key > end:
                    continue
                total += 1
                node = ET.SubElement(collection, "Observation", {"id": str(obs.id)})
                ET.SubElement(node, "Procedure").text = procedure.procedure_id
                prop = ET.SubElement(node, "ObservedProperty",
                                     {"definition": stream.definition})
                prop.text = stream.property_name
                uom = ET.SubElement(node, "UnitOfMeasurement", {"code": stream.uom_code})
                uom.text = stream.uom_name
                ET.SubElement(node, "PhenomenonTime").text = format_instant(key)
                ET.SubElement(node, "ResultTime").text = format_instant(obs.resultTime)
                obs_foi = ET.SubElement(node, "FeatureOfInterest",
                                        {"name": procedure.foi_name})
                ET.SubElement(obs_foi, "Point", {"lat": str(procedure.lat),
                                                 "lon": str(procedure.lon)})
                result = ET.SubElement(node, "Result", {"uom": stream.uom_code})
                result.text = _result_text(obs.result)
        collection.set("count", str(total))
        return _render(root)

    def _all_observations(self, ds_ref: EntityRef):
        skip = 0
        while True:
            page = self.store.navigate(
                ds_ref, "Observations", QueryParams(top=self.store.max_top, skip=skip))
            yield from page.items
            if page.nextOffset is None:
                return
            skip = page.nextOffset

    # -- HTTP entry point ------------------------------------------------------------

    def handle(self, body: bytes):
        """POST /sos dispatcher; returns (status, content type, XML bytes)."""
        try:
            envelope = parse_envelope(body)
            if envelope.operation == "RegisterSensor":
                procedure_id = self.register_sensor(envelope)
                root = ET.Element("RegisterSensorResponse")
                ET.SubElement(root, "AssignedProcedure").text = procedure_id
                return 200, XML_TYPE, _render(root)
            if envelope.operation == "InsertObservation":
                ref = self.insert_observation(envelope)
                root = ET.Element("InsertObservationResponse")
                ET.SubElement(root, "AssignedObservationId").text = str(ref.id)
                return 200, XML_TYPE, _render(root)
            begin, end = self._parse_filter(envelope.payload)
            procedure_id = _text(envelope.payload, "Procedure")
            property_name = _text(envelope.payload, "ObservedProperty", required=False)
            return 200, XML_TYPE, self.get_observation(procedure_id, begin, end,
                                                       property_name)
        except SosError as exc:
            return exc.status, XML_TYPE, exception_report(exc.code, exc.message)
        except StoreError as exc:
            return 400, XML_TYPE, exception_report(exc.code, exc.message)

    @staticmethod
    def _parse_filter(root: ET.Element):
        node = root.find("TemporalFilter")
        if node is None:
            return None, None
        begin_text = (node.findtext("Begin") or "").strip()
        end_text = (node.findtext("End") or "").strip()
        try:
            begin = parse_instant(begin_text) if begin_text else None
            end = parse_instant(end_text) if end_text else None
        except ValueError as exc:
            raise BadTemporalFilter(f"bad TemporalFilter bound: {exc}") from None
        if begin is not None and end is not None and begin > end:
            raise BadTemporalFilter("TemporalFilter Begin is after End")
        return begin, end


def _result_text(result) -> str:
    if result is True:
        return "true"
    if result is False:
        return "false"
    return str(result)
