"""Core sensing entity model: the eight entity kinds, their relationship
graph, and field validation.

Everything here is a pure value type or a pure function; no storage or
transport concerns. The store and the HTTP layer both consume this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Union

__all__ = [
    "EntityKind",
    "EntityRef",
    "Point",
    "UnitOfMeasurement",
    "Thing",
    "Location",
    "HistoricalLocation",
    "Sensor",
    "ObservedProperty",
    "Datastream",
    "Observation",
    "FeatureOfInterest",
    "Relation",
    "Violation",
    "ValidationError",
    "validate_entity",
    "relationship_table",
    "navigation_map",
    "derive_historical_location",
    "parse_instant",
    "format_instant",
    "format_time_value",
    "GEOJSON_ENCODING",
]

GEOJSON_ENCODING = "application/geo+json"


class EntityKind(Enum):
    """The eight sensing entity kinds and their plural collection names."""

    Thing = "Things"
    Location = "Locations"
    HistoricalLocation = "HistoricalLocations"
    Sensor = "Sensors"
    ObservedProperty = "ObservedProperties"
    Datastream = "Datastreams"
    Observation = "Observations"
    FeatureOfInterest = "FeaturesOfInterest"

    @property
    def collection(self) -> str:
        return self.value

    @classmethod
    def from_collection(cls, name: str) -> "EntityKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise KeyError(name)


@dataclass(frozen=True, order=True)
class EntityRef:
    """(kind, id) pair naming one stored entity."""

    kind: EntityKind
    id: int

    def __post_init__(self):
        if self.id <= 0:
            raise ValueError(f"entity id must be positive, got {self.id}")

    def __str__(self) -> str:
        return f"{self.kind.collection}({self.id})"


@dataclass(frozen=True)
class Point:
    """Point geometry, WGS84 degrees, (lon, lat) axis order as in GeoJSON."""

    lon: float
    lat: float

    def as_geojson(self) -> dict:
        return {"type": "Point", "coordinates": [self.lon, self.lat]}


@dataclass(frozen=True)
class UnitOfMeasurement:
    name: str
    symbol: str
    definition: str

    def as_payload(self) -> dict:
        return {"name": self.name, "symbol": self.symbol, "definition": self.definition}


# Instant-or-interval for Observation.phenomenonTime.
TimeValue = Union[datetime, tuple]


def parse_instant(text: str) -> datetime:
    """Parse an ISO-8601 instant; 'Z' suffix accepted; result is UTC-aware."""
    if not isinstance(text, str):
        raise ValueError(f"expected ISO-8601 text, got {type(text).__name__}")
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_instant(dt: datetime) -> str:
    """Canonical UTC text: seconds precision, 'Z' suffix, microseconds kept when present."""
    dt = dt.astimezone(timezone.utc) if dt.tzinfo else dt.replace(tzinfo=timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + "Z"


def format_time_value(value: TimeValue) -> str:
    if isinstance(value, tuple):
        start, end = value
        return f"{format_instant(start)}/{format_instant(end)}"
    return format_instant(value)


def _parse_time_value(text: str) -> TimeValue:
    if "/" in text:
        start_text, end_text = text.split("/", 1)
        return (parse_instant(start_text), parse_instant(end_text))
    return parse_instant(text)


@dataclass(frozen=True)
class Thing:
    """Monitored station or subject; root of the entity graph.

    ``locations`` is the current Location link set (many:many); it is not a
    paper field but the link has to live on one side and the Thing owns it.
    """

    id: int
    name: str
    description: str
    properties: dict = field(default_factory=dict)
    locations: tuple = ()

    kind = EntityKind.Thing


@dataclass(frozen=True)
class Location:
    id: int
    name: str
    description: str
    encodingType: str
    location: Point

    kind = EntityKind.Location


@dataclass(frozen=True)
class HistoricalLocation:
    """System-recorded snapshot of a Thing's location set. Never client-posted."""

    id: int
    time: datetime
    thing: EntityRef
    locations: tuple

    kind = EntityKind.HistoricalLocation


@dataclass(frozen=True)
class Sensor:
    id: int
    name: str
    description: str
    encodingType: str
    metadata: str

    kind = EntityKind.Sensor


@dataclass(frozen=True)
class ObservedProperty:
    id: int
    name: str
    definition: str
    description: str

    kind = EntityKind.ObservedProperty


@dataclass(frozen=True)
class Datastream:
    id: int
    name: str
    description: str
    unitOfMeasurement: UnitOfMeasurement
    thing: EntityRef
    sensor: EntityRef
    observedProperty: EntityRef

    kind = EntityKind.Datastream


@dataclass(frozen=True)
class Observation:
    """One measured result. ``datastream`` may be None after validation only;
    the store requires it at creation time."""

    id: int
    phenomenonTime: TimeValue
    result: Any
    resultTime: datetime
    datastream: EntityRef | None
    featureOfInterest: EntityRef | None = None

    kind = EntityKind.Observation


@dataclass(frozen=True)
class FeatureOfInterest:
    id: int
    name: str
    description: str
    encodingType: str
    feature: Point

    kind = EntityKind.FeatureOfInterest


ENTITY_CLASSES = {
    EntityKind.Thing: Thing,
    EntityKind.Location: Location,
    EntityKind.HistoricalLocation: HistoricalLocation,
    EntityKind.Sensor: Sensor,
    EntityKind.ObservedProperty: ObservedProperty,
    EntityKind.Datastream: Datastream,
    EntityKind.Observation: Observation,
    EntityKind.FeatureOfInterest: FeatureOfInterest,
}


# ---------------------------------------------------------------------------
# Relationship graph


@dataclass(frozen=True)
class Relation:
    source: EntityKind
    name: str
    target: EntityKind
    cardinality: str  # "many:many", "1:many", "many:1"
    mandatory: str  # "mandatory", "optional", "system-managed"


_RELATIONSHIP_TABLE = (
    Relation(EntityKind.Thing, "Locations", EntityKind.Location, "many:many", "optional"),
    Relation(EntityKind.Thing, "HistoricalLocations", EntityKind.HistoricalLocation, "1:many", "system-managed"),
    Relation(EntityKind.Thing, "Datastreams", EntityKind.Datastream, "1:many", "optional"),
    Relation(EntityKind.Datastream, "Sensor", EntityKind.Sensor, "many:1", "mandatory"),
    Relation(EntityKind.Datastream, "ObservedProperty", EntityKind.ObservedProperty, "many:1", "mandatory"),
    Relation(EntityKind.Datastream, "Observations", EntityKind.Observation, "1:many", "optional"),
    Relation(EntityKind.Observation, "FeatureOfInterest", EntityKind.FeatureOfInterest, "many:1", "mandatory"),
    Relation(EntityKind.Observation, "Datastream", EntityKind.Datastream, "many:1", "mandatory"),
)


def relationship_table() -> tuple:
    """The fixed relationship graph as (source, relation, target, cardinality,
    mandatory) rows. Eight rows; the Datastream-Observation edge appears in
    both directions."""
    return _RELATIONSHIP_TABLE


# Navigable relations per kind: the table rows read from the source side plus
# the conventional reverse names, so every stored reference is reachable as a
# link in both directions. Values: (relation name -> (target kind, is_many)).
_NAVIGATION = {
    EntityKind.Thing: {
        "Locations": (EntityKind.Location, True),
        "HistoricalLocations": (EntityKind.HistoricalLocation, True),
        "Datastreams": (EntityKind.Datastream, True),
    },
    EntityKind.Location: {
        "Things": (EntityKind.Thing, True),
        "HistoricalLocations": (EntityKind.HistoricalLocation, True),
    },
    EntityKind.HistoricalLocation: {
        "Thing": (EntityKind.Thing, False),
        "Locations": (EntityKind.Location, True),
    },
    EntityKind.Sensor: {
        "Datastreams": (EntityKind.Datastream, True),
    },
    EntityKind.ObservedProperty: {
        "Datastreams": (EntityKind.Datastream, True),
    },
    EntityKind.Datastream: {
        "Thing": (EntityKind.Thing, False),
        "Sensor": (EntityKind.Sensor, False),
        "ObservedProperty": (EntityKind.ObservedProperty, False),
        "Observations": (EntityKind.Observation, True),
    },
    EntityKind.Observation: {
        "Datastream": (EntityKind.Datastream, False),
        "FeatureOfInterest": (EntityKind.FeatureOfInterest, False),
    },
    EntityKind.FeatureOfInterest: {
        "Observations": (EntityKind.Observation, True),
    },
}


def navigation_map(kind: EntityKind) -> dict:
    """Navigable relations of one kind: name -> (target kind, is_many)."""
    return dict(_NAVIGATION[kind])


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    code: str  # MissingField | BadFieldType | OutOfRange | EmptyRequired | UnknownField
    field: str
    message: str

    def as_payload(self) -> dict:
        return {"code": self.code, "field": self.field, "message": self.message}


class ValidationError(Exception):
    """Carries the full violation list, never just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        summary = "; ".join(f"{v.code}({v.field}): {v.message}" for v in self.violations)
        super().__init__(summary or "validation failed")


class _Collector:
    def __init__(self, candidate: dict, strict: bool):
        self.candidate = candidate
        self.strict = strict
        self.violations: list[Violation] = []
        self.consumed: set[str] = set()

    def add(self, code: str, field_name: str, message: str):
        self.violations.append(Violation(code, field_name, message))

    def take(self, name: str, *aliases: str):
        for key in (name, *aliases):
            if key in self.candidate:
                self.consumed.add(key)
                return self.candidate[key]
        return _MISSING

    def text(self, name: str, required: bool = True, nonempty: bool = True):
        value = self.take(name)
        if value is _MISSING:
            if required:
                self.add("MissingField", name, "required field absent")
            return None
        if not isinstance(value, str):
            self.add("BadFieldType", name, f"expected text, got {type(value).__name__}")
            return None
        if nonempty and not value:
            self.add("EmptyRequired", name, "must be non-empty")
            return None
        return value

    def finish(self):
        if self.strict:
            for key in self.candidate:
                if key not in self.consumed:
                    self.add("UnknownField", key, "unknown field in strict mode")


_MISSING = object()


def _check_coords(col: _Collector, field_name: str, value) -> Point | None:
    """Accepts GeoJSON Point or a {lat, lon} map; checks WGS84 bounds."""
    if value is _MISSING:
        col.add("MissingField", field_name, "required field absent")
        return None
    lon = lat = None
    if isinstance(value, dict) and value.get("type") == "Point":
        coords = value.get("coordinates")
        if isinstance(coords, (list, tuple)) and len(coords) == 2:
            lon, lat = coords
    elif isinstance(value, dict) and "lat" in value and "lon" in value:
        lon, lat = value["lon"], value["lat"]
    if not (isinstance(lon, (int, float)) and isinstance(lat, (int, float))) or \
            isinstance(lon, bool) or isinstance(lat, bool) or \
            not (math.isfinite(lon) and math.isfinite(lat)):
        col.add("BadFieldType", field_name, "expected a point as GeoJSON or {lat, lon}")
        return None
    out = None
    if not -90 <= lat <= 90:
        col.add("OutOfRange", f"{field_name}.lat", f"latitude {lat} outside [-90, 90]")
        out = True
    if not -180 <= lon <= 180:
        col.add("OutOfRange", f"{field_name}.lon", f"longitude {lon} outside [-180, 180]")
        out = True
    if out:
        return None
    return Point(lon=float(lon), lat=float(lat))


def _check_ref(col: _Collector, field_name: str, value, target: EntityKind) -> EntityRef | None:
    """A linked entity arrives as {"@iot.id": n} (or a bare positive int)."""
    if value is _MISSING:
        return None
    raw = value
    if isinstance(value, dict):
        raw = value.get("@iot.id", _MISSING)
        if raw is _MISSING:
            col.add("BadFieldType", field_name, 'expected {"@iot.id": <id>}')
            return None
    if isinstance(raw, bool) or not isinstance(raw, int) or raw <= 0:
        col.add("BadFieldType", field_name, "entity reference id must be a positive integer")
        return None
    return EntityRef(target, raw)


def _check_instant(col: _Collector, field_name: str, value) -> datetime | None:
    if value is _MISSING:
        col.add("MissingField", field_name, "required field absent")
        return None
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    try:
        return parse_instant(value)
    except (ValueError, TypeError):
        col.add("BadFieldType", field_name, "expected an ISO-8601 UTC instant")
        return None


def _check_scalar(col: _Collector, field_name: str, value) -> Any:
    if isinstance(value, (str, bool, int, float)) and \
            (isinstance(value, bool) or not isinstance(value, float) or math.isfinite(value)):
        return value
    col.add("BadFieldType", field_name, "result must be a scalar (number, text, or boolean)")
    return None


def _validate_thing(col: _Collector, entity_id: int):
    name = col.text("name")
    description = col.text("description", required=False, nonempty=False) or ""
    properties = col.take("properties")
    props: dict = {}
    if properties is _MISSING or properties is None:
        pass
    elif not isinstance(properties, dict):
        col.add("BadFieldType", "properties", "expected a flat map")
    else:
        for key, value in properties.items():
            if not isinstance(key, str) or not key:
                col.add("EmptyRequired", "properties", "property keys must be non-empty text")
                continue
            if not isinstance(value, (str, int, float, bool)):
                col.add("BadFieldType", f"properties.{key}", "property values must be scalar")
                continue
            props[key] = value
    locations = col.take("Locations", "locations")
    refs: list[EntityRef] = []
    if locations is not _MISSING and locations is not None:
        if not isinstance(locations, list):
            col.add("BadFieldType", "Locations", "expected a list of location references")
        else:
            for i, item in enumerate(locations):
                ref = _check_ref(col, f"Locations[{i}]", item, EntityKind.Location)
                if ref is not None:
                    refs.append(ref)
    if col.violations:
        return None
    return Thing(id=entity_id, name=name, description=description,
                 properties=props, locations=tuple(refs))


def _validate_location(col: _Collector, entity_id: int):
    name = col.text("name")
    description = col.text("description", required=False, nonempty=False) or ""
    encoding = col.text("encodingType")
    if encoding is not None and encoding != GEOJSON_ENCODING:
        col.add("BadFieldType", "encodingType", f'must be "{GEOJSON_ENCODING}"')
    point = _check_coords(col, "location", col.take("location"))
    if col.violations:
        return None
    return Location(id=entity_id, name=name, description=description,
                    encodingType=encoding, location=point)


def _validate_historical_location(col: _Collector, entity_id: int):
    time = _check_instant(col, "time", col.take("time"))
    thing = _check_ref(col, "Thing", col.take("Thing", "thing"), EntityKind.Thing)
    if thing is None and not any(v.field == "Thing" for v in col.violations):
        col.add("MissingField", "Thing", "required field absent")
    locations = col.take("Locations", "locations")
    refs: list[EntityRef] = []
    if locations is _MISSING:
        col.add("MissingField", "Locations", "required field absent")
    elif not isinstance(locations, list):
        col.add("BadFieldType", "Locations", "expected a list of location references")
    else:
        if not locations:
            col.add("EmptyRequired", "Locations", "must list at least one location")
        for i, item in enumerate(locations):
            ref = _check_ref(col, f"Locations[{i}]", item, EntityKind.Location)
            if ref is not None:
                refs.append(ref)
    if col.violations:
        return None
    return HistoricalLocation(id=entity_id, time=time, thing=thing, locations=tuple(refs))


def _validate_sensor(col: _Collector, entity_id: int):
    name = col.text("name")
    description = col.text("description", required=False, nonempty=False) or ""
    encoding = col.text("encodingType", required=False, nonempty=False) or ""
    metadata = col.text("metadata", required=False, nonempty=False) or ""
    if col.violations:
        return None
    return Sensor(id=entity_id, name=name, description=description,
                  encodingType=encoding, metadata=metadata)


def _validate_observed_property(col: _Collector, entity_id: int):
    name = col.text("name")
    definition = col.text("definition")
    description = col.text("description", required=False, nonempty=False) or ""
    if col.violations:
        return None
    return ObservedProperty(id=entity_id, name=name, definition=definition,
                            description=description)


def _validate_datastream(col: _Collector, entity_id: int):
    name = col.text("name")
    description = col.text("description", required=False, nonempty=False) or ""
    uom_raw = col.take("unitOfMeasurement")
    uom = None
    if uom_raw is _MISSING:
        col.add("MissingField", "unitOfMeasurement", "required field absent")
    elif not isinstance(uom_raw, dict):
        col.add("BadFieldType", "unitOfMeasurement", "expected {name, symbol, definition}")
    else:
        parts = {}
        for part in ("name", "symbol", "definition"):
            v = uom_raw.get(part, "")
            if not isinstance(v, str):
                col.add("BadFieldType", f"unitOfMeasurement.{part}", "expected text")
                v = ""
            parts[part] = v
        uom = UnitOfMeasurement(**parts)
    refs = {}
    for rel, target in (("Thing", EntityKind.Thing), ("Sensor", EntityKind.Sensor),
                        ("ObservedProperty", EntityKind.ObservedProperty)):
        value = col.take(rel, rel[0].lower() + rel[1:])
        ref = _check_ref(col, rel, value, target)
        if value is _MISSING:
            col.add("MissingField", rel, "required field absent")
        refs[rel] = ref
    if col.violations:
        return None
    return Datastream(id=entity_id, name=name, description=description,
                      unitOfMeasurement=uom, thing=refs["Thing"],
                      sensor=refs["Sensor"], observedProperty=refs["ObservedProperty"])


def _validate_observation(col: _Collector, entity_id: int):
    raw_time = col.take("phenomenonTime")
    phenomenon = None
    if raw_time is _MISSING:
        col.add("MissingField", "phenomenonTime", "required field absent")
    elif isinstance(raw_time, datetime):
        phenomenon = raw_time if raw_time.tzinfo else raw_time.replace(tzinfo=timezone.utc)
    elif isinstance(raw_time, tuple) and len(raw_time) == 2:
        phenomenon = raw_time
    elif isinstance(raw_time, str):
        try:
            phenomenon = _parse_time_value(raw_time)
        except ValueError:
            col.add("BadFieldType", "phenomenonTime", "expected an instant or start/end interval")
    else:
        col.add("BadFieldType", "phenomenonTime", "expected an instant or start/end interval")
    if isinstance(phenomenon, tuple):
        start, end = phenomenon
        if start > end:
            col.add("OutOfRange", "phenomenonTime", "interval start must not exceed end")
            phenomenon = None
    raw_result = col.take("result")
    result = None
    if raw_result is _MISSING:
        col.add("MissingField", "result", "required field absent")
    else:
        result = _check_scalar(col, "result", raw_result)
    raw_result_time = col.take("resultTime")
    if raw_result_time is _MISSING or raw_result_time is None:
        # Default to the phenomenon instant (interval end) for byte-stable payloads.
        if isinstance(phenomenon, tuple):
            result_time = phenomenon[1]
        else:
            result_time = phenomenon
    else:
        result_time = _check_instant(col, "resultTime", raw_result_time)
    datastream = _check_ref(col, "Datastream", col.take("Datastream", "datastream"),
                            EntityKind.Datastream)
    foi = _check_ref(col, "FeatureOfInterest", col.take("FeatureOfInterest", "featureOfInterest"),
                     EntityKind.FeatureOfInterest)
    if col.violations:
        return None
    return Observation(id=entity_id, phenomenonTime=phenomenon, result=result,
                       resultTime=result_time, datastream=datastream,
                       featureOfInterest=foi)


def _validate_feature(col: _Collector, entity_id: int):
    name = col.text("name")
    description = col.text("description", required=False, nonempty=False) or ""
    encoding = col.text("encodingType")
    if encoding is not None and encoding != GEOJSON_ENCODING:
        col.add("BadFieldType", "encodingType", f'must be "{GEOJSON_ENCODING}"')
    point = _check_coords(col, "feature", col.take("feature"))
    if col.violations:
        return None
    return FeatureOfInterest(id=entity_id, name=name, description=description,
                             encodingType=encoding, feature=point)


_VALIDATORS = {
    EntityKind.Thing: _validate_thing,
    EntityKind.Location: _validate_location,
    EntityKind.HistoricalLocation: _validate_historical_location,
    EntityKind.Sensor: _validate_sensor,
    EntityKind.ObservedProperty: _validate_observed_property,
    EntityKind.Datastream: _validate_datastream,
    EntityKind.Observation: _validate_observation,
    EntityKind.FeatureOfInterest: _validate_feature,
}


def validate_entity(kind: EntityKind, candidate: dict, strict: bool = False, entity_id: int = 0):
    """Validate a parsed JSON field map into a typed entity.

    Raises ValidationError carrying every violation found. ``entity_id`` is a
    placeholder until the store assigns a real one (0 is allowed here only).
    Unknown fields are ignored unless ``strict``.
    """
    if not isinstance(candidate, dict):
        raise ValidationError([Violation("BadFieldType", "<body>", "expected a JSON object")])
    col = _Collector(candidate, strict)
    col.consumed.add("@iot.id")  # tolerated on echo-back payloads, never writable
    entity = _VALIDATORS[kind](col, entity_id)
    col.finish()
    if col.violations:
        raise ValidationError(col.violations)
    return entity


def entity_to_payload(entity) -> dict:
    """The client-wire field map of an entity (no id, no links), the inverse
    of validate_entity's parsing. Reference fields use {"@iot.id": n}."""
    kind = entity.kind
    if kind is EntityKind.Thing:
        out = {"name": entity.name, "description": entity.description,
               "properties": dict(entity.properties)}
        if entity.locations:
            out["Locations"] = [{"@iot.id": r.id} for r in entity.locations]
        return out
    if kind is EntityKind.Location:
        return {"name": entity.name, "description": entity.description,
                "encodingType": entity.encodingType,
                "location": entity.location.as_geojson()}
    if kind is EntityKind.HistoricalLocation:
        return {"time": format_instant(entity.time),
                "Thing": {"@iot.id": entity.thing.id},
                "Locations": [{"@iot.id": r.id} for r in entity.locations]}
    if kind is EntityKind.Sensor:
        return {"name": entity.name, "description": entity.description,
                "encodingType": entity.encodingType, "metadata": entity.metadata}
    if kind is EntityKind.ObservedProperty:
        return {"name": entity.name, "definition": entity.definition,
                "description": entity.description}
    if kind is EntityKind.Datastream:
        return {"name": entity.name, "description": entity.description,
                "unitOfMeasurement": entity.unitOfMeasurement.as_payload(),
                "Thing": {"@iot.id": entity.thing.id},
                "Sensor": {"@iot.id": entity.sensor.id},
                "ObservedProperty": {"@iot.id": entity.observedProperty.id}}
    if kind is EntityKind.Observation:
        out = {"phenomenonTime": format_time_value(entity.phenomenonTime),
               "result": entity.result,
               "resultTime": format_instant(entity.resultTime)}
        if entity.datastream is not None:
            out["Datastream"] = {"@iot.id": entity.datastream.id}
        if entity.featureOfInterest is not None:
            out["FeatureOfInterest"] = {"@iot.id": entity.featureOfInterest.id}
        return out
    if kind is EntityKind.FeatureOfInterest:
        return {"name": entity.name, "description": entity.description,
                "encodingType": entity.encodingType,
                "feature": entity.feature.as_geojson()}
    raise TypeError(f"not an entity: {entity!r}")


def with_id(entity, entity_id: int):
    return replace(entity, id=entity_id)


def derive_historical_location(thing: EntityRef, new_locations, at: datetime) -> HistoricalLocation:
    """Build the HistoricalLocation recording a Thing's location change.

    The caller persists it atomically with the location change itself; id 0
    is a placeholder for the store to fill.
    """
    refs = tuple(new_locations)
    violations = []
    if thing.kind is not EntityKind.Thing:
        violations.append(Violation("BadFieldType", "Thing", "expected a Thing reference"))
    if not refs:
        violations.append(Violation("EmptyRequired", "Locations",
                                    "a location change must list at least one location"))
    for ref in refs:
        if ref.kind is not EntityKind.Location:
            violations.append(Violation("BadFieldType", "Locations",
                                        f"expected Location references, got {ref.kind.name}"))
    if not isinstance(at, datetime):
        violations.append(Violation("BadFieldType", "time", "expected a UTC instant"))
    if violations:
        raise ValidationError(violations)
    if at.tzinfo is None:
        at = at.replace(tzinfo=timezone.utc)
    return HistoricalLocation(id=0, time=at, thing=thing, locations=refs)
