"""Persistent entity store: CRUD, relationship navigation, cascade deletes,
and paging over the eight entity kinds.

Durability is a single-file JSON snapshot (``store.snap``) plus a write-ahead
log (``store.wal``) under the data directory; both start with the ``STAS1``
magic header. Every mutation is one WAL line applied atomically on replay, so
compound writes (a Thing move plus its HistoricalLocation) survive together
or not at all. Pass ``data_dir=None`` for a purely in-memory store.

Concurrency: many readers or one writer at a time via a counting
readers/writer lock; id assignment happens under the writer lock.
"""

from __future__ import annotations

import json
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from .entities import (
    Datastream,
    EntityKind,
    EntityRef,
    FeatureOfInterest,
    HistoricalLocation,
    Location,
    Observation,
    ObservedProperty,
    Point,
    Sensor,
    Thing,
    UnitOfMeasurement,
    derive_historical_location,
    format_instant,
    format_time_value,
    parse_instant,
)

MAGIC = b"STAS1\n"
DEFAULT_PAGE_SIZE = 100
DEFAULT_MAX_TOP = 1000
WAL_CHECKPOINT_LINES = 10_000


class StoreError(Exception):
    code = "StoreError"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class NotFound(StoreError):
    code = "NotFound"


class DanglingRef(StoreError):
    code = "DanglingRef"

    def __init__(self, relation: str, message: str = ""):
        super().__init__(message or f"reference through {relation} does not resolve")
        self.relation = relation


class InUse(StoreError):
    code = "InUse"

    def __init__(self, dependents):
        self.dependents = list(dependents)
        refs = ", ".join(str(r) for r in self.dependents)
        super().__init__(f"entity is referenced by: {refs}")


class ImmutableField(StoreError):
    code = "ImmutableField"

    def __init__(self, field: str):
        super().__init__(f"field {field!r} is immutable")
        self.field = field


class ConflictingSystemEntity(StoreError):
    code = "ConflictingSystemEntity"


class BadParams(StoreError):
    code = "BadParams"


class StoreFull(StoreError):
    code = "StoreFull"


class UnknownRelation(StoreError):
    code = "UnknownRelation"


@dataclass(frozen=True)
class QueryParams:
    """Collection query window; resultFormat=dataArray is legal only on
    Observation collections."""

    top: int | None = None
    skip: int = 0
    count: bool = False
    result_format: str = "default"


@dataclass
class Page:
    items: list
    totalCount: int | None = None
    nextOffset: int | None = None


@dataclass
class CascadeReport:
    deleted: list
    unlinked: list  # (EntityRef, relation name) of surviving entities that lost a link


class _ReadWriteLock:
    """Counting readers / single writer. Not reentrant."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def reading(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def writing(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


# --- entity <-> plain-JSON state used by snapshot and WAL ------------------


def entity_to_state(entity) -> dict:
    kind = entity.kind
    if kind is EntityKind.Thing:
        return {"name": entity.name, "description": entity.description,
                "properties": dict(entity.properties),
                "locations": [r.id for r in entity.locations]}
    if kind is EntityKind.Location:
        return {"name": entity.name, "description": entity.description,
                "encodingType": entity.encodingType,
                "lon": entity.location.lon, "lat": entity.location.lat}
    if kind is EntityKind.HistoricalLocation:
        return {"time": format_instant(entity.time), "thing": entity.thing.id,
                "locations": [r.id for r in entity.locations]}
    if kind is EntityKind.Sensor:
        return {"name": entity.name, "description": entity.description,
                "encodingType": entity.encodingType, "metadata": entity.metadata}
    if kind is EntityKind.ObservedProperty:
        return {"name": entity.name, "definition": entity.definition,
                "description": entity.description}
    if kind is EntityKind.Datastream:
        uom = entity.unitOfMeasurement
        return {"name": entity.name, "description": entity.description,
                "uom": {"name": uom.name, "symbol": uom.symbol, "definition": uom.definition},
                "thing": entity.thing.id, "sensor": entity.sensor.id,
                "observedProperty": entity.observedProperty.id}
    if kind is EntityKind.Observation:
        return {"phenomenonTime": format_time_value(entity.phenomenonTime),
                "result": entity.result,
                "resultTime": format_instant(entity.resultTime),
                "datastream": entity.datastream.id,
                "featureOfInterest": entity.featureOfInterest.id}
    if kind is EntityKind.FeatureOfInterest:
        return {"name": entity.name, "description": entity.description,
                "encodingType": entity.encodingType,
                "lon": entity.feature.lon, "lat": entity.feature.lat}
    raise TypeError(f"not an entity: {entity!r}")


def entity_from_state(kind: EntityKind, entity_id: int, state: dict):
    if kind is EntityKind.Thing:
        return Thing(id=entity_id, name=state["name"], description=state["description"],
                     properties=dict(state["properties"]),
                     locations=tuple(EntityRef(EntityKind.Location, i) for i in state["locations"]))
    if kind is EntityKind.Location:
        return Location(id=entity_id, name=state["name"], description=state["description"],
                        encodingType=state["encodingType"],
                        location=Point(lon=state["lon"], lat=state["lat"]))
    if kind is EntityKind.HistoricalLocation:
        return HistoricalLocation(
            id=entity_id, time=parse_instant(state["time"]),
            thing=EntityRef(EntityKind.Thing, state["thing"]),
            locations=tuple(EntityRef(EntityKind.Location, i) for i in state["locations"]))
    if kind is EntityKind.Sensor:
        return Sensor(id=entity_id, name=state["name"], description=state["description"],
                      encodingType=state["encodingType"], metadata=state["metadata"])
    if kind is EntityKind.ObservedProperty:
        return ObservedProperty(id=entity_id, name=state["name"],
                                definition=state["definition"],
                                description=state["description"])
    if kind is EntityKind.Datastream:
        uom = state["uom"]
        return Datastream(id=entity_id, name=state["name"], description=state["description"],
                          unitOfMeasurement=UnitOfMeasurement(**uom),
                          thing=EntityRef(EntityKind.Thing, state["thing"]),
                          sensor=EntityRef(EntityKind.Sensor, state["sensor"]),
                          observedProperty=EntityRef(EntityKind.ObservedProperty,
                                                     state["observedProperty"]))
    if kind is EntityKind.Observation:
        raw = state["phenomenonTime"]
        if "/" in raw:
            start, end = raw.split("/", 1)
            phenomenon = (parse_instant(start), parse_instant(end))
        else:
            phenomenon = parse_instant(raw)
        return Observation(id=entity_id, phenomenonTime=phenomenon, result=state["result"],
                           resultTime=parse_instant(state["resultTime"]),
                           datastream=EntityRef(EntityKind.Datastream, state["datastream"]),
                           featureOfInterest=EntityRef(EntityKind.FeatureOfInterest,
                                                       state["featureOfInterest"]))
    if kind is EntityKind.FeatureOfInterest:
        return FeatureOfInterest(id=entity_id, name=state["name"],
                                 description=state["description"],
                                 encodingType=state["encodingType"],
                                 feature=Point(lon=state["lon"], lat=state["lat"]))
    raise KeyError(kind)


class Store:
    """Queryable persistent store shared by the REST, SOS, and cop surfaces."""

    def __init__(self, data_dir=None, max_top: int = DEFAULT_MAX_TOP,
                 page_size: int = DEFAULT_PAGE_SIZE, max_entities: int | None = None):
        self.max_top = max_top
        self.page_size = page_size
        self.max_entities = max_entities
        self._lock = _ReadWriteLock()
        self._entities: dict[EntityKind, dict[int, object]] = {k: {} for k in EntityKind}
        self._counters: dict[EntityKind, int] = {k: 0 for k in EntityKind}
        self._registries: dict[str, dict[str, object]] = {}
        self._foi_by_coords: dict[tuple, int] = {}
        self._data_dir = Path(data_dir) if data_dir is not None else None
        self._wal = None
        self._wal_lines = 0
        self._closed = False
        if self._data_dir is not None:
            self._data_dir.mkdir(parents=True, exist_ok=True)
            self._load()
            self._open_wal()

    # -- persistence ---------------------------------------------------------

    @property
    def snapshot_path(self):
        return None if self._data_dir is None else self._data_dir / "store.snap"

    @property
    def wal_path(self):
        return None if self._data_dir is None else self._data_dir / "store.wal"

    def _load(self):
        snap = self.snapshot_path
        if snap.exists():
            blob = snap.read_bytes()
            if not blob.startswith(MAGIC):
                raise StoreError(f"{snap} is not a {MAGIC.strip().decode()} snapshot")
            state = json.loads(blob[len(MAGIC):].decode("utf-8"))
            for kind_name, per_id in state["entities"].items():
                kind = EntityKind[kind_name]
                for id_text, entity_state in per_id.items():
                    entity_id = int(id_text)
                    self._entities[kind][entity_id] = entity_from_state(kind, entity_id, entity_state)
            for kind_name, value in state["counters"].items():
                self._counters[EntityKind[kind_name]] = value
            self._registries = {ns: dict(v) for ns, v in state["registries"].items()}
        wal = self.wal_path
        if wal.exists():
            with wal.open("rb") as fh:
                header = fh.read(len(MAGIC))
                if header != MAGIC:
                    raise StoreError(f"{wal} is not a {MAGIC.strip().decode()} log")
                for line in fh:
                    try:
                        record = json.loads(line.decode("utf-8"))
                    except (json.JSONDecodeError, UnicodeDecodeError):
                        break  # torn tail from an interrupted write
                    self._apply_record(record)
        self._rebuild_foi_index()

    def _apply_record(self, record: dict):
        if record.get("reset"):
            self._entities = {k: {} for k in EntityKind}
            self._counters = {k: 0 for k in EntityKind}
            self._registries = {}
            return
        for kind_name, entity_id, state in record.get("puts", ()):
            kind = EntityKind[kind_name]
            self._entities[kind][entity_id] = entity_from_state(kind, entity_id, state)
            if entity_id > self._counters[kind]:
                self._counters[kind] = entity_id
        for kind_name, entity_id in record.get("dels", ()):
            self._entities[EntityKind[kind_name]].pop(entity_id, None)
        for ns, key, value in record.get("regs", ()):
            self._registries.setdefault(ns, {})[key] = value

    def _rebuild_foi_index(self):
        self._foi_by_coords = {}
        for foi in self._entities[EntityKind.FeatureOfInterest].values():
            key = (foi.feature.lon, foi.feature.lat)
            self._foi_by_coords.setdefault(key, foi.id)

    def _open_wal(self):
        fresh = not self.wal_path.exists()
        self._wal = self.wal_path.open("ab")
        if fresh:
            self._wal.write(MAGIC)
            self._wal.flush()

    def _commit(self, puts=(), dels=(), regs=()):
        """Persist one atomic mutation batch; in-memory state is already updated."""
        if self._wal is None:
            return
        record = {}
        if puts:
            record["puts"] = [[e.kind.name, e.id, entity_to_state(e)] for e in puts]
        if dels:
            record["dels"] = [[r.kind.name, r.id] for r in dels]
        if regs:
            record["regs"] = [[ns, key, value] for ns, key, value in regs]
        self._wal.write(json.dumps(record, separators=(",", ":")).encode("utf-8") + b"\n")
        self._wal.flush()
        self._wal_lines += 1
        if self._wal_lines >= WAL_CHECKPOINT_LINES:
            self._checkpoint_unlocked()

    def _checkpoint_unlocked(self):
        if self._data_dir is None:
            return
        state = {
            "counters": {k.name: v for k, v in self._counters.items()},
            "entities": {k.name: {str(i): entity_to_state(e) for i, e in per.items()}
                         for k, per in self._entities.items()},
            "registries": self._registries,
        }
        tmp = self.snapshot_path.with_suffix(".tmp")
        with tmp.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(json.dumps(state, separators=(",", ":")).encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(self.snapshot_path)
        if self._wal is not None:
            self._wal.close()
        with self.wal_path.open("wb") as fh:
            fh.write(MAGIC)
        self._wal = self.wal_path.open("ab")
        self._wal_lines = 0

    def checkpoint(self):
        with self._lock.writing():
            self._checkpoint_unlocked()

    def close(self):
        if self._closed:
            return
        with self._lock.writing():
            self._checkpoint_unlocked()
            if self._wal is not None:
                self._wal.close()
                self._wal = None
        self._closed = True

    def reset(self):
        """Wipe all entities, counters, and registries (benchmark reseeding)."""
        with self._lock.writing():
            self._entities = {k: {} for k in EntityKind}
            self._counters = {k: 0 for k in EntityKind}
            self._registries = {}
            self._foi_by_coords = {}
            if self._wal is not None:
                record = json.dumps({"reset": True}, separators=(",", ":"))
                self._wal.write(record.encode("utf-8") + b"\n")
                self._wal.flush()
                self._checkpoint_unlocked()

    # -- internals (call with the writer or reader lock held) -----------------

    def _exists(self, ref: EntityRef) -> bool:
        return ref.id in self._entities[ref.kind]

    def _require(self, ref: EntityRef):
        entity = self._entities[ref.kind].get(ref.id)
        if entity is None:
            raise NotFound(f"{ref} does not exist")
        return entity

    def _next_id(self, kind: EntityKind) -> int:
        self._counters[kind] += 1
        return self._counters[kind]

    def _check_capacity(self, new_entities: int):
        if self.max_entities is None:
            return
        total = sum(len(per) for per in self._entities.values())
        if total + new_entities > self.max_entities:
            raise StoreFull(f"store limited to {self.max_entities} entities")

    def _resolve_or_raise(self, ref: EntityRef | None, relation: str):
        if ref is None:
            raise DanglingRef(relation, f"required relation {relation} absent")
        if not self._exists(ref):
            raise DanglingRef(relation, f"{relation} -> {ref} does not resolve")
        return ref

    def _find_or_create_foi(self, point: Point, name: str, description: str, puts: list):
        key = (point.lon, point.lat)
        existing = self._foi_by_coords.get(key)
        if existing is not None and existing in self._entities[EntityKind.FeatureOfInterest]:
            return EntityRef(EntityKind.FeatureOfInterest, existing)
        foi = FeatureOfInterest(id=self._next_id(EntityKind.FeatureOfInterest),
                                name=name, description=description,
                                encodingType="application/geo+json", feature=point)
        self._entities[EntityKind.FeatureOfInterest][foi.id] = foi
        self._foi_by_coords[key] = foi.id
        puts.append(foi)
        return EntityRef(EntityKind.FeatureOfInterest, foi.id)

    def _auto_foi_for(self, datastream_ref: EntityRef, puts: list) -> EntityRef:
        """Observation posted without a FeatureOfInterest: derive one from the
        Thing's current Location, deduplicated by coordinates."""
        datastream = self._require(datastream_ref)
        thing = self._require(datastream.thing)
        if not thing.locations:
            raise DanglingRef("FeatureOfInterest",
                              f"cannot derive a FeatureOfInterest: {datastream.thing} has no Location")
        location = self._require(thing.locations[0])
        return self._find_or_create_foi(location.location, location.name,
                                        location.description, puts)

    def _emit_historical_location(self, thing_ref: EntityRef, locations, at: datetime, puts: list):
        hl = derive_historical_location(thing_ref, locations, at)
        hl = replace(hl, id=self._next_id(EntityKind.HistoricalLocation))
        self._entities[EntityKind.HistoricalLocation][hl.id] = hl
        puts.append(hl)

    # -- CRUD -----------------------------------------------------------------

    def create(self, entity, at: datetime | None = None) -> EntityRef:
        """Persist a validated entity and return its fresh reference.

        A Thing created with Locations records the link as a location change;
        an Observation without a FeatureOfInterest gets one derived from its
        Thing's current Location.
        """
        kind = entity.kind
        if kind is EntityKind.HistoricalLocation:
            raise ConflictingSystemEntity(
                "HistoricalLocations are system-recorded, not client-created")
        at = at or datetime.now(timezone.utc)
        with self._lock.writing():
            self._check_capacity(1)
            puts: list = []
            if kind is EntityKind.Thing:
                for ref in entity.locations:
                    self._resolve_or_raise(ref, "Locations")
            elif kind is EntityKind.Datastream:
                self._resolve_or_raise(entity.thing, "Thing")
                self._resolve_or_raise(entity.sensor, "Sensor")
                self._resolve_or_raise(entity.observedProperty, "ObservedProperty")
            elif kind is EntityKind.Observation:
                self._resolve_or_raise(entity.datastream, "Datastream")
                if entity.featureOfInterest is not None:
                    self._resolve_or_raise(entity.featureOfInterest, "FeatureOfInterest")
                else:
                    foi_ref = self._auto_foi_for(entity.datastream, puts)
                    entity = replace(entity, featureOfInterest=foi_ref)
            entity = replace(entity, id=self._next_id(kind))
            self._entities[kind][entity.id] = entity
            puts.append(entity)
            ref = EntityRef(kind, entity.id)
            if kind is EntityKind.Thing and entity.locations:
                self._emit_historical_location(ref, entity.locations, at, puts)
            self._commit(puts=puts)
            return ref

    def get(self, ref: EntityRef):
        with self._lock.reading():
            return self._require(ref)

    def update(self, ref: EntityRef, patch: dict, at: datetime | None = None,
               strict: bool = False):
        """Merge-patch an entity: absent fields untouched, explicit null
        clears optional fields. Returns the stored result."""
        from .entities import entity_to_payload, validate_entity

        if not isinstance(patch, dict):
            raise BadParams("patch must be a field map")
        if ref.kind is EntityKind.HistoricalLocation:
            raise ConflictingSystemEntity("HistoricalLocations are system-managed")
        for immutable in ("@iot.id", "id"):
            if immutable in patch:
                raise ImmutableField("id")
        if "HistoricalLocations" in patch:
            raise ImmutableField("HistoricalLocations")
        at = at or datetime.now(timezone.utc)
        with self._lock.writing():
            current = self._require(ref)
            merged = entity_to_payload(current)
            for key, value in patch.items():
                if value is None:
                    merged.pop(key, None)
                else:
                    merged[key] = value
            updated = validate_entity(ref.kind, merged, strict=strict, entity_id=ref.id)
            updated = replace(updated, id=ref.id)
            puts: list = []
            if ref.kind is EntityKind.Thing:
                for loc_ref in updated.locations:
                    self._resolve_or_raise(loc_ref, "Locations")
            elif ref.kind is EntityKind.Datastream:
                self._resolve_or_raise(updated.thing, "Thing")
                self._resolve_or_raise(updated.sensor, "Sensor")
                self._resolve_or_raise(updated.observedProperty, "ObservedProperty")
            elif ref.kind is EntityKind.Observation:
                self._resolve_or_raise(updated.datastream, "Datastream")
                if updated.featureOfInterest is not None:
                    self._resolve_or_raise(updated.featureOfInterest, "FeatureOfInterest")
                else:
                    foi_ref = self._auto_foi_for(updated.datastream, puts)
                    updated = replace(updated, featureOfInterest=foi_ref)
            self._entities[ref.kind][ref.id] = updated
            puts.append(updated)
            if ref.kind is EntityKind.Thing and updated.locations != current.locations \
                    and updated.locations:
                self._emit_historical_location(ref, updated.locations, at, puts)
            self._commit(puts=puts)
            return updated

    def delete(self, ref: EntityRef) -> CascadeReport:
        """Delete with cascade: a Thing takes its Datastreams and
        HistoricalLocations, a Datastream takes its Observations. Deleting a
        Sensor, ObservedProperty, or FeatureOfInterest that is still
        referenced is refused. Deleting a Location unlinks it everywhere; a
        HistoricalLocation left with no locations is deleted with it.
        """
        with self._lock.writing():
            self._require(ref)
            if ref.kind in (EntityKind.Sensor, EntityKind.ObservedProperty):
                field = "sensor" if ref.kind is EntityKind.Sensor else "observedProperty"
                dependents = [EntityRef(EntityKind.Datastream, d.id)
                              for d in self._entities[EntityKind.Datastream].values()
                              if getattr(d, field) == ref]
                if dependents:
                    raise InUse(sorted(dependents))
            if ref.kind is EntityKind.FeatureOfInterest:
                dependents = [EntityRef(EntityKind.Observation, o.id)
                              for o in self._entities[EntityKind.Observation].values()
                              if o.featureOfInterest == ref]
                if dependents:
                    raise InUse(sorted(dependents))

            deleted: list[EntityRef] = []
            seen: set[EntityRef] = set()
            modified: dict[EntityRef, object] = {}
            unlinked: list[tuple] = []

            def visit(target: EntityRef):
                if target in seen:
                    return
                seen.add(target)
                deleted.append(target)
                if target.kind is EntityKind.Thing:
                    for hl in sorted(self._entities[EntityKind.HistoricalLocation].values(),
                                     key=lambda e: e.id):
                        if hl.thing == target:
                            visit(EntityRef(EntityKind.HistoricalLocation, hl.id))
                    for ds in sorted(self._entities[EntityKind.Datastream].values(),
                                     key=lambda e: e.id):
                        if ds.thing == target:
                            visit(EntityRef(EntityKind.Datastream, ds.id))
                elif target.kind is EntityKind.Datastream:
                    for obs in sorted(self._entities[EntityKind.Observation].values(),
                                      key=lambda e: e.id):
                        if obs.datastream == target:
                            visit(EntityRef(EntityKind.Observation, obs.id))

            visit(ref)

            if ref.kind is EntityKind.Location:
                for thing in sorted(self._entities[EntityKind.Thing].values(),
                                    key=lambda e: e.id):
                    if ref in thing.locations:
                        remaining = tuple(r for r in thing.locations if r != ref)
                        modified[EntityRef(EntityKind.Thing, thing.id)] = \
                            replace(thing, locations=remaining)
                        unlinked.append((EntityRef(EntityKind.Thing, thing.id), "Locations"))
                for hl in sorted(self._entities[EntityKind.HistoricalLocation].values(),
                                 key=lambda e: e.id):
                    if ref in hl.locations:
                        remaining = tuple(r for r in hl.locations if r != ref)
                        hl_ref = EntityRef(EntityKind.HistoricalLocation, hl.id)
                        if remaining:
                            modified[hl_ref] = replace(hl, locations=remaining)
                            unlinked.append((hl_ref, "Locations"))
                        elif hl_ref not in seen:
                            seen.add(hl_ref)
                            deleted.append(hl_ref)

            for target in deleted:
                self._entities[target.kind].pop(target.id, None)
                modified.pop(target, None)
            for target, entity in modified.items():
                self._entities[target.kind][target.id] = entity
            if ref.kind is EntityKind.FeatureOfInterest or \
                    any(t.kind is EntityKind.FeatureOfInterest for t in deleted):
                self._rebuild_foi_index()
            self._commit(puts=list(modified.values()), dels=deleted)
            return CascadeReport(deleted=deleted, unlinked=unlinked)

    # -- queries ---------------------------------------------------------------

    def _check_params(self, params: QueryParams, target: EntityKind):
        if params.top is not None and (params.top < 0 or params.top > self.max_top):
            raise BadParams(f"$top must be in [0, {self.max_top}]")
        if params.skip < 0:
            raise BadParams("$skip must be non-negative")
        if params.result_format not in ("default", "dataArray"):
            raise BadParams(f"unknown resultFormat {params.result_format!r}")
        if params.result_format == "dataArray" and target is not EntityKind.Observation:
            raise BadParams("resultFormat=dataArray applies to Observation collections only")

    def _window(self, entities: list, params: QueryParams) -> Page:
        limit = params.top if params.top is not None else self.page_size
        window = entities[params.skip:params.skip + limit]
        more = params.skip + limit < len(entities)
        return Page(items=window,
                    totalCount=len(entities) if params.count else None,
                    nextOffset=params.skip + limit if more else None)

    def query(self, kind: EntityKind, params: QueryParams = QueryParams()) -> Page:
        """Page through one collection, ordered by ascending id."""
        self._check_params(params, kind)
        with self._lock.reading():
            entities = [self._entities[kind][i] for i in sorted(self._entities[kind])]
            return self._window(entities, params)

    def navigate(self, ref: EntityRef, relation: str, params: QueryParams = QueryParams()):
        """Follow one relation: many-side relations return a Page, one-side
        relations return the single entity."""
        from .entities import navigation_map

        relations = navigation_map(ref.kind)
        if relation not in relations:
            raise UnknownRelation(f"{ref.kind.name} has no relation {relation!r}")
        target_kind, is_many = relations[relation]
        if is_many:
            self._check_params(params, target_kind)
        with self._lock.reading():
            entity = self._require(ref)
            if not is_many:
                if relation == "Thing":
                    return self._require(entity.thing)
                if relation == "Sensor":
                    return self._require(entity.sensor)
                if relation == "ObservedProperty":
                    return self._require(entity.observedProperty)
                if relation == "Datastream":
                    return self._require(entity.datastream)
                if relation == "FeatureOfInterest":
                    return self._require(entity.featureOfInterest)
                raise UnknownRelation(relation)
            matches = self._related_unlocked(entity, ref, relation, target_kind)
            return self._window(matches, params)

    def _related_unlocked(self, entity, ref: EntityRef, relation: str,
                          target_kind: EntityKind) -> list:
        per = self._entities[target_kind]
        if ref.kind is EntityKind.Thing and relation == "Locations":
            ids = sorted(r.id for r in entity.locations)
            return [per[i] for i in ids if i in per]
        if ref.kind is EntityKind.HistoricalLocation and relation == "Locations":
            ids = sorted(r.id for r in entity.locations)
            return [per[i] for i in ids if i in per]
        if relation == "Things":
            return [per[i] for i in sorted(per) if ref in per[i].locations]
        if relation == "HistoricalLocations":
            if ref.kind is EntityKind.Thing:
                return [per[i] for i in sorted(per) if per[i].thing == ref]
            return [per[i] for i in sorted(per) if ref in per[i].locations]
        if relation == "Datastreams":
            field = {EntityKind.Thing: "thing", EntityKind.Sensor: "sensor",
                     EntityKind.ObservedProperty: "observedProperty"}[ref.kind]
            return [per[i] for i in sorted(per) if getattr(per[i], field) == ref]
        if relation == "Observations":
            field = "datastream" if ref.kind is EntityKind.Datastream else "featureOfInterest"
            return [per[i] for i in sorted(per) if getattr(per[i], field) == ref]
        raise UnknownRelation(relation)

    # -- registries and helpers -------------------------------------------------

    def registry_put(self, namespace: str, key: str, value):
        """Durable auxiliary key-value state (procedure registry, dedup index)."""
        with self._lock.writing():
            self._registries.setdefault(namespace, {})[key] = value
            self._commit(regs=[(namespace, key, value)])

    def registry_get(self, namespace: str, key: str, default=None):
        with self._lock.reading():
            return self._registries.get(namespace, {}).get(key, default)

    def registry_items(self, namespace: str) -> dict:
        with self._lock.reading():
            return dict(self._registries.get(namespace, {}))

    def find_or_create_foi(self, point: Point, name: str, description: str = "") -> EntityRef:
        with self._lock.writing():
            puts: list = []
            ref = self._find_or_create_foi(point, name, description, puts)
            if puts:
                self._commit(puts=puts)
            return ref

    def count(self, kind: EntityKind) -> int:
        with self._lock.reading():
            return len(self._entities[kind])

    def total_entities(self) -> int:
        with self._lock.reading():
            return sum(len(per) for per in self._entities.values())

    def all_entities(self, kind: EntityKind) -> list:
        with self._lock.reading():
            return [self._entities[kind][i] for i in sorted(self._entities[kind])]

    def counters(self) -> dict:
        with self._lock.reading():
            return dict(self._counters)
