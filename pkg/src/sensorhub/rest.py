"""JSON REST surface over the entity store.

The router maps (method, path, query, body) request tuples to
(status, headers, body) triples without touching sockets, so every route is
testable in-process; the HTTP server module is a thin shell around it.

Serialization is deterministic: fixed field order, compact separators. Two
serializations of the same entity are byte-identical, which keeps payload
size comparisons exact.
"""

from __future__ import annotations

import json
import re
from urllib.parse import parse_qsl

from .entities import (
    EntityKind,
    EntityRef,
    ValidationError,
    entity_to_payload,
    format_time_value,
    navigation_map,
    validate_entity,
)
from .store import (
    BadParams,
    ConflictingSystemEntity,
    DanglingRef,
    ImmutableField,
    InUse,
    NotFound,
    QueryParams,
    Store,
    StoreError,
    StoreFull,
    UnknownRelation,
)

JSON_TYPE = "application/json"

_ENTITY_PATH = re.compile(r"^/v1\.0/([A-Za-z]+)\((\d+)\)$")
_RELATION_PATH = re.compile(r"^/v1\.0/([A-Za-z]+)\((\d+)\)/([A-Za-z]+)$")
_COLLECTION_PATH = re.compile(r"^/v1\.0/([A-Za-z]+)$")

_ALLOWED_PARAMS = ("$top", "$skip", "$count", "resultFormat")


def self_link(ref: EntityRef, base: str) -> str:
    return f"{base}/v1.0/{ref.kind.collection}({ref.id})"


def serialize_entity(entity, base: str) -> dict:
    """Entity document: @iot.id, @iot.selfLink, navigation links in
    alphabetical order, then entity fields in alphabetical order."""
    ref = EntityRef(entity.kind, entity.id)
    doc = {"@iot.id": entity.id, "@iot.selfLink": self_link(ref, base)}
    for relation in sorted(navigation_map(entity.kind)):
        doc[f"{relation}@iot.navigationLink"] = f"{self_link(ref, base)}/{relation}"
    payload = entity_to_payload(entity)
    for field in sorted(payload):
        doc[field] = payload[field]
    return doc


def serialize_data_array(observations, base: str, datastream_ref: EntityRef | None = None) -> list:
    """Group a page of observations into dataArray blocks, one per
    Datastream, rows carrying only phenomenonTime and result."""
    groups: dict[int, list] = {}
    for obs in observations:
        groups.setdefault(obs.datastream.id, []).append(
            [format_time_value(obs.phenomenonTime), obs.result])
    if not groups:
        block = {"components": ["phenomenonTime", "result"],
                 "dataArray@iot.count": 0, "dataArray": []}
        if datastream_ref is not None:
            block = {"Datastream@iot.navigationLink": self_link(datastream_ref, base), **block}
        return [block]
    blocks = []
    for ds_id in sorted(groups):
        rows = groups[ds_id]
        blocks.append({
            "Datastream@iot.navigationLink": self_link(
                EntityRef(EntityKind.Datastream, ds_id), base),
            "components": ["phenomenonTime", "result"],
            "dataArray@iot.count": len(rows),
            "dataArray": rows,
        })
    return blocks


def landing_page(base: str) -> dict:
    return {"value": [{"name": kind.collection, "url": f"{base}/v1.0/{kind.collection}"}
                      for kind in EntityKind]}


def _dump(document) -> bytes:
    return json.dumps(document, separators=(",", ":")).encode("utf-8")


class Router:
    """Dispatch REST, /sos, and /cop requests against one shared store."""

    def __init__(self, store: Store, base_url: str, max_top: int = 1000,
                 strict: bool = False, sos=None, cop=None, allow_reset: bool = True):
        self.store = store
        self.base_url = base_url.rstrip("/")
        self.max_top = max_top
        self.strict = strict
        self.sos = sos
        self.cop = cop
        self.allow_reset = allow_reset

    # -- responses -------------------------------------------------------------

    def _json(self, status: int, document, extra_headers=()):
        headers = [("Content-Type", JSON_TYPE), *extra_headers]
        return status, headers, _dump(document)

    def _error(self, status: int, code: str, message: str, violations=None):
        body = {"code": code, "message": message}
        if violations is not None:
            body["violations"] = violations
        return self._json(status, body)

    def _store_error(self, exc: StoreError):
        if isinstance(exc, NotFound):
            return self._error(404, exc.code, exc.message)
        if isinstance(exc, UnknownRelation):
            return self._error(404, exc.code, exc.message)
        if isinstance(exc, (InUse, ConflictingSystemEntity)):
            body = {"code": exc.code, "message": exc.message}
            if isinstance(exc, InUse):
                body["dependents"] = [str(r) for r in exc.dependents]
            return self._json(409, body)
        if isinstance(exc, BadParams):
            return self._error(400, exc.code, exc.message)
        if isinstance(exc, DanglingRef):
            return self._error(422, exc.code, exc.message, violations=[
                {"code": "DanglingRef", "field": exc.relation, "message": exc.message}])
        if isinstance(exc, ImmutableField):
            return self._error(422, exc.code, exc.message, violations=[
                {"code": "ImmutableField", "field": exc.field, "message": exc.message}])
        if isinstance(exc, StoreFull):
            return self._error(507, exc.code, exc.message)
        return self._error(500, exc.code, exc.message)

    # -- query parsing -----------------------------------------------------------

    def _parse_params(self, query: str) -> QueryParams:
        pairs = parse_qsl(query, keep_blank_values=True)
        seen = set()
        top = None
        skip = 0
        count = False
        result_format = "default"
        for key, value in pairs:
            if key in seen:
                raise BadParams(f"duplicate query parameter {key}")
            seen.add(key)
            if key not in _ALLOWED_PARAMS:
                raise BadParams(f"unsupported query parameter {key}")
            if key == "$top":
                if not value.isdigit():
                    raise BadParams("$top must be a non-negative integer")
                top = int(value)
                if top > self.max_top:
                    raise BadParams(f"$top must not exceed {self.max_top}")
            elif key == "$skip":
                if not value.isdigit():
                    raise BadParams("$skip must be a non-negative integer")
                skip = int(value)
            elif key == "$count":
                if value not in ("true", "false"):
                    raise BadParams("$count must be true or false")
                count = value == "true"
            elif key == "resultFormat":
                if value not in ("default", "dataArray"):
                    raise BadParams(f"unknown resultFormat {value!r}")
                result_format = value
        return QueryParams(top=top, skip=skip, count=count, result_format=result_format)

    def _next_link(self, path: str, params: QueryParams, next_offset: int) -> str:
        limit = params.top if params.top is not None else self.store.page_size
        parts = [f"$top={limit}", f"$skip={next_offset}"]
        if params.count:
            parts.append("$count=true")
        if params.result_format != "default":
            parts.append(f"resultFormat={params.result_format}")
        return f"{self.base_url}{path}?" + "&".join(parts)

    def _page_document(self, page, path: str, params: QueryParams,
                       datastream_ref: EntityRef | None = None) -> dict:
        doc: dict = {}
        if page.totalCount is not None:
            doc["@iot.count"] = page.totalCount
        if params.result_format == "dataArray":
            doc["value"] = serialize_data_array(page.items, self.base_url, datastream_ref)
        else:
            doc["value"] = [serialize_entity(e, self.base_url) for e in page.items]
        if page.nextOffset is not None:
            doc["@iot.nextLink"] = self._next_link(path, params, page.nextOffset)
        return doc

    # -- dispatch ----------------------------------------------------------------

    def dispatch(self, method: str, path: str, query: str = "", body: bytes = b""):
        """Route one request; returns (status, headers, body bytes)."""
        try:
            return self._dispatch(method, path, query, body)
        except ValidationError as exc:
            return self._error(422, "ValidationFailed",
                               f"{len(exc.violations)} violation(s)",
                               violations=[v.as_payload() for v in exc.violations])
        except StoreError as exc:
            return self._store_error(exc)

    def _dispatch(self, method: str, path: str, query: str, body: bytes):
        if path in ("/", "/v1.0", "/v1.0/"):
            if method != "GET":
                return self._error(405, "MethodNotAllowed", f"{method} not allowed here")
            return self._json(200, landing_page(self.base_url))

        if path == "/sos":
            if self.sos is None:
                return self._error(404, "UnknownRoute", "no such route")
            if method != "POST":
                return self._error(405, "MethodNotAllowed", "POST only")
            status, content_type, payload = self.sos.handle(body)
            return status, [("Content-Type", content_type)], payload

        if path == "/cop":
            if self.cop is None:
                return self._error(404, "UnknownRoute", "no such route")
            if method != "POST":
                return self._error(405, "MethodNotAllowed", "POST only")
            return self.cop.handle(body)

        if path == "/admin/reset":
            if not self.allow_reset:
                return self._error(404, "UnknownRoute", "no such route")
            if method != "POST":
                return self._error(405, "MethodNotAllowed", "POST only")
            self.store.reset()
            return self._json(200, {"status": "reset"})

        match = _COLLECTION_PATH.match(path)
        if match:
            kind = self._kind_or_none(match.group(1))
            if kind is None:
                return self._error(404, "UnknownRoute", f"unknown collection {match.group(1)!r}")
            if method == "GET":
                params = self._parse_params(query)
                page = self.store.query(kind, params)
                return self._json(200, self._page_document(page, path, params))
            if method == "POST":
                return self._create(kind, body)
            return self._error(405, "MethodNotAllowed", f"{method} not allowed on a collection")

        match = _ENTITY_PATH.match(path)
        if match:
            ref = self._ref_or_none(match.group(1), match.group(2))
            if ref is None:
                return self._error(404, "UnknownRoute", f"no such route {path!r}")
            if method == "GET":
                return self._json(200, serialize_entity(self.store.get(ref), self.base_url))
            if method == "PATCH":
                patch = self._body_json(body)
                if not isinstance(patch, dict):
                    raise BadParams("patch body must be a JSON object")
                updated = self.store.update(ref, patch, strict=self.strict)
                return self._json(200, serialize_entity(updated, self.base_url))
            if method == "DELETE":
                report = self.store.delete(ref)
                return self._json(200, {
                    "deleted": [str(r) for r in report.deleted],
                    "unlinked": [{"entity": str(r), "relation": rel}
                                 for r, rel in report.unlinked]})
            return self._error(405, "MethodNotAllowed", f"{method} not allowed on an entity")

        match = _RELATION_PATH.match(path)
        if match:
            ref = self._ref_or_none(match.group(1), match.group(2))
            if ref is None:
                return self._error(404, "UnknownRoute", f"no such route {path!r}")
            if method != "GET":
                return self._error(405, "MethodNotAllowed", "GET only on relations")
            relation = match.group(3)
            params = self._parse_params(query)
            result = self.store.navigate(ref, relation, params)
            if hasattr(result, "items"):
                datastream_ref = ref if ref.kind is EntityKind.Datastream else None
                return self._json(200, self._page_document(result, path, params, datastream_ref))
            return self._json(200, serialize_entity(result, self.base_url))

        return self._error(404, "UnknownRoute", f"no such route {path!r}")

    def _create(self, kind: EntityKind, body: bytes):
        if kind is EntityKind.HistoricalLocation:
            raise ConflictingSystemEntity(
                "HistoricalLocations are system-recorded, not client-created")
        payload = self._body_json(body)
        if not isinstance(payload, dict):
            raise BadParams("entity body must be a JSON object")
        entity = validate_entity(kind, payload, strict=self.strict)
        ref = self.store.create(entity)
        link = self_link(ref, self.base_url)
        return self._json(201, serialize_entity(self.store.get(ref), self.base_url),
                          extra_headers=[("Location", link)])

    def _body_json(self, body: bytes):
        try:
            return json.loads(body.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BadParams(f"malformed JSON body: {exc}") from None

    @staticmethod
    def _kind_or_none(collection: str):
        try:
            return EntityKind.from_collection(collection)
        except KeyError:
            return None

    def _ref_or_none(self, collection: str, id_text: str):
        kind = self._kind_or_none(collection)
        if kind is None:
            return None
        entity_id = int(id_text)
        if entity_id <= 0:
            return None
        return EntityRef(kind, entity_id)
