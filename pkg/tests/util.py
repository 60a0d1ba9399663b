"""Shared test helpers: an in-process HTTP-shaped client over the router, a
link crawler, a referential-integrity scanner, and an independent cascade
oracle the store implementation is checked against."""

from __future__ import annotations

import json

from sensorhub.entities import EntityKind, EntityRef


class Response:
    def __init__(self, status, headers, body):
        self.status = status
        self.headers = dict(headers)
        self.body = body

    def json(self):
        return json.loads(self.body.decode("utf-8"))


class RouterClient:
    """Requests against a Router without sockets."""

    def __init__(self, router):
        self.router = router

    def request(self, method, path, query="", body=None) -> Response:
        if isinstance(body, (dict, list)):
            body = json.dumps(body).encode("utf-8")
        elif isinstance(body, str):
            body = body.encode("utf-8")
        elif body is None:
            body = b""
        return Response(*self.router.dispatch(method, path, query, body))

    def get(self, path, query=""):
        return self.request("GET", path, query)

    def post(self, path, body, query=""):
        return self.request("POST", path, query, body)

    def patch(self, path, body):
        return self.request("PATCH", path, "", body)

    def delete(self, path):
        return self.request("DELETE", path)


# -- link crawling ---------------------------------------------------------------


def _collect_links(node, links):
    if isinstance(node, dict):
        for key, value in node.items():
            if key == "url" or key.endswith("@iot.selfLink") \
                    or key.endswith("@iot.navigationLink") or key == "@iot.nextLink":
                if isinstance(value, str):
                    links.add(value)
            else:
                _collect_links(value, links)
    elif isinstance(node, list):
        for item in node:
            _collect_links(item, links)


def crawl(fetch, start_url: str):
    """Follow every link reachable from start_url exactly once.

    fetch(url) -> (status, parsed JSON or None). Returns (statuses by url,
    set of @iot.selfLink values seen anywhere).
    """
    pending = {start_url}
    statuses: dict = {}
    self_links: set = set()
    while pending:
        url = pending.pop()
        if url in statuses:
            continue
        status, doc = fetch(url)
        statuses[url] = status
        if doc is None:
            continue
        links: set = set()
        _collect_links(doc, links)
        _collect_self_links(doc, self_links)
        pending.update(link for link in links if link not in statuses)
    return statuses, self_links


def _collect_self_links(node, out):
    if isinstance(node, dict):
        link = node.get("@iot.selfLink")
        if isinstance(link, str):
            out.add(link)
        for value in node.values():
            _collect_self_links(value, out)
    elif isinstance(node, list):
        for item in node:
            _collect_self_links(item, out)


# -- store-state oracles ---------------------------------------------------------


def snapshot_graph(store) -> dict:
    return {kind: {e.id: e for e in store.all_entities(kind)} for kind in EntityKind}


def integrity_violations(store) -> list:
    """Full scan: every stored reference must resolve; no system entity may be
    left degenerate. Returns human-readable violation strings."""
    graph = snapshot_graph(store)

    def resolves(ref):
        return ref.id in graph[ref.kind]

    problems = []
    for thing in graph[EntityKind.Thing].values():
        for ref in thing.locations:
            if not resolves(ref):
                problems.append(f"Things({thing.id}) links missing {ref}")
    for hl in graph[EntityKind.HistoricalLocation].values():
        if not resolves(hl.thing):
            problems.append(f"HistoricalLocations({hl.id}) references missing {hl.thing}")
        if not hl.locations:
            problems.append(f"HistoricalLocations({hl.id}) has no locations")
        for ref in hl.locations:
            if not resolves(ref):
                problems.append(f"HistoricalLocations({hl.id}) links missing {ref}")
    for ds in graph[EntityKind.Datastream].values():
        for ref in (ds.thing, ds.sensor, ds.observedProperty):
            if not resolves(ref):
                problems.append(f"Datastreams({ds.id}) references missing {ref}")
    for obs in graph[EntityKind.Observation].values():
        for ref in (obs.datastream, obs.featureOfInterest):
            if ref is None or not resolves(ref):
                problems.append(f"Observations({obs.id}) references missing {ref}")
    return problems


def cascade_oracle(graph: dict, ref: EntityRef):
    """Expected delete outcome, derived from the documented rules by brute
    force over a pre-delete snapshot: a Thing owns its HistoricalLocations
    and Datastreams, a Datastream owns its Observations; deleting a Location
    unlinks it from Things and HistoricalLocations, and a HistoricalLocation
    left empty goes too. Returns (deleted id-pairs, unlinked pairs)."""
    deleted: set = set()

    def own(target: EntityRef):
        if target in deleted:
            return
        deleted.add(target)
        if target.kind is EntityKind.Thing:
            for hl in graph[EntityKind.HistoricalLocation].values():
                if hl.thing == target:
                    own(EntityRef(EntityKind.HistoricalLocation, hl.id))
            for ds in graph[EntityKind.Datastream].values():
                if ds.thing == target:
                    own(EntityRef(EntityKind.Datastream, ds.id))
        elif target.kind is EntityKind.Datastream:
            for obs in graph[EntityKind.Observation].values():
                if obs.datastream == target:
                    own(EntityRef(EntityKind.Observation, obs.id))

    own(ref)
    unlinked: set = set()
    if ref.kind is EntityKind.Location:
        for thing in graph[EntityKind.Thing].values():
            if ref in thing.locations:
                unlinked.add((EntityRef(EntityKind.Thing, thing.id), "Locations"))
        for hl in graph[EntityKind.HistoricalLocation].values():
            if ref in hl.locations:
                if all(r == ref for r in hl.locations):
                    deleted.add(EntityRef(EntityKind.HistoricalLocation, hl.id))
                else:
                    unlinked.add((EntityRef(EntityKind.HistoricalLocation, hl.id),
                                  "Locations"))
    return deleted, unlinked


def dependents_oracle(graph: dict, ref: EntityRef) -> set:
    """Refs that must block deletion of a Sensor/ObservedProperty/FoI."""
    out: set = set()
    if ref.kind is EntityKind.Sensor:
        out = {EntityRef(EntityKind.Datastream, d.id)
               for d in graph[EntityKind.Datastream].values() if d.sensor == ref}
    elif ref.kind is EntityKind.ObservedProperty:
        out = {EntityRef(EntityKind.Datastream, d.id)
               for d in graph[EntityKind.Datastream].values() if d.observedProperty == ref}
    elif ref.kind is EntityKind.FeatureOfInterest:
        out = {EntityRef(EntityKind.Observation, o.id)
               for o in graph[EntityKind.Observation].values() if o.featureOfInterest == ref}
    return out


# -- payload builders --------------------------------------------------------------


def location_payload(n=1, lat=52.51, lon=13.35):
    return {"name": f"site-{n}", "description": f"monitoring site {n}",
            "encodingType": "application/geo+json",
            "location": {"type": "Point", "coordinates": [lon, lat]}}


def thing_payload(n=1, location_ids=()):
    payload = {"name": f"station-{n}", "description": f"sensing station {n}",
               "properties": {"serial": f"SN-{n:04d}"}}
    if location_ids:
        payload["Locations"] = [{"@iot.id": i} for i in location_ids]
    return payload


def sensor_payload(n=1):
    return {"name": f"sensor-{n}", "description": "contact thermometer",
            "encodingType": "application/pdf", "metadata": f"urn:x-test:sensor:{n}"}


def observed_property_payload(n=1):
    return {"name": f"property-{n}", "definition": f"urn:x-test:property:{n}",
            "description": "a measured quantity"}


def datastream_payload(thing_id, sensor_id, op_id, n=1):
    return {"name": f"stream-{n}", "description": "measurements",
            "unitOfMeasurement": {"name": "degree Celsius", "symbol": "Cel",
                                  "definition": "urn:x-test:unit:Cel"},
            "Thing": {"@iot.id": thing_id}, "Sensor": {"@iot.id": sensor_id},
            "ObservedProperty": {"@iot.id": op_id}}


def observation_payload(datastream_id, when="2020-04-01T10:00:00Z", result=38.2,
                        foi_id=None):
    payload = {"phenomenonTime": when, "result": result,
               "Datastream": {"@iot.id": datastream_id}}
    if foi_id is not None:
        payload["FeatureOfInterest"] = {"@iot.id": foi_id}
    return payload


def foi_payload(n=1, lat=48.0, lon=11.0):
    return {"name": f"feature-{n}", "description": "where it was measured",
            "encodingType": "application/geo+json",
            "feature": {"type": "Point", "coordinates": [lon, lat]}}
