import json
from concurrent.futures import ThreadPoolExecutor

import pytest
import requests

from sensorhub.cop import CopIngestor
from sensorhub.entities import EntityKind
from sensorhub.rest import Router
from sensorhub.sos import SosService
from sensorhub.store import Store

import util


def seed(client, datastreams=1, observations=2):
    """Stand up one located Thing with datastreams over the REST surface."""
    loc = client.post("/v1.0/Locations", util.location_payload()).json()["@iot.id"]
    thing = client.post("/v1.0/Things",
                        util.thing_payload(location_ids=[loc])).json()["@iot.id"]
    sensor = client.post("/v1.0/Sensors", util.sensor_payload()).json()["@iot.id"]
    ds_ids = []
    for n in range(1, datastreams + 1):
        prop = client.post("/v1.0/ObservedProperties",
                           util.observed_property_payload(n)).json()["@iot.id"]
        ds = client.post("/v1.0/Datastreams",
                         util.datastream_payload(thing, sensor, prop, n)).json()["@iot.id"]
        ds_ids.append(ds)
        for k in range(observations):
            r = client.post("/v1.0/Observations", util.observation_payload(
                ds, when=f"2020-04-01T10:{k:02d}:00Z", result=20.0 + k))
            assert r.status == 201
    return {"loc": loc, "thing": thing, "sensor": sensor, "ds": ds_ids}


# -- landing page -------------------------------------------------------------------


def test_landing_page_lists_all_collections(client):
    for path in ("/", "/v1.0", "/v1.0/"):
        doc = client.get(path).json()
        assert [e["name"] for e in doc["value"]] == [
            "Things", "Locations", "HistoricalLocations", "Sensors",
            "ObservedProperties", "Datastreams", "Observations", "FeaturesOfInterest"]
        for entry in doc["value"]:
            assert entry["url"] == f"http://test/v1.0/{entry['name']}"


def test_landing_page_is_read_only(client):
    assert client.post("/", {}).status == 405


# -- create and read -----------------------------------------------------------------


def test_create_assigns_id_and_location_header(client):
    r = client.post("/v1.0/Locations", util.location_payload())
    assert r.status == 201
    assert r.headers["Location"] == "http://test/v1.0/Locations(1)"
    doc = r.json()
    assert doc["@iot.id"] == 1
    assert doc["@iot.selfLink"] == "http://test/v1.0/Locations(1)"
    assert client.get("/v1.0/Locations(1)").body == r.body


def test_client_supplied_id_is_ignored(client):
    payload = util.sensor_payload()
    payload["@iot.id"] = 999
    doc = client.post("/v1.0/Sensors", payload).json()
    assert doc["@iot.id"] == 1


def test_document_field_order(client):
    seed(client)
    raw = client.get("/v1.0/Things(1)").body.decode("utf-8")
    keys = [k for k, _ in json.loads(raw, object_pairs_hook=lambda p: p)]
    assert keys == ["@iot.id", "@iot.selfLink",
                    "Datastreams@iot.navigationLink",
                    "HistoricalLocations@iot.navigationLink",
                    "Locations@iot.navigationLink",
                    "Locations", "description", "name", "properties"]
    raw = client.get("/v1.0/Observations(1)").body.decode("utf-8")
    keys = [k for k, _ in json.loads(raw, object_pairs_hook=lambda p: p)]
    assert keys == ["@iot.id", "@iot.selfLink",
                    "Datastream@iot.navigationLink",
                    "FeatureOfInterest@iot.navigationLink",
                    "Datastream", "FeatureOfInterest",
                    "phenomenonTime", "result", "resultTime"]


def test_repeated_reads_are_byte_identical(client):
    seed(client)
    for path in ("/v1.0/Things(1)", "/v1.0/Observations", "/v1.0/Datastreams(1)"):
        assert client.get(path).body == client.get(path).body


def test_every_navigation_link_resolves(client):
    seed(client)
    for collection in ("Things", "Locations", "Datastreams", "Observations",
                       "HistoricalLocations"):
        doc = client.get(f"/v1.0/{collection}(1)").json()
        for key, url in doc.items():
            if key.endswith("@iot.navigationLink"):
                path = url.removeprefix("http://test")
                assert client.get(path).status == 200, f"{key} -> {url}"


def test_missing_entities_give_404(client):
    assert client.get("/v1.0/Things(7)").status == 404
    assert client.get("/v1.0/Things(0)").status == 404
    assert client.get("/v1.0/Widgets").status == 404
    assert client.get("/v1.0/Widgets(1)").status == 404
    assert client.get("/v1.0/Things(nope)").status == 404
    assert client.get("/totally/elsewhere").status == 404
    body = client.get("/v1.0/Things(7)").json()
    assert body["code"] == "NotFound" and body["message"]


def test_method_table(client):
    seed(client)
    assert client.request("PUT", "/v1.0/Things").status == 405
    assert client.delete("/v1.0/Things").status == 405
    assert client.post("/v1.0/Things(1)", {}).status == 405
    assert client.post("/v1.0/Things(1)/Datastreams", {}).status == 405
    assert client.request("GET", "/sos").status == 405
    assert client.request("GET", "/cop").status == 405


# -- validation errors over the wire ---------------------------------------------------


def test_invalid_entity_gets_422_with_all_violations(client):
    r = client.post("/v1.0/Locations", {
        "name": "", "encodingType": "text/html",
        "location": {"type": "Point", "coordinates": [181.0, -91.0]}})
    assert r.status == 422
    body = r.json()
    assert body["code"] == "ValidationFailed"
    fields = {(v["code"], v["field"]) for v in body["violations"]}
    assert ("EmptyRequired", "name") in fields
    assert ("BadFieldType", "encodingType") in fields
    assert ("OutOfRange", "location.lon") in fields
    assert ("OutOfRange", "location.lat") in fields
    assert client.get("/v1.0/Locations").json()["value"] == []


def test_dangling_reference_gets_422(client):
    r = client.post("/v1.0/Observations", util.observation_payload(1))
    assert r.status == 422
    body = r.json()
    assert body["code"] == "DanglingRef"
    assert body["violations"][0]["field"] == "Datastream"


def test_malformed_json_body_gets_400(client):
    r = client.request("POST", "/v1.0/Things", body=b"{not json")
    assert r.status == 400
    assert r.json()["code"] == "BadParams"
    assert client.post("/v1.0/Things", [1, 2]).status == 400


def test_direct_historical_location_post_gets_409(client):
    r = client.post("/v1.0/HistoricalLocations", {"time": "2020-04-01T08:00:00Z"})
    assert r.status == 409
    assert r.json()["code"] == "ConflictingSystemEntity"


def test_delete_in_use_gets_409_with_dependents(client):
    seed(client)
    r = client.delete("/v1.0/Sensors(1)")
    assert r.status == 409
    body = r.json()
    assert body["code"] == "InUse"
    assert body["dependents"] == ["Datastreams(1)"]
    assert client.get("/v1.0/Sensors(1)").status == 200


# -- update and delete ------------------------------------------------------------------


def test_patch_merges_and_echoes(client):
    seed(client)
    r = client.patch("/v1.0/Things(1)", {"description": "updated"})
    assert r.status == 200
    doc = r.json()
    assert doc["description"] == "updated"
    assert doc["name"] == "station-1"
    assert client.get("/v1.0/Things(1)").body == r.body


def test_patch_error_paths(client):
    seed(client)
    assert client.patch("/v1.0/Things(1)", [1]).status == 400
    assert client.request("PATCH", "/v1.0/Things(1)", body=b"nope").status == 400
    assert client.patch("/v1.0/Things(9)", {"name": "x"}).status == 404
    r = client.patch("/v1.0/Things(1)", {"@iot.id": 9})
    assert r.status == 422
    assert r.json()["violations"][0]["field"] == "id"
    r = client.patch("/v1.0/Things(1)", {"name": None})
    assert r.status == 422
    assert r.json()["code"] == "ValidationFailed"


def test_delete_reports_the_cascade(client):
    seed(client, observations=2)
    r = client.delete("/v1.0/Things(1)")
    assert r.status == 200
    body = r.json()
    assert body["deleted"][0] == "Things(1)"
    assert "Datastreams(1)" in body["deleted"]
    assert "HistoricalLocations(1)" in body["deleted"]
    assert sum(1 for d in body["deleted"] if d.startswith("Observations(")) == 2
    assert body["unlinked"] == []
    assert client.get("/v1.0/Things(1)").status == 404
    assert client.delete("/v1.0/Things(1)").status == 404


def test_delete_location_reports_unlinked(client):
    seed(client)
    r = client.delete("/v1.0/Locations(1)")
    assert r.status == 200
    body = r.json()
    assert {"entity": "Things(1)", "relation": "Locations"} in body["unlinked"]


# -- paging -------------------------------------------------------------------------


def test_paging_params_and_next_link(client):
    seed(client, observations=7)
    doc = client.get("/v1.0/Observations", "$top=3&$count=true").json()
    assert doc["@iot.count"] == 7
    assert len(doc["value"]) == 3
    assert doc["@iot.nextLink"] == \
        "http://test/v1.0/Observations?$top=3&$skip=3&$count=true"
    # walking the chain visits every observation exactly once
    seen = [o["@iot.id"] for o in doc["value"]]
    while "@iot.nextLink" in doc:
        path_query = doc["@iot.nextLink"].removeprefix("http://test")
        path, _, query = path_query.partition("?")
        doc = client.get(path, query).json()
        seen.extend(o["@iot.id"] for o in doc["value"])
    assert seen == list(range(1, 8))


def test_last_page_has_no_next_link(client):
    seed(client, observations=3)
    doc = client.get("/v1.0/Observations", "$top=3").json()
    assert "@iot.nextLink" not in doc
    assert "@iot.count" not in doc  # only on request


def test_skip_beyond_the_end(client):
    seed(client, observations=2)
    doc = client.get("/v1.0/Observations", "$top=5&$skip=10").json()
    assert doc["value"] == []
    assert "@iot.nextLink" not in doc


def test_bad_query_parameters(client):
    seed(client)
    for query in ("$top=abc", "$top=-1", "$skip=x", "$count=yes",
                  "resultFormat=csv", "$top=1&$top=2", "$filter=name eq 'x'",
                  "$expand=Datastreams", "$orderby=id"):
        r = client.get("/v1.0/Things", query)
        assert r.status == 400, query
        assert r.json()["code"] == "BadParams"


def test_top_bounded_by_max_top(store):
    router = Router(store, "http://test", max_top=10)
    client = util.RouterClient(router)
    assert client.get("/v1.0/Things", "$top=10").status == 200
    r = client.get("/v1.0/Things", "$top=11")
    assert r.status == 400
    assert "10" in r.json()["message"]


# -- dataArray ----------------------------------------------------------------------


def test_data_array_groups_by_datastream(client):
    seed(client, datastreams=2, observations=3)
    doc = client.get("/v1.0/Observations", "resultFormat=dataArray&$count=true").json()
    assert doc["@iot.count"] == 6
    blocks = doc["value"]
    assert [b["Datastream@iot.navigationLink"] for b in blocks] == [
        "http://test/v1.0/Datastreams(1)", "http://test/v1.0/Datastreams(2)"]
    for block in blocks:
        assert block["components"] == ["phenomenonTime", "result"]
        assert block["dataArray@iot.count"] == len(block["dataArray"]) == 3
        for row in block["dataArray"]:
            assert len(row) == 2
    assert blocks[0]["dataArray"][0] == ["2020-04-01T10:00:00Z", 20.0]


def test_data_array_carries_the_same_data_as_default(client):
    seed(client, datastreams=2, observations=4)
    default_rows = set()
    doc = client.get("/v1.0/Observations").json()
    for obs in doc["value"]:
        default_rows.add((obs["Datastream"]["@iot.id"], obs["phenomenonTime"],
                          obs["result"]))
    array_rows = set()
    doc = client.get("/v1.0/Observations", "resultFormat=dataArray").json()
    for block in doc["value"]:
        ds_id = int(block["Datastream@iot.navigationLink"].rsplit("(", 1)[1][:-1])
        for when, result in block["dataArray"]:
            array_rows.add((ds_id, when, result))
    assert array_rows == default_rows


def test_data_array_pages_partition_like_default(client):
    seed(client, datastreams=2, observations=5)
    rows = []
    offset = 0
    while True:
        doc = client.get("/v1.0/Observations",
                         f"$top=3&$skip={offset}&resultFormat=dataArray").json()
        for block in doc["value"]:
            rows.extend(tuple(r) for r in block["dataArray"])
        if "@iot.nextLink" not in doc:
            break
        assert "resultFormat=dataArray" in doc["@iot.nextLink"]
        offset += 3
    assert len(rows) == 10  # nothing lost or duplicated across pages
    assert len(set((i, r) for i, r in enumerate(rows))) == 10


def test_data_array_empty_page_is_a_degenerate_block(client):
    doc = client.get("/v1.0/Observations", "resultFormat=dataArray").json()
    assert doc["value"] == [{"components": ["phenomenonTime", "result"],
                             "dataArray@iot.count": 0, "dataArray": []}]


def test_data_array_only_for_observations(client):
    seed(client)
    assert client.get("/v1.0/Things", "resultFormat=dataArray").status == 400
    assert client.get("/v1.0/Things(1)/Datastreams",
                      "resultFormat=dataArray").status == 400


def test_data_array_through_a_datastream_keeps_context(client):
    seed(client, datastreams=2, observations=2)
    doc = client.get("/v1.0/Datastreams(2)/Observations",
                     "resultFormat=dataArray").json()
    assert len(doc["value"]) == 1
    assert doc["value"][0]["Datastream@iot.navigationLink"] == \
        "http://test/v1.0/Datastreams(2)"
    # empty result still names the datastream it came from
    doc = client.get("/v1.0/Datastreams(2)/Observations",
                     "$skip=5&resultFormat=dataArray").json()
    assert doc["value"][0]["Datastream@iot.navigationLink"] == \
        "http://test/v1.0/Datastreams(2)"
    assert doc["value"][0]["dataArray@iot.count"] == 0


# -- relation routes ---------------------------------------------------------------


def test_relation_pages_and_single_hops(client):
    seed(client, datastreams=2, observations=1)
    doc = client.get("/v1.0/Things(1)/Datastreams", "$count=true").json()
    assert doc["@iot.count"] == 2
    doc = client.get("/v1.0/Datastreams(1)/Thing").json()
    assert doc["@iot.id"] == 1
    assert doc["@iot.selfLink"] == "http://test/v1.0/Things(1)"
    doc = client.get("/v1.0/Observations(1)/FeatureOfInterest").json()
    assert doc["@iot.selfLink"].startswith("http://test/v1.0/FeaturesOfInterest(")
    assert client.get("/v1.0/Things(1)/Sensor").status == 404
    assert client.get("/v1.0/Things(9)/Datastreams").status == 404


def test_admin_reset_clears_the_store(client, store):
    seed(client)
    assert store.total_entities() > 0
    r = client.post("/admin/reset", {})
    assert r.status == 200
    assert store.total_entities() == 0
    assert client.get("/admin/reset").status == 405


def test_admin_reset_can_be_disabled(store):
    router = Router(store, "http://test", allow_reset=False)
    client = util.RouterClient(router)
    assert client.post("/admin/reset", {}).status == 404


# -- live HTTP server ----------------------------------------------------------------


def test_live_server_end_to_end(live_app):
    base = live_app.base_url
    with requests.Session() as session:
        r = session.get(f"{base}/v1.0")
        assert r.status_code == 200
        assert r.headers["Content-Length"] == str(len(r.content))
        assert r.headers["Server"].startswith("sensorhub/")
        assert [e["name"] for e in r.json()["value"]][0] == "Things"

        r = session.post(f"{base}/v1.0/Locations", json=util.location_payload())
        assert r.status_code == 201
        assert r.headers["Location"] == f"{base}/v1.0/Locations(1)"
        r = session.post(f"{base}/v1.0/Things",
                         json=util.thing_payload(location_ids=[1]))
        assert r.status_code == 201

        r = session.patch(f"{base}/v1.0/Things(1)", json={"description": "live"})
        assert r.status_code == 200
        assert session.get(f"{base}/v1.0/Things(1)").json()["description"] == "live"

        r = session.delete(f"{base}/v1.0/Things(1)")
        assert r.status_code == 200
        assert session.get(f"{base}/v1.0/Things(1)").status_code == 404


def test_live_server_keeps_connections_alive(live_app):
    import http.client

    host, port = live_app.server_address[:2]
    conn = http.client.HTTPConnection(host, port, timeout=5)
    try:
        bodies = []
        for _ in range(2):  # second request rides the same socket
            conn.request("GET", "/v1.0")
            response = conn.getresponse()
            assert response.status == 200
            assert response.getheader("Connection", "keep-alive") != "close"
            bodies.append(response.read())
        assert bodies[0] == bodies[1]
    finally:
        conn.close()


def test_live_server_handles_parallel_readers(live_app):
    base = live_app.base_url
    requests.post(f"{base}/v1.0/Sensors", json=util.sensor_payload())

    def fetch(_):
        return requests.get(f"{base}/v1.0/Sensors(1)")

    with ThreadPoolExecutor(max_workers=16) as pool:
        responses = list(pool.map(fetch, range(64)))
    assert all(r.status_code == 200 for r in responses)
    assert len({r.content for r in responses}) == 1
