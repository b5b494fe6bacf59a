import http.client
import json
import urllib.error
import urllib.request

import pytest

from le3d.coordination import CoordinationCore
from le3d.datagen import EmulatorService, StreamProfile
from le3d.transport import LoopbackBus, make_envelope
from le3d.webapp import WebApp

from test_coordination import class_payload, decision_payload


def api(method, url, body=None):
    data = json.dumps(body).encode() if body is not None else None
    request = urllib.request.Request(url, data=data, method=method)
    if data is not None:
        request.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(request, timeout=5) as response:
            return response.status, json.loads(response.read().decode())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read().decode())


@pytest.fixture
def bus():
    return LoopbackBus()


@pytest.fixture
def app(bus):
    webapp = WebApp(CoordinationCore(), bus=bus, port=0, control_timeout_s=1.0)
    webapp.start()
    yield webapp
    webapp.stop()


@pytest.fixture
def base(app):
    return app.url + "/api/v1"


def flat_profile(**kwargs):
    kwargs.setdefault("sensor_type", "temperature")
    return StreamProfile(mean=20.0, stddev=0.0, sample_period_ms=100, **kwargs)


# ---------------------------------------------------------------- registry


def test_register_heartbeat_list_over_http(base):
    status, entity = api("POST", base + "/entities", {"kind": "detector", "site": "lab"})
    assert status == 200
    assert entity["kind"] == "detector"
    entity_id = entity["entity_id"]

    status, beat = api("PUT", base + "/entities/{}/heartbeat".format(entity_id))
    assert status == 200
    assert beat["heartbeat_at"] >= entity["heartbeat_at"]

    status, listing = api("GET", base + "/entities?site=lab")
    assert status == 200
    assert [row["entity_id"] for row in listing["entities"]] == [entity_id]
    assert listing["entities"][0]["stale"] is False


def test_http_error_mapping(base):
    status, body = api("POST", base + "/entities", {"kind": "widget", "site": "lab"})
    assert status == 400 and "unknown entity kind" in body["error"]

    status, body = api("PUT", base + "/entities/e-999999/heartbeat")
    assert status == 404 and "unknown entity" in body["error"]

    status, emulator = api("POST", base + "/entities", {"kind": "emulator", "site": "lab"})
    status, body = api(
        "POST", base + "/assignments", {"source_entity_id": emulator["entity_id"], "stream_id": "s1"}
    )
    assert status == 409 and "no detector available" in body["error"]

    status, body = api("GET", base + "/no/such/route")
    assert status == 404

    status, body = api("POST", base + "/entities", {"kind": "detector"})
    assert status == 400


def test_malformed_request_bodies(base):
    request = urllib.request.Request(
        base + "/entities", data=b"{not json", method="POST", headers={"Content-Type": "application/json"}
    )
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(request, timeout=5)
    assert err.value.code == 400

    status, body = api("POST", base + "/assignments")
    assert status == 400 and "JSON object body" in body["error"]


def test_assignments_over_http(base):
    _, detector = api("POST", base + "/entities", {"kind": "detector", "site": "lab"})
    _, source = api("POST", base + "/entities", {"kind": "emulator", "site": "lab"})
    status, assignment = api(
        "POST", base + "/assignments", {"source_entity_id": source["entity_id"], "stream_id": "temp-1"}
    )
    assert status == 200
    assert assignment["detector_entity_id"] == detector["entity_id"]

    status, listing = api("GET", base + "/assignments?site=lab")
    assert [row["stream_id"] for row in listing["assignments"]] == ["temp-1"]
    status, listing = api("GET", base + "/assignments?site=plant")
    assert listing["assignments"] == []


# ------------------------------------------------------------------ state


def test_state_roundtrip_over_http(base):
    payload = decision_payload()
    status, ack = api("POST", base + "/state/decision", payload)
    assert status == 200 and ack == {"ok": True, "stream_id": "temp-1"}

    status, body = api("GET", base + "/state/decision/temp-1/latest")
    assert status == 200 and body["payload"] == payload

    status, body = api("GET", base + "/state/decision/temp-1/history")
    assert body["payloads"] == [payload]

    status, body = api("GET", base + "/state/decision/ghost/latest")
    assert status == 200 and body["payload"] is None

    status, body = api("POST", base + "/state/decision", {"stream_id": "temp-1"})
    assert status == 400

    status, body = api("POST", base + "/state/sample", decision_payload())
    assert status == 400 and "unknown state kind" in body["error"]


def test_healthz(base):
    status, body = api("GET", base + "/healthz")
    assert status == 200
    assert body["ok"] is True
    assert body["bus_attached"] is True
    assert body["entities"] == 0


# ---------------------------------------------------------- control proxy


def test_control_proxy_single_scope(base, bus):
    service = EmulatorService(bus, "temp-7", "plant-a", flat_profile())
    service.start()
    status, body = api(
        "POST",
        base + "/control",
        {"target_stream_id": "temp-7", "kind": "step", "magnitude": 5.0, "scope": "single"},
    )
    assert status == 200
    assert len(body["acks"]) == 1
    assert body["acks"][0]["ok"] is True
    assert service.emulator.next_sample(10**15).value == 25.0


def test_control_proxy_surfaces_nack_reason(base, bus):
    EmulatorService(bus, "temp-7", "plant-a", flat_profile()).start()
    status, body = api(
        "POST",
        base + "/control",
        {"target_stream_id": "temp-7", "kind": "noise_scale", "magnitude": 0.0},
    )
    assert status == 200
    assert body["acks"][0]["ok"] is False
    assert "must be > 0" in body["acks"][0]["reason"]


def test_control_proxy_all_of_type(base, bus):
    a = EmulatorService(bus, "temp-a", "site-a", flat_profile())
    b = EmulatorService(bus, "temp-b", "site-b", flat_profile())
    c = EmulatorService(bus, "hum-c", "site-c", flat_profile(sensor_type="humidity"))
    for service in (a, b, c):
        service.start()
    status, body = api(
        "POST",
        base + "/control",
        {"kind": "step", "magnitude": 3.0, "scope": "all_of_type", "sensor_type": "temperature"},
    )
    assert status == 200
    assert sorted(ack["stream_id"] for ack in body["acks"]) == ["temp-a", "temp-b"]


def test_control_proxy_validates_form(base):
    status, body = api("POST", base + "/control", {"kind": "step", "magnitude": 1.0})
    assert status == 400 and "target_stream_id" in body["error"]
    status, body = api("POST", base + "/control", {"kind": "step", "magnitude": 1.0, "scope": "all_of_type"})
    assert status == 400 and "sensor_type" in body["error"]
    status, body = api(
        "POST", base + "/control", {"target_stream_id": "t", "kind": "wobble", "magnitude": 1.0}
    )
    assert status == 400


def test_control_without_bus_is_unavailable():
    app = WebApp(CoordinationCore(), bus=None, port=0)
    app.start()
    try:
        status, body = api(
            "POST",
            app.url + "/api/v1/control",
            {"target_stream_id": "t", "kind": "step", "magnitude": 1.0},
        )
        assert status == 503
    finally:
        app.stop()


# ------------------------------------------------------------ bus bridge


def test_bus_decisions_are_recorded_and_served(base, bus):
    payload = decision_payload(stream="temp-9")
    envelope = make_envelope("decision", payload)
    bus.publish("le3d/decision/site-a/det-1/temp-9", envelope.encode(), retained=True)

    status, body = api("GET", base + "/state/decision/temp-9/latest")
    assert status == 200 and body["payload"] == payload

    class_env = make_envelope("class", class_payload(stream="temp-9"))
    bus.publish("le3d/class/site-a/temp-9", class_env.encode(), retained=True)
    status, body = api("GET", base + "/state/classification/temp-9/latest")
    assert body["payload"]["kind"] == "abnormal"


def test_retained_decisions_warm_start_the_store(bus):
    payload = decision_payload(stream="temp-3")
    bus.publish("le3d/decision/site-a/det-1/temp-3", make_envelope("decision", payload).encode(), retained=True)

    app = WebApp(CoordinationCore(), bus=bus, port=0)
    app.start()
    try:
        status, body = api("GET", app.url + "/api/v1/state/decision/temp-3/latest")
        assert status == 200 and body["payload"] == payload
    finally:
        app.stop()


def test_bridge_counts_garbage(app, bus):
    bus.publish("le3d/decision/site-a/det-1/temp-1", b"{broken", retained=False)
    bus.publish("le3d/class/site-a/temp-1", make_envelope("sample", {"x": 1}).encode(), retained=False)
    assert app.bridge_errors == 2


# ------------------------------------------------------------------- SSE


def read_sse_block(fp):
    lines = []
    while True:
        line = fp.readline()
        if line in (b"\n", b""):
            break
        lines.append(line.rstrip(b"\n"))
    return lines


def test_sse_streams_state_events(app, bus):
    host, port = app.address
    conn = http.client.HTTPConnection(host, port, timeout=5)
    conn.request("GET", "/api/v1/events")
    response = conn.getresponse()
    assert response.status == 200
    assert response.getheader("Content-Type") == "text/event-stream"
    assert read_sse_block(response.fp) == [b": connected"]

    payload = decision_payload(stream="temp-5")
    api("POST", app.url + "/api/v1/state/decision", payload)
    block = read_sse_block(response.fp)
    assert block[0] == b"event: decision"
    event = json.loads(block[1].split(b"data: ", 1)[1])
    assert event["stream_id"] == "temp-5"
    assert event["payload"] == payload

    sample_body = {"stream_id": "temp-5", "site": "site-a", "timestamp": 1, "value": 20.5, "seq": 0}
    bus.publish("le3d/relay/site-a/temp-5", make_envelope("sample", sample_body).encode())
    block = read_sse_block(response.fp)
    assert block[0] == b"event: sample"
    assert json.loads(block[1].split(b"data: ", 1)[1])["payload"]["value"] == 20.5

    # relayed samples are pushed to listeners but never stored
    status, body = api("GET", app.url + "/api/v1/state/decision/temp-5/history")
    assert len(body["payloads"]) == 1
    conn.close()


# ---------------------------------------------------------------- static


def test_static_serving(tmp_path):
    (tmp_path / "index.html").write_text("<h1>console</h1>")
    (tmp_path / "app.js").write_text("console.log(1)")
    app = WebApp(CoordinationCore(), port=0, static_dir=str(tmp_path))
    app.start()
    try:
        with urllib.request.urlopen(app.url + "/", timeout=5) as response:
            assert b"console" in response.read()
            assert "text/html" in response.getheader("Content-Type")
        with urllib.request.urlopen(app.url + "/app.js", timeout=5) as response:
            assert "javascript" in response.getheader("Content-Type")
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(app.url + "/missing.css", timeout=5)
        assert err.value.code == 404
    finally:
        app.stop()


def test_static_absent_is_a_clean_404(app):
    status, body = api("GET", app.url + "/")
    assert status == 404
    assert "no static assets" in body["error"]
