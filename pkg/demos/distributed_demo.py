#!/usr/bin/env python3
"""Run the whole system the way it deploys: services talking over real
sockets, with the operator loop driven through the coordination REST API.

One process, but nothing in-process about the plumbing: a bundled broker,
three emulated sites (emulator + detector + aggregator each), and the
coordination service bridging bus state into its store. The script then
plays operator: register and assign everything over HTTP, inject a drift
on one stream and watch it classified abnormal, clear it, shift every
stream at once and watch the same magnitude of change read as natural.

Takes roughly twenty seconds. Run: python3 demos/distributed_demo.py
"""

import json
import sys
import threading
import time
import urllib.error
import urllib.request

from le3d.coordination import CoordinationCore
from le3d.scenario import ScenarioStack
from le3d.transport import MiniBroker, MqttBus
from le3d.webapp import WebApp


def wait_for(describe, probe, timeout=60.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        result = probe()
        if result is not None:
            return result
        time.sleep(0.05)
    raise RuntimeError("timed out waiting for " + describe)


class Operator:
    """Thin REST client; everything the demo does goes through HTTP."""

    def __init__(self, base):
        self.base = base

    def api(self, method, path, body=None):
        data = None if body is None else json.dumps(body).encode()
        request = urllib.request.Request(self.base + path, data=data, method=method)
        if data is not None:
            request.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(request, timeout=10) as response:
                return json.loads(response.read())
        except urllib.error.HTTPError as err:
            detail = json.loads(err.read()).get("error", "")
            raise RuntimeError("%s %s -> %d: %s" % (method, path, err.code, detail))

    def control(self, body):
        acks = self.api("POST", "/api/v1/control", body)["acks"]
        if not acks or not all(ack["ok"] for ack in acks):
            raise RuntimeError("command was not acknowledged cleanly: %r" % acks)
        # acked_at is the marker that separates this phase from history
        return acks, max(ack["acked_at"] for ack in acks)

    def history(self, kind, stream_id):
        return self.api("GET", "/api/v1/state/%s/%s/history" % (kind, stream_id))["payloads"]

    def latest(self, kind, stream_id):
        return self.api("GET", "/api/v1/state/%s/%s/latest" % (kind, stream_id))["payload"]

    def drifting_decision_after(self, stream_id, mark):
        for body in self.history("decision", stream_id):
            if body["decided_at"] >= mark and body["drifting"]:
                return body
        return None

    def class_after(self, stream_id, mark, kind):
        for body in self.history("classification", stream_id):
            if body["classified_at"] >= mark and body["kind"] == kind:
                return body
        return None

    def calm_after(self, stream_id, mark):
        body = self.latest("decision", stream_id)
        if body and body["decided_at"] >= mark and not body["drifting"]:
            return body
        return None


def main():
    started = time.monotonic()
    broker = MiniBroker().start()
    print("bundled broker on %s:%d" % broker.address)

    stack_bus = MqttBus(port=broker.port).connect()
    bridge_bus = MqttBus(port=broker.port).connect()
    stack = ScenarioStack(seed=0, bus=stack_bus).start()
    print("three sites up:", " ".join(node.site for node in stack.nodes))

    core = CoordinationCore()
    app = WebApp(core, bus=bridge_bus, port=0, clock=stack.clock)
    app.start()
    op = Operator(app.url)
    print("coordination service at", app.url)

    # keep emulated time moving while the operator side blocks on HTTP
    stop = threading.Event()

    def ticker():
        while not stop.is_set():
            stack.tick(1)
            time.sleep(0.01)

    driver = threading.Thread(target=ticker, daemon=True)
    driver.start()

    try:
        print()
        print("registering every service in the coordination registry")
        for node in stack.nodes:
            op.api("POST", "/api/v1/entities",
                   {"kind": "detector", "site": node.site, "sensor_type": "temperature"})
            source = op.api("POST", "/api/v1/entities",
                            {"kind": "emulator", "site": node.site,
                             "sensor_type": "temperature"})
            assignment = op.api("POST", "/api/v1/assignments",
                                {"source_entity_id": source["entity_id"],
                                 "stream_id": node.stream_id})
            print("  %s -> detector %s" % (assignment["stream_id"],
                                           assignment["detector_entity_id"]))

        target = stack.nodes[0].stream_id
        print()
        print("letting the estimators settle on the baseline...")
        time.sleep(2.5)

        print()
        print("phase 1: step +5.0 on %s alone" % target)
        _, mark = op.control({"target_stream_id": target, "kind": "step",
                              "magnitude": 5.0, "scope": "single"})
        decision = wait_for("a drifting decision on " + target,
                            lambda: op.drifting_decision_after(target, mark))
        votes = " ".join("%s=%s" % kv for kv in sorted(decision["votes"].items()))
        print("  decision: drifting (votes: %s)" % votes)
        verdict = wait_for("an abnormal classification on " + target,
                           lambda: op.class_after(target, mark, "abnormal"))
        print("  classification: abnormal (concurrent drifting peers: %d)"
              % verdict["evidence"]["concurrent_peers"])
        print("  one stream moved, its peers did not: someone touched the sensor")

        print()
        print("phase 2: clear it and wait for calm")
        _, mark = op.control({"target_stream_id": target, "kind": "step",
                              "magnitude": 0.0, "scope": "single"})
        print("  (the return to baseline is itself a level shift, so it is")
        print("   detected too, then the estimators settle)")
        wait_for("calm on " + target, lambda: op.calm_after(target, mark))
        print("  %s is quiet again" % target)

        print()
        print("phase 3: step +5.0 on every temperature stream at once")
        acks, mark = op.control({"kind": "step", "magnitude": 5.0,
                                 "scope": "all_of_type", "sensor_type": "temperature"})
        print("  %d emulators acked the broadcast" % len(acks))
        for node in stack.nodes:
            verdict = wait_for(
                "a natural classification on " + node.stream_id,
                lambda stream=node.stream_id: op.class_after(stream, mark, "natural"),
            )
            print("  %s: natural (corroborated by: %s)"
                  % (node.stream_id,
                     ", ".join(verdict["evidence"]["contributing_streams"])))
        print("  same step, every peer saw it: environmental change, not a fault")

        print()
        print("phase 4: clear the broadcast and check the books")
        _, mark = op.control({"kind": "step", "magnitude": 0.0,
                              "scope": "all_of_type", "sensor_type": "temperature"})
        for node in stack.nodes:
            wait_for("calm on " + node.stream_id,
                     lambda stream=node.stream_id: op.calm_after(stream, mark))
        health = op.api("GET", "/api/v1/healthz")
        print("  healthz: %d entities, %d assignments, decision streams: %d,"
              " classification streams: %d"
              % (health["entities"], health["assignments"],
                 health["decision_streams"], health["classification_streams"]))
        print()
        print("done in %.1fs" % (time.monotonic() - started))
        return 0
    finally:
        stop.set()
        driver.join(timeout=5)
        app.stop()
        for bus in (stack_bus, bridge_bus):
            bus.close()
        broker.stop()


if __name__ == "__main__":
    sys.exit(main())
