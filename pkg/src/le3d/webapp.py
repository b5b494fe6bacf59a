"""HTTP front door for the coordination service.

Serves the REST registry/assignment/state API, a server-sent-events feed
for the operator console, a control proxy that injects drift commands onto
the message bus, and the console's static assets. The console talks only
to this service; it never joins the message bus itself.

When a bus is attached, the app also bridges bus traffic into storage:
decision and class messages are validated and recorded (retained messages
replay on startup, so the store warm-starts), and relayed samples are
forwarded to event subscribers without ever being stored.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, List, Optional
from urllib.parse import parse_qs, urlsplit

from .coordination import CoordinationCore
from .datagen import BROADCAST_SITE, CommandAck, DriftCommand, DriftScope
from .errors import (
    ConflictError,
    DecodeError,
    InputError,
    NotFoundError,
    TransportUnavailable,
)
from .transport import Channel, decode, make_envelope, subscription_filter, topic_for

_log = logging.getLogger("le3d.webapp")

MAX_BODY_BYTES = 1_000_000


class WebApp:
    """Coordination service HTTP layer plus the bus-to-console bridge."""

    def __init__(
        self,
        core: CoordinationCore,
        bus=None,
        host: str = "127.0.0.1",
        port: int = 8080,
        static_dir: Optional[str] = None,
        clock: Optional[Callable[[], int]] = None,
        control_timeout_s: float = 2.0,
    ):
        self.core = core
        self._bus = bus
        self._host = host
        self._port = port
        self.static_dir = os.path.realpath(static_dir) if static_dir else None
        self._clock = clock or (lambda: int(time.time() * 1000))
        self._control_timeout_s = float(control_timeout_s)
        self._server: Optional[_HttpServer] = None
        self._thread: Optional[threading.Thread] = None
        self._subs: list = []
        self._events_lock = threading.Lock()
        self._event_queues: List[queue.Queue] = []
        self.bridge_errors = 0

    # ---------------------------------------------------------- lifecycle

    def start(self) -> "WebApp":
        if self._server is not None:
            raise ConflictError("web app already started")
        server = _HttpServer((self._host, self._port), _Handler)
        server.app = self
        self._server = server
        if self._bus is not None:
            self._subs.append(
                self._bus.subscribe(subscription_filter(Channel.DECISION), self._on_decision)
            )
            self._subs.append(
                self._bus.subscribe(subscription_filter(Channel.CLASS), self._on_class)
            )
            self._subs.append(
                self._bus.subscribe(subscription_filter(Channel.RELAY), self._on_relay)
            )
        self._thread = threading.Thread(target=server.serve_forever, name="le3d-webapp", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        for sub in self._subs:
            sub.unsubscribe()
        self._subs.clear()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    @property
    def address(self):
        if self._server is None:
            raise ConflictError("web app not started")
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return "http://{}:{}".format(host, port)

    # ------------------------------------------------------------- events

    def subscribe_events(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1000)
        with self._events_lock:
            self._event_queues.append(q)
        return q

    def unsubscribe_events(self, q: queue.Queue) -> None:
        with self._events_lock:
            try:
                self._event_queues.remove(q)
            except ValueError:
                pass

    def event_client_count(self) -> int:
        with self._events_lock:
            return len(self._event_queues)

    def broadcast_event(self, event: dict) -> None:
        with self._events_lock:
            listeners = list(self._event_queues)
        for q in listeners:
            try:
                q.put_nowait(event)
            except queue.Full:
                pass  # slow console tab; it resyncs over REST on reconnect

    # ------------------------------------------------------------- bridge

    def _on_decision(self, topic: str, payload: bytes, retained: bool) -> None:
        self._bridge_state("decision", "decision", payload)

    def _on_class(self, topic: str, payload: bytes, retained: bool) -> None:
        self._bridge_state("classification", "class", payload)

    def _bridge_state(self, state_kind: str, wire_kind: str, payload: bytes) -> None:
        if not payload:
            return  # a cleared retained slot carries no state
        try:
            envelope = decode(payload)
            if envelope.kind != wire_kind:
                raise DecodeError("kind {!r} does not belong on this channel".format(envelope.kind))
            stream_id = self.core.record_state(state_kind, envelope.body)
        except (DecodeError, InputError):
            self.bridge_errors += 1
            return
        self.broadcast_event({"event": state_kind, "stream_id": stream_id, "payload": envelope.body})

    def _on_relay(self, topic: str, payload: bytes, retained: bool) -> None:
        if not payload:
            return
        try:
            envelope = decode(payload)
            if envelope.kind != "sample":
                raise DecodeError("kind {!r} does not belong on the relay channel".format(envelope.kind))
        except DecodeError:
            self.bridge_errors += 1
            return
        body = envelope.body
        stream_id = body.get("stream_id", "") if isinstance(body, dict) else ""
        self.broadcast_event({"event": "sample", "stream_id": stream_id, "payload": body})

    # ------------------------------------------------------ control proxy

    def send_control(self, form) -> List[dict]:
        """Inject one drift command onto the bus and gather the acks.

        Commands go out on the broadcast control site so the proxy needs no
        stream-to-site lookup; emulators match on the payload. For single
        scope the wait ends at the first ack; for all_of_type it ends once
        the ack count stops growing (or the timeout passes).
        """
        if self._bus is None:
            raise TransportUnavailable("no message bus attached to the coordination service")
        if not isinstance(form, dict):
            raise InputError("control body must be an object")
        body = dict(form)
        body.setdefault("target_stream_id", "")
        body.setdefault("sensor_type", "")
        body.setdefault("duration_ms", 0)
        body.setdefault("issued_at", self._clock())
        command = DriftCommand.from_body(body)
        if command.scope is DriftScope.SINGLE and not command.target_stream_id:
            raise InputError("single-scope commands need a target_stream_id")
        if command.scope is DriftScope.ALL_OF_TYPE and not command.sensor_type:
            raise InputError("all_of_type commands need a sensor_type")

        acks: List[dict] = []
        acks_lock = threading.Lock()
        got_one = threading.Event()

        def on_ack(topic: str, payload: bytes, retained: bool) -> None:
            if retained or not payload:
                return
            try:
                ack = CommandAck.from_body(decode(payload).body)
            except DecodeError:
                return
            with acks_lock:
                acks.append(ack.as_dict())
            got_one.set()

        sub = self._bus.subscribe(subscription_filter(Channel.CONTROLACK), on_ack)
        try:
            topic_id = (
                command.target_stream_id
                if command.scope is DriftScope.SINGLE
                else command.sensor_type
            )
            envelope = make_envelope("command", command.as_dict())
            self._bus.publish(topic_for(Channel.CONTROL, BROADCAST_SITE, [topic_id]), envelope.encode())
            deadline = time.monotonic() + self._control_timeout_s
            if command.scope is DriftScope.SINGLE:
                got_one.wait(max(0.0, deadline - time.monotonic()))
            else:
                settled_count = -1
                while time.monotonic() < deadline:
                    with acks_lock:
                        count = len(acks)
                    if count > 0 and count == settled_count:
                        break
                    settled_count = count
                    time.sleep(0.05)
        finally:
            sub.unsubscribe()
        with acks_lock:
            return list(acks)

    def healthz(self) -> dict:
        status = self.core.stats()
        status["ok"] = True
        status["event_clients"] = self.event_client_count()
        status["bridge_errors"] = self.bridge_errors
        status["bus_attached"] = self._bus is not None
        return status


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True
    block_on_close = False
    allow_reuse_address = True
    app: WebApp


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "le3d-coordination"

    @property
    def app(self) -> WebApp:
        return self.server.app  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # route access noise to the logger
        _log.debug("%s %s", self.address_string(), fmt % args)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    # ----------------------------------------------------------- routing

    def _dispatch(self, method: str) -> None:
        split = urlsplit(self.path)
        parts = [part for part in split.path.split("/") if part]
        query = {key: values[-1] for key, values in parse_qs(split.query).items()}
        try:
            self._handle(method, parts, query)
        except (InputError, DecodeError) as err:
            self._send_json(400, {"error": str(err)})
        except NotFoundError as err:
            self._send_json(404, {"error": str(err)})
        except ConflictError as err:
            self._send_json(409, {"error": str(err)})
        except TransportUnavailable as err:
            self._send_json(503, {"error": str(err)})
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception:  # pragma: no cover - last-resort guard
            _log.exception("unhandled error serving %s %s", method, self.path)
            try:
                self._send_json(500, {"error": "internal error"})
            except OSError:
                pass

    def _handle(self, method: str, parts: List[str], query: dict) -> None:
        if parts[:2] != ["api", "v1"]:
            if method == "GET":
                return self._serve_static(parts)
            raise NotFoundError("no such route: {} /{}".format(method, "/".join(parts)))
        tail = parts[2:]
        app = self.app

        if method == "POST" and tail == ["entities"]:
            body = self._read_json()
            entity = app.core.register(body.get("kind"), body.get("site"), body.get("sensor_type") or "")
            return self._send_json(200, entity.as_dict())
        if method == "GET" and tail == ["entities"]:
            entities = app.core.list_entities(site=query.get("site"), kind=query.get("kind"))
            now = app.core.now()
            rows = [dict(e.as_dict(), stale=not app.core.is_live(e, now)) for e in entities]
            return self._send_json(200, {"entities": rows})
        if method == "PUT" and len(tail) == 3 and tail[0] == "entities" and tail[2] == "heartbeat":
            return self._send_json(200, app.core.heartbeat(tail[1]).as_dict())
        if method == "POST" and tail == ["assignments"]:
            body = self._read_json()
            assignment = app.core.assign(body.get("source_entity_id"), body.get("stream_id"))
            return self._send_json(200, assignment.as_dict())
        if method == "GET" and tail == ["assignments"]:
            rows = [a.as_dict() for a in app.core.list_assignments(site=query.get("site"))]
            return self._send_json(200, {"assignments": rows})
        if method == "POST" and len(tail) == 2 and tail[0] == "state":
            payload = self._read_json()
            stream_id = app.core.record_state(tail[1], payload)
            app.broadcast_event({"event": tail[1], "stream_id": stream_id, "payload": payload})
            return self._send_json(200, {"ok": True, "stream_id": stream_id})
        if method == "GET" and len(tail) == 4 and tail[0] == "state" and tail[3] == "latest":
            return self._send_json(200, {"payload": app.core.latest_state(tail[1], tail[2])})
        if method == "GET" and len(tail) == 4 and tail[0] == "state" and tail[3] == "history":
            return self._send_json(200, {"payloads": app.core.state_history(tail[1], tail[2])})
        if method == "GET" and tail == ["healthz"]:
            return self._send_json(200, app.healthz())
        if method == "POST" and tail == ["control"]:
            acks = app.send_control(self._read_json())
            return self._send_json(200, {"acks": acks})
        if method == "GET" and tail == ["events"]:
            return self._serve_events()
        raise NotFoundError("no such route: {} /{}".format(method, "/".join(parts)))

    # ------------------------------------------------------------ helpers

    def _read_json(self) -> dict:
        try:
            length = int(self.headers.get("Content-Length") or "0")
        except ValueError:
            raise InputError("bad Content-Length header") from None
        if length <= 0:
            raise InputError("request needs a JSON object body")
        if length > MAX_BODY_BYTES:
            raise InputError("request body too large")
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise InputError("request body is not valid JSON") from None
        if not isinstance(body, dict):
            raise InputError("request body must be a JSON object")
        return body

    def _send_json(self, status: int, obj) -> None:
        if status != 200:
            # error paths may not have drained the request body; do not
            # let a second request ride the same connection
            self.close_connection = True
        data = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _serve_events(self) -> None:
        app = self.app
        q = app.subscribe_events()
        self.close_connection = True
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.end_headers()
            self.wfile.write(b": connected\n\n")
            self.wfile.flush()
            while True:
                try:
                    event = q.get(timeout=15.0)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                name = str(event.get("event", "message")).encode("ascii", "replace")
                data = json.dumps(event).encode("utf-8")
                self.wfile.write(b"event: " + name + b"\ndata: " + data + b"\n\n")
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            app.unsubscribe_events(q)

    def _serve_static(self, parts: List[str]) -> None:
        base = self.app.static_dir
        if base is None:
            raise NotFoundError("no static assets configured")
        rel = "/".join(parts) or "index.html"
        full = os.path.realpath(os.path.join(base, rel))
        if full != base and not full.startswith(base + os.sep):
            raise NotFoundError("no such file")
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            raise NotFoundError("no such file: /{}".format(rel))
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            data = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)
