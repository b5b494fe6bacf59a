"""In-process MQTT 3.1.1 broker covering the dialect the bus client speaks.

Built for tests and single-host demos: QoS 0 and 1, retained messages,
`+` and `#` filters, clean sessions only. Not implemented: persistence,
will messages, keepalive eviction, QoS 2, and redelivery (TCP ordering
stands in for retransmission within a connection, and consumers tolerate
duplicates anyway). Each client receives at most one copy of a message
per publish, even when several of its filters match.

Ordering: each connection is served by its own thread, so one publisher's
messages reach every subscriber in publish order. Messages from different
publishers interleave in broker arrival order.
"""

from __future__ import annotations

import itertools
import logging
import socket
import struct
import threading
from typing import Optional

from ..errors import ConflictError
from .topics import topic_matches
from .mqtt import (
    Cursor,
    TYPE_CONNACK,
    TYPE_CONNECT,
    TYPE_DISCONNECT,
    TYPE_PINGREQ,
    TYPE_PINGRESP,
    TYPE_PUBACK,
    TYPE_PUBLISH,
    TYPE_SUBACK,
    TYPE_SUBSCRIBE,
    TYPE_UNSUBACK,
    TYPE_UNSUBSCRIBE,
    encode_packet,
    encode_string,
    make_publish,
    parse_publish,
    read_packet,
)

__all__ = ["MiniBroker"]

log = logging.getLogger("le3d.minibroker")


def _filter_is_valid(topic_filter: str) -> bool:
    if not topic_filter:
        return False
    segments = topic_filter.split("/")
    for i, segment in enumerate(segments):
        if segment == "#":
            if i != len(segments) - 1:
                return False
        elif "#" in segment or ("+" in segment and segment != "+"):
            return False
    return True


class _Client:
    """Per-connection state; writes are serialized by the write lock."""

    def __init__(self, conn: socket.socket, peer: str):
        self.conn = conn
        self.peer = peer
        self.client_id = ""
        self.write_lock = threading.Lock()
        self.subscriptions: list[tuple[str, int]] = []  # (filter, granted qos)
        self.next_pid = itertools.cycle(range(1, 65_536))
        self.alive = True

    def send(self, packet: bytes) -> None:
        with self.write_lock:
            self.conn.sendall(packet)

    def granted_qos_for(self, topic: str) -> Optional[int]:
        """Highest granted QoS among matching filters, None if no match."""
        best = None
        for topic_filter, granted in self.subscriptions:
            if topic_matches(topic_filter, topic):
                if best is None or granted > best:
                    best = granted
        return best


class MiniBroker:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.port = int(port)
        self._server: Optional[socket.socket] = None
        self._acceptor: Optional[threading.Thread] = None
        self._lock = threading.RLock()
        self._clients: set[_Client] = set()
        self._retained: dict[str, tuple[bytes, int]] = {}  # topic -> (payload, qos)
        self._anon_ids = itertools.count(1)
        self._running = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "MiniBroker":
        with self._lock:
            if self._running:
                raise ConflictError("broker is already running")
            server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            server.bind((self.host, self.port))
            server.listen(32)
            self.port = server.getsockname()[1]
            self._server = server
            self._running = True
        self._acceptor = threading.Thread(
            target=self._accept_loop, name="le3d-minibroker", daemon=True
        )
        self._acceptor.start()
        return self

    def stop(self) -> None:
        with self._lock:
            if not self._running:
                return
            self._running = False
            server = self._server
            self._server = None
            clients = list(self._clients)
        if server is not None:
            server.close()
        for client in clients:
            client.alive = False
            try:
                client.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            client.conn.close()
        if self._acceptor is not None:
            self._acceptor.join(timeout=2.0)
            self._acceptor = None

    def __enter__(self) -> "MiniBroker":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    def retained_topics(self) -> dict[str, bytes]:
        with self._lock:
            return {topic: payload for topic, (payload, _qos) in self._retained.items()}

    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    # -- connection handling -------------------------------------------------

    def _accept_loop(self) -> None:
        server = self._server
        while self._running:
            try:
                conn, addr = server.accept()
            except OSError:
                return
            client = _Client(conn, "%s:%d" % addr)
            threading.Thread(
                target=self._serve, args=(client,), name="le3d-minibroker-conn", daemon=True
            ).start()

    def _serve(self, client: _Client) -> None:
        try:
            if not self._handshake(client):
                return
            with self._lock:
                self._clients.add(client)
            self._packet_loop(client)
        except (OSError, ValueError, ConnectionError) as exc:
            if self._running and client.alive:
                log.debug("client %s dropped: %s", client.peer, exc)
        finally:
            client.alive = False
            with self._lock:
                self._clients.discard(client)
            client.conn.close()

    def _handshake(self, client: _Client) -> bool:
        ptype, _flags, body = read_packet(client.conn)
        if ptype != TYPE_CONNECT:
            return False
        cur = Cursor(body)
        protocol = cur.string()
        level = cur.take(1)[0]
        if protocol != "MQTT" or level != 4:
            # 0x01: unacceptable protocol version
            client.send(encode_packet(TYPE_CONNACK, 0, bytes([0, 1])))
            return False
        connect_flags = cur.take(1)[0]
        cur.u16()  # keepalive; this broker never evicts idle clients
        client.client_id = cur.string() or "anon-%d" % next(self._anon_ids)
        if connect_flags & 0x04:  # will flag: consume, not honored
            cur.string()
            cur.take(cur.u16())
        if connect_flags & 0x80:  # username: accepted, not checked
            cur.string()
        if connect_flags & 0x40:
            cur.take(cur.u16())
        # session present = 0: clean sessions only
        client.send(encode_packet(TYPE_CONNACK, 0, bytes([0, 0])))
        return True

    def _packet_loop(self, client: _Client) -> None:
        while client.alive:
            ptype, flags, body = read_packet(client.conn)
            if ptype == TYPE_PUBLISH:
                self._on_publish(client, flags, body)
            elif ptype == TYPE_SUBSCRIBE:
                self._on_subscribe(client, body)
            elif ptype == TYPE_UNSUBSCRIBE:
                self._on_unsubscribe(client, body)
            elif ptype == TYPE_PINGREQ:
                client.send(encode_packet(TYPE_PINGRESP, 0, b""))
            elif ptype == TYPE_PUBACK:
                pass  # no retransmission, nothing to settle
            elif ptype == TYPE_DISCONNECT:
                return
            else:
                raise ValueError("unexpected packet type %d" % ptype)

    # -- behaviors -----------------------------------------------------------

    def _on_publish(self, client: _Client, flags: int, body: bytes) -> None:
        topic, payload, qos, retained, packet_id = parse_publish(flags, body)
        if qos > 1:
            raise ValueError("QoS 2 is not supported")
        if "+" in topic or "#" in topic or not topic:
            raise ValueError("invalid publish topic")
        if retained:
            with self._lock:
                if payload:
                    self._retained[topic] = (payload, qos)
                else:
                    # empty retained payload clears the slot
                    self._retained.pop(topic, None)
        self._fan_out(topic, payload, qos)
        if qos == 1:
            client.send(encode_packet(TYPE_PUBACK, 0, struct.pack(">H", packet_id)))

    def _fan_out(self, topic: str, payload: bytes, publish_qos: int) -> None:
        with self._lock:
            clients = list(self._clients)
        for client in clients:
            granted = client.granted_qos_for(topic)
            if granted is None:
                continue
            out_qos = min(publish_qos, granted)
            pid = next(client.next_pid) if out_qos else None
            # forwarded copies carry retain=0; only replay marks retained
            try:
                client.send(make_publish(topic, payload, out_qos, False, pid))
            except OSError:
                client.alive = False

    def _on_subscribe(self, client: _Client, body: bytes) -> None:
        cur = Cursor(body)
        packet_id = cur.u16()
        entries: list[tuple[str, int]] = []
        while not cur.exhausted:
            topic_filter = cur.string()
            requested = cur.take(1)[0] & 0x03
            entries.append((topic_filter, requested))
        if not entries:
            raise ValueError("SUBSCRIBE carries no filters")
        codes = bytearray()
        accepted: list[tuple[str, int]] = []
        for topic_filter, requested in entries:
            if not _filter_is_valid(topic_filter):
                codes.append(0x80)
                continue
            granted = min(requested, 1)
            # re-subscribing a filter replaces it and replays retained state;
            # swap the whole list so fan-out threads never see a half-edit
            subs = [(f, q) for f, q in client.subscriptions if f != topic_filter]
            subs.append((topic_filter, granted))
            client.subscriptions = subs
            codes.append(granted)
            accepted.append((topic_filter, granted))
        client.send(
            encode_packet(TYPE_SUBACK, 0, struct.pack(">H", packet_id) + bytes(codes))
        )
        self._replay_retained(client, accepted)

    def _replay_retained(self, client: _Client, accepted: list[tuple[str, int]]) -> None:
        with self._lock:
            retained = list(self._retained.items())
        sent: set[str] = set()
        for topic, (payload, stored_qos) in sorted(retained):
            for topic_filter, granted in accepted:
                if topic in sent or not topic_matches(topic_filter, topic):
                    continue
                sent.add(topic)
                out_qos = min(stored_qos, granted)
                pid = next(client.next_pid) if out_qos else None
                client.send(make_publish(topic, payload, out_qos, True, pid))

    def _on_unsubscribe(self, client: _Client, body: bytes) -> None:
        cur = Cursor(body)
        packet_id = cur.u16()
        while not cur.exhausted:
            topic_filter = cur.string()
            client.subscriptions = [
                (f, q) for f, q in client.subscriptions if f != topic_filter
            ]
        client.send(encode_packet(TYPE_UNSUBACK, 0, struct.pack(">H", packet_id)))
