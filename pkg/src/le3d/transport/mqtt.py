"""Socket-level MQTT 3.1.1 client presenting the same surface as the loopback bus.

Speaks the slice of the protocol the system actually uses: clean-session
connect, QoS 0 and 1, retained messages, single-level (`+`) and multi-level
(`#`) subscription filters, ping keepalive. QoS follows the message
taxonomy: retained publishes (decisions, shares, classifications) default
to at-least-once, regular ones (samples) to at-most-once. Duplicate
delivery is possible by design; consumers deduplicate on seq or share_seq.

Threading: a reader thread parses inbound packets and hands application
messages to a separate dispatch thread, which runs subscription callbacks
one at a time. A callback may therefore publish, even at QoS 1 where the
call waits for the broker's acknowledgment, without deadlocking the
connection. There is no automatic reconnect; a client whose connection
drops raises on use and should be replaced.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import uuid
from typing import Callable, Optional

from ..errors import ConflictError, ConfigError, InputError, TransportUnavailable
from .topics import topic_matches

__all__ = ["MqttBus", "MqttSubscription"]

log = logging.getLogger("le3d.mqtt")

Callback = Callable[[str, bytes, bool], None]

# MQTT 3.1.1 control packet types (high nibble of the first header byte).
TYPE_CONNECT = 1
TYPE_CONNACK = 2
TYPE_PUBLISH = 3
TYPE_PUBACK = 4
TYPE_SUBSCRIBE = 8
TYPE_SUBACK = 9
TYPE_UNSUBSCRIBE = 10
TYPE_UNSUBACK = 11
TYPE_PINGREQ = 12
TYPE_PINGRESP = 13
TYPE_DISCONNECT = 14

MAX_PACKET_BYTES = 4 * 1024 * 1024


def encode_remaining_length(n: int) -> bytes:
    """Variable-length remaining-length field, 1 to 4 bytes."""
    if n < 0 or n > 268_435_455:
        raise ValueError("remaining length out of range: %d" % n)
    out = bytearray()
    while True:
        n, digit = divmod(n, 128)
        out.append(digit | (0x80 if n else 0))
        if not n:
            return bytes(out)


def encode_packet(ptype: int, flags: int, body: bytes) -> bytes:
    head = bytes([(ptype << 4) | (flags & 0x0F)])
    return head + encode_remaining_length(len(body)) + body


def encode_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 65_535:
        raise ValueError("string too long for wire encoding")
    return struct.pack(">H", len(raw)) + raw


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed by peer")
        buf += chunk
    return bytes(buf)


def read_packet(sock: socket.socket) -> tuple[int, int, bytes]:
    """Blocking read of one control packet: (type, flags, body)."""
    head = recv_exact(sock, 1)[0]
    ptype, flags = head >> 4, head & 0x0F
    multiplier, length = 1, 0
    for _ in range(4):
        byte = recv_exact(sock, 1)[0]
        length += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            break
        multiplier *= 128
    else:
        raise ValueError("malformed remaining-length field")
    if length > MAX_PACKET_BYTES:
        raise ValueError("packet exceeds %d bytes" % MAX_PACKET_BYTES)
    body = recv_exact(sock, length) if length else b""
    return ptype, flags, body


class Cursor:
    """Sequential reader over a packet body."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def u16(self) -> int:
        if self.pos + 2 > len(self.data):
            raise ValueError("truncated packet")
        value = struct.unpack_from(">H", self.data, self.pos)[0]
        self.pos += 2
        return value

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated packet")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def rest(self) -> bytes:
        chunk = self.data[self.pos :]
        self.pos = len(self.data)
        return chunk

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def make_publish(
    topic: str,
    payload: bytes,
    qos: int,
    retained: bool,
    packet_id: Optional[int] = None,
    dup: bool = False,
) -> bytes:
    flags = (0x08 if dup else 0) | (qos << 1) | (0x01 if retained else 0)
    body = encode_string(topic)
    if qos:
        if packet_id is None:
            raise ValueError("QoS > 0 publish needs a packet id")
        body += struct.pack(">H", packet_id)
    return encode_packet(TYPE_PUBLISH, flags, body + payload)


def parse_publish(flags: int, body: bytes) -> tuple[str, bytes, int, bool, Optional[int]]:
    """-> (topic, payload, qos, retained, packet_id or None)."""
    qos = (flags >> 1) & 0x03
    if qos > 2:
        raise ValueError("invalid QoS bits")
    retained = bool(flags & 0x01)
    cur = Cursor(body)
    topic = cur.string()
    packet_id = cur.u16() if qos else None
    return topic, cur.rest(), qos, retained, packet_id


class _Waiter:
    """Correlates one in-flight acked request with its reply."""

    __slots__ = ("event", "body", "failed")

    def __init__(self) -> None:
        self.event = threading.Event()
        self.body: bytes = b""
        self.failed = False


class MqttSubscription:
    def __init__(self, bus: "MqttBus", topic_filter: str, callback: Callback):
        self.topic_filter = topic_filter
        self.callback = callback
        self.active = True
        self._bus = bus

    def unsubscribe(self) -> None:
        self._bus._drop(self)


class MqttBus:
    """Broker-backed bus. Safe for use from multiple threads once connected."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 1883,
        client_id: str = "",
        username: str = "",
        password: str = "",
        keepalive_s: int = 60,
        ack_timeout_s: float = 5.0,
    ):
        if keepalive_s < 0:
            raise ConfigError("keepalive_s must be >= 0")
        if ack_timeout_s <= 0:
            raise ConfigError("ack_timeout_s must be > 0")
        self.host = host
        self.port = int(port)
        self.client_id = client_id or "le3d-" + uuid.uuid4().hex[:12]
        self.username = username
        self.password = password
        self.keepalive_s = int(keepalive_s)
        self.ack_timeout_s = float(ack_timeout_s)
        self.published_count = 0
        self._sock: Optional[socket.socket] = None
        self._write_lock = threading.Lock()
        self._state_lock = threading.RLock()
        self._subs: list[MqttSubscription] = []
        self._filter_refs: dict[str, int] = {}
        self._pending: dict[int, _Waiter] = {}
        self._next_pid = 1
        self._inbound: "queue.SimpleQueue" = queue.SimpleQueue()
        self._reader: Optional[threading.Thread] = None
        self._dispatcher: Optional[threading.Thread] = None
        self._pinger: Optional[threading.Thread] = None
        self._stop_ping = threading.Event()
        self._connected = False
        self._closing = False

    # -- lifecycle ---------------------------------------------------------

    def connect(self) -> "MqttBus":
        with self._state_lock:
            if self._connected:
                raise ConflictError("client is already connected")
            self._closing = False
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.ack_timeout_s)
        except OSError as exc:
            raise TransportUnavailable(
                "cannot reach broker at %s:%d: %s" % (self.host, self.port, exc)
            ) from exc
        try:
            sock.sendall(self._connect_packet())
            ptype, _flags, body = read_packet(sock)
            if ptype != TYPE_CONNACK or len(body) < 2:
                raise TransportUnavailable("broker sent no CONNACK")
            return_code = body[1]
            if return_code != 0:
                raise TransportUnavailable(
                    "broker refused connection, return code %d" % return_code
                )
        except (OSError, ValueError) as exc:
            sock.close()
            raise TransportUnavailable("connect handshake failed: %s" % exc) from exc
        except TransportUnavailable:
            sock.close()
            raise
        sock.settimeout(None)
        with self._state_lock:
            self._sock = sock
            self._connected = True
        self._reader = threading.Thread(
            target=self._read_loop, name="le3d-mqtt-reader", daemon=True
        )
        self._dispatcher = threading.Thread(
            target=self._dispatch_loop, name="le3d-mqtt-dispatch", daemon=True
        )
        self._reader.start()
        self._dispatcher.start()
        if self.keepalive_s:
            self._stop_ping.clear()
            self._pinger = threading.Thread(
                target=self._ping_loop, name="le3d-mqtt-ping", daemon=True
            )
            self._pinger.start()
        return self

    def close(self) -> None:
        with self._state_lock:
            if self._closing and not self._connected and self._sock is None:
                return
            self._closing = True
            self._connected = False
            sock = self._sock
            self._sock = None
            subs = list(self._subs)
            self._subs.clear()
            self._filter_refs.clear()
        for sub in subs:
            sub.active = False
        self._stop_ping.set()
        if sock is not None:
            try:
                with self._write_lock:
                    sock.sendall(encode_packet(TYPE_DISCONNECT, 0, b""))
            except OSError:
                pass
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._fail_pending()
        self._inbound.put(None)
        for thread in (self._reader, self._dispatcher, self._pinger):
            if thread is not None and thread is not threading.current_thread():
                thread.join(timeout=2.0)
        self._reader = self._dispatcher = self._pinger = None

    def __enter__(self) -> "MqttBus":
        return self.connect()

    def __exit__(self, *exc_info) -> None:
        self.close()

    @property
    def connected(self) -> bool:
        return self._connected

    # -- bus surface -------------------------------------------------------

    def publish(
        self, topic: str, payload: bytes, retained: bool = False, qos: Optional[int] = None
    ) -> None:
        if not isinstance(payload, (bytes, bytearray)):
            raise TypeError("payload must be bytes")
        if not topic or "+" in topic or "#" in topic:
            raise InputError("publish topic must be non-empty and wildcard-free")
        if qos is None:
            qos = 1 if retained else 0
        if qos not in (0, 1):
            raise InputError("only QoS 0 and 1 are supported")
        payload = bytes(payload)
        if qos == 0:
            self._send(make_publish(topic, payload, 0, retained))
            self.published_count += 1
            return
        packet_id, waiter = self._register_waiter()
        try:
            self._send(make_publish(topic, payload, 1, retained, packet_id))
            self._await(waiter, "publish acknowledgment")
        finally:
            self._pending.pop(packet_id, None)
        self.published_count += 1

    def subscribe(self, topic_filter: str, callback: Callback) -> MqttSubscription:
        if not topic_filter:
            raise InputError("topic filter must be non-empty")
        sub = MqttSubscription(self, topic_filter, callback)
        # register before the wire call: a retained replay racing the SUBACK
        # must not slip past the dispatcher while the caller is still waiting
        with self._state_lock:
            self._subs.append(sub)
            self._filter_refs[topic_filter] = self._filter_refs.get(topic_filter, 0) + 1
        packet_id, waiter = self._register_waiter()
        body = struct.pack(">H", packet_id) + encode_string(topic_filter) + bytes([1])
        try:
            self._send(encode_packet(TYPE_SUBSCRIBE, 0x02, body))
            reply = self._await(waiter, "subscribe acknowledgment")
            codes = reply[2:]
            if not codes or codes[0] == 0x80:
                raise InputError("broker rejected filter %r" % topic_filter)
        except BaseException:
            with self._state_lock:
                sub.active = False
                if sub in self._subs:
                    self._subs.remove(sub)
                remaining = self._filter_refs.get(topic_filter, 1) - 1
                if remaining > 0:
                    self._filter_refs[topic_filter] = remaining
                else:
                    self._filter_refs.pop(topic_filter, None)
            raise
        finally:
            self._pending.pop(packet_id, None)
        return sub

    def _drop(self, sub: MqttSubscription) -> None:
        with self._state_lock:
            sub.active = False
            if sub not in self._subs:
                return
            self._subs.remove(sub)
            remaining = self._filter_refs.get(sub.topic_filter, 1) - 1
            if remaining > 0:
                self._filter_refs[sub.topic_filter] = remaining
                return
            self._filter_refs.pop(sub.topic_filter, None)
            if not self._connected:
                return
        packet_id, waiter = self._register_waiter()
        body = struct.pack(">H", packet_id) + encode_string(sub.topic_filter)
        try:
            self._send(encode_packet(TYPE_UNSUBSCRIBE, 0x02, body))
            self._await(waiter, "unsubscribe acknowledgment")
        finally:
            self._pending.pop(packet_id, None)

    # -- internals ---------------------------------------------------------

    def _connect_packet(self) -> bytes:
        flags = 0x02  # clean session; no persistent state on either side
        tail = encode_string(self.client_id)
        if self.username:
            flags |= 0x80
            tail += encode_string(self.username)
            if self.password:
                flags |= 0x40
                tail += encode_string(self.password)
        body = (
            encode_string("MQTT")
            + bytes([4, flags])
            + struct.pack(">H", self.keepalive_s)
            + tail
        )
        return encode_packet(TYPE_CONNECT, 0, body)

    def _send(self, packet: bytes) -> None:
        with self._state_lock:
            sock = self._sock
            if not self._connected or sock is None:
                raise TransportUnavailable("client is not connected")
        try:
            with self._write_lock:
                sock.sendall(packet)
        except OSError as exc:
            raise TransportUnavailable("broker connection lost: %s" % exc) from exc

    def _register_waiter(self) -> tuple[int, _Waiter]:
        with self._state_lock:
            for _ in range(65_535):
                pid = self._next_pid
                self._next_pid = pid % 65_535 + 1
                if pid not in self._pending:
                    waiter = _Waiter()
                    self._pending[pid] = waiter
                    return pid, waiter
        raise TransportUnavailable("no free packet ids; broker is not acknowledging")

    def _await(self, waiter: _Waiter, what: str) -> bytes:
        if not waiter.event.wait(self.ack_timeout_s):
            raise TransportUnavailable("timed out waiting for %s" % what)
        if waiter.failed:
            raise TransportUnavailable("connection dropped while waiting for %s" % what)
        return waiter.body

    def _fail_pending(self) -> None:
        with self._state_lock:
            pending = list(self._pending.values())
            self._pending.clear()
        for waiter in pending:
            waiter.failed = True
            waiter.event.set()

    def _read_loop(self) -> None:
        sock = self._sock
        try:
            while True:
                ptype, flags, body = read_packet(sock)
                if ptype == TYPE_PUBLISH:
                    topic, payload, qos, retained, packet_id = parse_publish(flags, body)
                    if qos:
                        # ack after the message is safely queued locally
                        self._inbound.put((topic, payload, retained))
                        self._send(encode_packet(TYPE_PUBACK, 0, struct.pack(">H", packet_id)))
                    else:
                        self._inbound.put((topic, payload, retained))
                elif ptype in (TYPE_PUBACK, TYPE_SUBACK, TYPE_UNSUBACK):
                    if len(body) >= 2:
                        pid = struct.unpack_from(">H", body)[0]
                        waiter = self._pending.get(pid)
                        if waiter is not None:
                            waiter.body = body
                            waiter.event.set()
                elif ptype == TYPE_PINGRESP:
                    pass
                else:
                    log.debug("ignoring packet type %d", ptype)
        except (OSError, ValueError, TransportUnavailable) as exc:
            if not self._closing:
                log.warning("broker connection lost: %s", exc)
        with self._state_lock:
            self._connected = False
        self._fail_pending()
        self._inbound.put(None)

    def _dispatch_loop(self) -> None:
        while True:
            item = self._inbound.get()
            if item is None:
                return
            topic, payload, retained = item
            with self._state_lock:
                targets = [
                    s for s in self._subs if s.active and topic_matches(s.topic_filter, topic)
                ]
            for sub in targets:
                try:
                    sub.callback(topic, payload, retained)
                except Exception:
                    log.exception("subscription callback failed for %s", topic)

    def _ping_loop(self) -> None:
        interval = max(1.0, self.keepalive_s / 2)
        while not self._stop_ping.wait(interval):
            if not self._connected:
                return
            try:
                self._send(encode_packet(TYPE_PINGREQ, 0, b""))
            except TransportUnavailable:
                return
