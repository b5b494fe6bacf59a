"""Socket transport specifics: wire codec edges, client/broker behaviors
that the shared bus contract does not pin, and one end-to-end check that
retained-state reconstruction works across real connections."""

import socket
import struct
import threading
import time

import pytest

from le3d.errors import ConflictError, InputError, TransportUnavailable
from le3d.transport import MiniBroker, MqttBus
from le3d.transport.mqtt import (
    Cursor,
    TYPE_CONNACK,
    TYPE_CONNECT,
    TYPE_PINGREQ,
    TYPE_PUBLISH,
    encode_packet,
    encode_remaining_length,
    encode_string,
    make_publish,
    parse_publish,
    read_packet,
)


@pytest.fixture
def broker():
    b = MiniBroker().start()
    yield b
    b.stop()


@pytest.fixture
def bus(broker):
    client = MqttBus(port=broker.port).connect()
    yield client
    client.close()


def wait_until(predicate, timeout=5.0, step=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(step)
    return predicate()


class Collector:
    def __init__(self):
        self.items = []
        self._cond = threading.Condition()

    def __call__(self, topic, payload, retained):
        with self._cond:
            self.items.append((topic, payload, retained))
            self._cond.notify_all()

    def wait_count(self, count, timeout=5.0):
        with self._cond:
            self._cond.wait_for(lambda: len(self.items) >= count, timeout)
            return list(self.items)


# -- wire codec ---------------------------------------------------------------


def test_remaining_length_boundary_encodings():
    cases = {
        0: b"\x00",
        127: b"\x7f",
        128: b"\x80\x01",
        16_383: b"\xff\x7f",
        16_384: b"\x80\x80\x01",
        2_097_151: b"\xff\xff\x7f",
        2_097_152: b"\x80\x80\x80\x01",
        268_435_455: b"\xff\xff\xff\x7f",
    }
    for value, wire in cases.items():
        assert encode_remaining_length(value) == wire


def test_remaining_length_range_checked():
    with pytest.raises(ValueError):
        encode_remaining_length(268_435_456)
    with pytest.raises(ValueError):
        encode_remaining_length(-1)


def test_read_packet_roundtrip_over_socketpair():
    left, right = socket.socketpair()
    try:
        packet = make_publish("le3d/data/lab/s1", b'{"v": 1}', 1, True, packet_id=7)
        left.sendall(packet)
        ptype, flags, body = read_packet(right)
        assert ptype == TYPE_PUBLISH
        topic, payload, qos, retained, pid = parse_publish(flags, body)
        assert (topic, payload, qos, retained, pid) == (
            "le3d/data/lab/s1",
            b'{"v": 1}',
            1,
            True,
            7,
        )
    finally:
        left.close()
        right.close()


def test_read_packet_rejects_runaway_length_field():
    left, right = socket.socketpair()
    try:
        # four continuation bytes and no terminator
        left.sendall(bytes([TYPE_PINGREQ << 4]) + b"\x80\x80\x80\x80")
        with pytest.raises(ValueError):
            read_packet(right)
    finally:
        left.close()
        right.close()


def test_read_packet_rejects_oversized_packet():
    left, right = socket.socketpair()
    try:
        left.sendall(bytes([TYPE_PUBLISH << 4]) + encode_remaining_length(5 * 1024 * 1024))
        with pytest.raises(ValueError):
            read_packet(right)
    finally:
        left.close()
        right.close()


def test_string_encoding_length_capped():
    assert encode_string("a" * 65_535)[:2] == struct.pack(">H", 65_535)
    with pytest.raises(ValueError):
        encode_string("a" * 65_536)


def test_cursor_rejects_truncated_fields():
    with pytest.raises(ValueError):
        Cursor(b"\x00").u16()
    with pytest.raises(ValueError):
        Cursor(b"\x00\x05ab").string()


def test_parse_publish_rejects_invalid_qos_bits():
    body = encode_string("t") + b"x"
    with pytest.raises(ValueError):
        parse_publish(0b0110, body)


def test_make_publish_needs_packet_id_for_qos1():
    with pytest.raises(ValueError):
        make_publish("t", b"", 1, False)


# -- client behaviors ---------------------------------------------------------


def test_connect_to_unreachable_broker_raises(unused_port=1):
    client = MqttBus(port=unused_port, ack_timeout_s=0.5)
    with pytest.raises(TransportUnavailable):
        client.connect()


def test_double_connect_is_a_conflict(bus):
    with pytest.raises(ConflictError):
        bus.connect()


def test_publish_after_close_raises(broker):
    client = MqttBus(port=broker.port).connect()
    client.close()
    with pytest.raises(TransportUnavailable):
        client.publish("le3d/data/lab/s1", b"x")


def test_publish_validates_topic_and_qos(bus):
    with pytest.raises(InputError):
        bus.publish("le3d/data/+/s1", b"x")
    with pytest.raises(InputError):
        bus.publish("", b"x")
    with pytest.raises(InputError):
        bus.publish("le3d/data/lab/s1", b"x", qos=2)


def test_subscribe_validates_filter(bus):
    with pytest.raises(InputError):
        bus.subscribe("", lambda t, p, r: None)
    with pytest.raises(InputError):
        bus.subscribe("le3d/data/#/deeper", lambda t, p, r: None)


def test_duplicate_filters_are_refcounted(bus):
    first, second = Collector(), Collector()
    sub1 = bus.subscribe("le3d/data/lab/s1", first)
    bus.subscribe("le3d/data/lab/s1", second)
    bus.publish("le3d/data/lab/s1", b"one")
    first.wait_count(1)
    second.wait_count(1)
    sub1.unsubscribe()
    bus.publish("le3d/data/lab/s1", b"two")
    # the surviving subscription must keep the broker-side filter alive
    assert [p for _, p, _ in second.wait_count(2)] == [b"one", b"two"]
    assert len(first.items) == 1


def test_overlapping_filters_deliver_once_per_subscription(bus):
    wide, narrow = Collector(), Collector()
    bus.subscribe("le3d/data/#", wide)
    bus.subscribe("le3d/data/lab/+", narrow)
    bus.publish("le3d/data/lab/s1", b"x")
    assert len(wide.wait_count(1)) == 1
    assert len(narrow.wait_count(1)) == 1
    time.sleep(0.2)  # any duplicate would have landed by now
    assert len(wide.items) == 1
    assert len(narrow.items) == 1


def test_acked_publish_from_inside_a_callback(bus):
    """Consumers publish retained decisions from receive callbacks; the
    acknowledgment wait must not deadlock the connection."""
    relayed = Collector()
    bus.subscribe("le3d/decision/lab/det1/s1", relayed)

    def forward(topic, payload, retained):
        bus.publish("le3d/decision/lab/det1/s1", b"fwd:" + payload, retained=True)

    bus.subscribe("le3d/data/lab/s1", forward)
    bus.publish("le3d/data/lab/s1", b"raw")
    assert relayed.wait_count(1)[0][1] == b"fwd:raw"


def test_keepalive_pings_hold_an_idle_connection(broker):
    client = MqttBus(port=broker.port, keepalive_s=1).connect()
    try:
        time.sleep(2.5)  # several keepalive intervals of silence
        assert client.connected
        got = Collector()
        client.subscribe("le3d/data/lab/s1", got)
        client.publish("le3d/data/lab/s1", b"still here")
        assert got.wait_count(1)[0][1] == b"still here"
    finally:
        client.close()


def test_broker_shutdown_surfaces_as_transport_unavailable(broker):
    client = MqttBus(port=broker.port).connect()
    try:
        broker.stop()
        assert wait_until(lambda: not client.connected)
        with pytest.raises(TransportUnavailable):
            client.publish("le3d/data/lab/s1", b"x")
    finally:
        client.close()


# -- broker behaviors ---------------------------------------------------------


def _raw_connect(port, level=4, client_id="probe"):
    sock = socket.create_connection(("127.0.0.1", port), timeout=2)
    sock.settimeout(2)
    body = (
        encode_string("MQTT")
        + bytes([level, 0x02])
        + struct.pack(">H", 0)
        + encode_string(client_id)
    )
    sock.sendall(encode_packet(TYPE_CONNECT, 0, body))
    return sock


def test_broker_refuses_wrong_protocol_level(broker):
    sock = _raw_connect(broker.port, level=3)
    try:
        ptype, _flags, body = read_packet(sock)
        assert ptype == TYPE_CONNACK
        assert body[1] == 1  # unacceptable protocol version
        assert sock.recv(1) == b""  # and the broker hangs up
    finally:
        sock.close()


def test_broker_drops_connection_that_skips_connect(broker):
    sock = socket.create_connection(("127.0.0.1", broker.port), timeout=2)
    sock.settimeout(2)
    try:
        sock.sendall(encode_packet(TYPE_PINGREQ, 0, b""))
        assert sock.recv(1) == b""
    finally:
        sock.close()


def test_broker_names_anonymous_clients(broker):
    sock = _raw_connect(broker.port, client_id="")
    try:
        ptype, _flags, body = read_packet(sock)
        assert (ptype, body[1]) == (TYPE_CONNACK, 0)
        assert wait_until(lambda: broker.client_count() == 1)
    finally:
        sock.close()


def test_context_managers_cover_the_whole_lifecycle():
    with MiniBroker() as broker:
        with MqttBus(port=broker.port) as client:
            got = Collector()
            client.subscribe("le3d/data/lab/s1", got)
            client.publish("le3d/data/lab/s1", b"x", retained=True)
            got.wait_count(1)
            assert broker.retained_topics() == {"le3d/data/lab/s1": b"x"}


# -- end to end over sockets ----------------------------------------------------


def test_retained_reconstruction_over_socket_transport(broker):
    """A detector stack on real connections, a drift injection, then a brand
    new aggregator on a separate connection: it must learn the drifting
    peer share from retained replay alone."""
    from le3d.aggregator import AggregatorService
    from le3d.datagen import DriftCommand, DriftKind, DriftScope
    from le3d.scenario import ScenarioStack

    shared = MqttBus(port=broker.port).connect()
    late_bus = None
    try:
        stack = ScenarioStack(seed=3, bus=shared).start()
        target = stack.nodes[0].stream_id
        stack.tick(200)
        assert wait_until(lambda: not stack.decisions or all(
            not d.drifting for d in stack.decisions
        ))
        stack.inject(
            DriftCommand(
                target_stream_id=target,
                kind=DriftKind.STEP,
                magnitude=5.0,
                duration_ms=0,
                issued_at=stack.clock(),
                scope=DriftScope.SINGLE,
                sensor_type="temperature",
            )
        )

        def share_is_drifting():
            stack.tick(1)
            share = stack.nodes[0].aggregator.core.peers.latest("agg-site-a", target)
            return share is not None and share.drifting

        assert wait_until(share_is_drifting, timeout=20.0), "no drifting share appeared"

        late_bus = MqttBus(port=broker.port).connect()
        late = AggregatorService(
            late_bus, "agg-late", "site-late", "det-late", clock=stack.clock
        )
        late.start()
        assert wait_until(
            lambda: (
                late.core.peers.latest("agg-site-a", target) is not None
                and late.core.peers.latest("agg-site-a", target).drifting
            )
        ), "late joiner never reconstructed the drifting share"
    finally:
        if late_bus is not None:
            late_bus.close()
        shared.close()
