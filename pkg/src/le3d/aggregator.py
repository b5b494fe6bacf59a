"""Peer drift classification.

One aggregator runs next to each detector. It republishes the co-located
detector's drift decisions as privacy-bounded shares (decision + endpoint
metadata + the one-sample K-S summary, never raw values), collects the
shares of other aggregators, and classifies each active local drift as
Natural (concurrent across enough sensors of the same type) or Abnormal
(this sensor alone). Every aggregator publishes its own view; identical
inputs produce identical classifications.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

from .detector import DriftDecision, _body_int, _body_str
from .errors import ConfigError, DecodeError, InputError, TransportUnavailable
from .estimators.ks import KsResult
from .transport.envelope import MessageKind, decode, make_envelope
from .transport.topics import Channel, subscription_filter, topic_for
from .transport.topics import _check_segment as _check_topic_segment

__all__ = [
    "AggregateShare",
    "DriftClass",
    "DriftClassKind",
    "PeerTable",
    "PeerEntry",
    "AggregatorCore",
    "AggregatorService",
    "ks_similarity_gate",
    "SHARE_QUEUE_SIZE",
]

DEFAULT_NATURAL_QUORUM = 2
DEFAULT_CONCURRENCY_WINDOW_MS = 30_000
DEFAULT_LIVENESS_TIMEOUT_MS = 120_000
DEFAULT_TAU = 0.3
SHARE_QUEUE_SIZE = 100


@dataclass(frozen=True)
class AggregateShare:
    """What one aggregator tells the others about one stream."""

    origin_detector_id: str
    origin_aggregator_id: str
    stream_id: str
    sensor_type: str
    site: str
    drifting: bool
    decided_at: int
    share_seq: int
    ks: Optional[KsResult] = None

    def as_dict(self) -> dict:
        return {
            "origin_detector_id": self.origin_detector_id,
            "origin_aggregator_id": self.origin_aggregator_id,
            "stream_id": self.stream_id,
            "sensor_type": self.sensor_type,
            "site": self.site,
            "drifting": self.drifting,
            "decided_at": self.decided_at,
            "share_seq": self.share_seq,
            "ks": None if self.ks is None else self.ks.as_dict(),
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "AggregateShare":
        drifting = body.get("drifting")
        if not isinstance(drifting, bool):
            raise DecodeError("field drifting must be a boolean", field="drifting")
        ks_body = body.get("ks")
        if ks_body is not None:
            try:
                ks = KsResult.from_dict(ks_body)
            except (KeyError, TypeError, ValueError):
                raise DecodeError("field ks is malformed", field="ks") from None
        else:
            ks = None
        return cls(
            origin_detector_id=_body_str(body, "origin_detector_id"),
            origin_aggregator_id=_body_str(body, "origin_aggregator_id"),
            stream_id=_body_str(body, "stream_id"),
            sensor_type=_body_str(body, "sensor_type", default=""),
            site=_body_str(body, "site"),
            drifting=drifting,
            decided_at=_body_int(body, "decided_at"),
            share_seq=_body_int(body, "share_seq"),
            ks=ks,
        )


class DriftClassKind(str, Enum):
    NONE = "none"
    NATURAL = "natural"
    ABNORMAL = "abnormal"


@dataclass(frozen=True)
class DriftClass:
    """Classification of one stream's drift, with its supporting evidence."""

    stream_id: str
    aggregator_id: str
    site: str
    kind: DriftClassKind
    concurrent_peers: int
    window_ms: int
    contributing_streams: tuple[str, ...]
    classified_at: int

    def as_dict(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "aggregator_id": self.aggregator_id,
            "site": self.site,
            "kind": self.kind.value,
            "evidence": {
                "concurrent_peers": self.concurrent_peers,
                "window_ms": self.window_ms,
                "contributing_streams": list(self.contributing_streams),
            },
            "classified_at": self.classified_at,
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "DriftClass":
        kind_raw = body.get("kind")
        try:
            kind = DriftClassKind(kind_raw)
        except ValueError:
            raise DecodeError(f"unknown classification kind {kind_raw!r}", field="kind") from None
        evidence = body.get("evidence")
        if not isinstance(evidence, Mapping):
            raise DecodeError("field evidence must be an object", field="evidence")
        streams = evidence.get("contributing_streams")
        if not isinstance(streams, list) or not all(isinstance(s, str) for s in streams):
            raise DecodeError(
                "field evidence.contributing_streams must be a list of stream ids",
                field="evidence",
            )
        return cls(
            stream_id=_body_str(body, "stream_id"),
            aggregator_id=_body_str(body, "aggregator_id"),
            site=_body_str(body, "site"),
            kind=kind,
            concurrent_peers=_body_int(evidence, "concurrent_peers"),
            window_ms=_body_int(evidence, "window_ms"),
            contributing_streams=tuple(streams),
            classified_at=_body_int(body, "classified_at"),
        )


def ks_similarity_gate(local: Optional[KsResult], peer: Optional[KsResult], tau: float) -> bool:
    """True iff the two drift magnitudes are within tau of each other.

    Missing results fail the gate: without a K-S summary there is no basis
    for calling two drifts similar.
    """
    if not (0.0 <= tau <= 1.0):
        raise InputError(f"tau must be in [0, 1], got {tau!r}")
    if local is None or peer is None:
        return False
    return abs(local.statistic_d - peer.statistic_d) <= tau


@dataclass
class PeerEntry:
    share: AggregateShare
    last_seen: int


class PeerTable:
    """Latest share per (aggregator, stream), with liveness bookkeeping."""

    def __init__(self, liveness_timeout_ms: int = DEFAULT_LIVENESS_TIMEOUT_MS):
        if liveness_timeout_ms < 1:
            raise ConfigError("liveness_timeout_ms must be positive")
        self.liveness_timeout_ms = liveness_timeout_ms
        self._entries: dict[tuple[str, str], PeerEntry] = {}

    def upsert(self, share: AggregateShare, now: int) -> bool:
        """Record a share; returns False when it is stale (seq not newer)."""
        key = (share.origin_aggregator_id, share.stream_id)
        existing = self._entries.get(key)
        if existing is not None and share.share_seq <= existing.share.share_seq:
            return False
        self._entries[key] = PeerEntry(share=share, last_seen=now)
        return True

    def latest(self, aggregator_id: str, stream_id: str) -> Optional[AggregateShare]:
        entry = self._entries.get((aggregator_id, stream_id))
        return entry.share if entry is not None else None

    def alive_entries(self, now: int) -> list[PeerEntry]:
        horizon = now - self.liveness_timeout_ms
        return [e for e in self._entries.values() if e.last_seen >= horizon]

    def __len__(self) -> int:
        return len(self._entries)


class AggregatorCore:
    """Share bookkeeping and the natural/abnormal classification rule."""

    def __init__(
        self,
        aggregator_id: str,
        site: str,
        natural_quorum: int = DEFAULT_NATURAL_QUORUM,
        concurrency_window_ms: int = DEFAULT_CONCURRENCY_WINDOW_MS,
        liveness_timeout_ms: int = DEFAULT_LIVENESS_TIMEOUT_MS,
        tau: float = DEFAULT_TAU,
        ks_gate_enabled: bool = False,
    ):
        _check_topic_segment(aggregator_id, "aggregator_id")
        _check_topic_segment(site, "site")
        if not isinstance(natural_quorum, int) or natural_quorum < 2:
            raise ConfigError("natural_quorum must be an integer >= 2")
        if concurrency_window_ms < 1:
            raise ConfigError("concurrency_window_ms must be positive")
        if not (0.0 <= tau <= 1.0):
            raise ConfigError(f"tau must be in [0, 1], got {tau!r}")
        self.aggregator_id = aggregator_id
        self.site = site
        self.natural_quorum = natural_quorum
        self.concurrency_window_ms = concurrency_window_ms
        self.tau = tau
        self.ks_gate_enabled = ks_gate_enabled
        self.peers = PeerTable(liveness_timeout_ms)
        self.share_seq = 0
        self.malformed_dropped = 0
        self.stale_dropped = 0
        self._lock = threading.Lock()

    def on_local_decision(self, decision: DriftDecision, now: int) -> AggregateShare:
        with self._lock:
            self.share_seq += 1
            share = AggregateShare(
                origin_detector_id=decision.detector_id,
                origin_aggregator_id=self.aggregator_id,
                stream_id=decision.stream_id,
                sensor_type=decision.metadata.sensor_type,
                site=decision.site,
                drifting=decision.drifting,
                decided_at=decision.decided_at,
                share_seq=self.share_seq,
                ks=decision.ks,
            )
            self.peers.upsert(share, now)
            return share

    def on_peer_share(self, share: AggregateShare, now: int) -> bool:
        """Record a peer's share; returns True when the table changed."""
        if share.origin_aggregator_id == self.aggregator_id:
            return False  # own share echoed back by the broker
        with self._lock:
            if self.peers.upsert(share, now):
                return True
            self.stale_dropped += 1
            return False

    def local_stream_ids(self) -> list[str]:
        with self._lock:
            return sorted(
                stream_id
                for (agg_id, stream_id) in self.peers._entries
                if agg_id == self.aggregator_id
            )

    def classify_drift(self, stream_id: str, now: int) -> DriftClass:
        with self._lock:
            return self._classify_locked(stream_id, now)

    def _classify_locked(self, stream_id: str, now: int) -> DriftClass:
        local = self.peers.latest(self.aggregator_id, stream_id)

        def result(kind: DriftClassKind, count: int, streams: Sequence[str]) -> DriftClass:
            return DriftClass(
                stream_id=stream_id,
                aggregator_id=self.aggregator_id,
                site=self.site,
                kind=kind,
                concurrent_peers=count,
                window_ms=self.concurrency_window_ms,
                contributing_streams=tuple(sorted(set(streams))),
                classified_at=now,
            )

        if local is None or not local.drifting:
            return result(DriftClassKind.NONE, 0, ())

        contributing = {stream_id}
        for entry in self.peers.alive_entries(now):
            share = entry.share
            if share.stream_id == stream_id:
                continue
            if not share.drifting:
                continue
            if share.sensor_type != local.sensor_type:
                continue
            if abs(share.decided_at - local.decided_at) > self.concurrency_window_ms:
                continue
            if self.ks_gate_enabled and not ks_similarity_gate(local.ks, share.ks, self.tau):
                continue
            contributing.add(share.stream_id)

        count = len(contributing)
        kind = DriftClassKind.NATURAL if count >= self.natural_quorum else DriftClassKind.ABNORMAL
        return result(kind, count, contributing)


class AggregatorService:
    """Binds an AggregatorCore to the message bus.

    Subscribes to the co-located detector's decisions and to every site's
    aggregate topics; publishes shares and classifications as retained
    messages. Classification is re-evaluated on every local decision and
    every accepted peer share, and republished when its content changes.
    """

    def __init__(
        self,
        bus,
        aggregator_id: str,
        site: str,
        detector_id: str,
        natural_quorum: int = DEFAULT_NATURAL_QUORUM,
        concurrency_window_ms: int = DEFAULT_CONCURRENCY_WINDOW_MS,
        liveness_timeout_ms: int = DEFAULT_LIVENESS_TIMEOUT_MS,
        tau: float = DEFAULT_TAU,
        ks_gate_enabled: bool = False,
        share_queue: int = SHARE_QUEUE_SIZE,
        clock: Optional[Callable[[], int]] = None,
    ):
        _check_topic_segment(detector_id, "detector_id")
        if share_queue < 1:
            raise ConfigError("share_queue must be positive")
        self.bus = bus
        self.core = AggregatorCore(
            aggregator_id,
            site,
            natural_quorum=natural_quorum,
            concurrency_window_ms=concurrency_window_ms,
            liveness_timeout_ms=liveness_timeout_ms,
            tau=tau,
            ks_gate_enabled=ks_gate_enabled,
        )
        self.detector_id = detector_id
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.decode_errors = 0
        self.shares_published = 0
        self.classes_published = 0
        self.share_queue_dropped = 0
        self._pending_shares: deque[AggregateShare] = deque()
        self._share_queue_size = share_queue
        self._last_class: dict[str, tuple] = {}
        self._subscriptions: list = []
        # reentrant: a publish can dispatch bus callbacks on this thread,
        # and those callbacks may land back in this service
        self._lock = threading.RLock()

    # ------------------------------------------------------------ wiring

    def start(self) -> None:
        if self._subscriptions:
            return
        decision_filter = subscription_filter(
            Channel.DECISION, site=self.core.site, ids=[self.detector_id, None]
        )
        self._subscriptions.append(self.bus.subscribe(decision_filter, self._on_decision))
        self._subscriptions.append(
            self.bus.subscribe(subscription_filter(Channel.AGGREGATE), self._on_share)
        )

    def stop(self) -> None:
        for sub in self._subscriptions:
            sub.unsubscribe()
        self._subscriptions = []

    def _on_decision(self, topic: str, payload: bytes, retained: bool) -> None:
        try:
            envelope = decode(payload)
            if envelope.kind != MessageKind.DECISION:
                raise DecodeError(f"unexpected kind {envelope.kind!r} on a decision topic", field="kind")
            decision = DriftDecision.from_body(envelope.body)
        except DecodeError:
            self.decode_errors += 1
            return
        self.handle_local_decision(decision)

    def _on_share(self, topic: str, payload: bytes, retained: bool) -> None:
        try:
            envelope = decode(payload)
            if envelope.kind != MessageKind.AGGREGATE:
                raise DecodeError(f"unexpected kind {envelope.kind!r} on an aggregate topic", field="kind")
            share = AggregateShare.from_body(envelope.body)
        except DecodeError:
            self.core.malformed_dropped += 1
            return
        self.handle_peer_share(share)

    # ------------------------------------------------------------- logic

    def handle_local_decision(self, decision: DriftDecision) -> AggregateShare:
        now = self.clock()
        share = self.core.on_local_decision(decision, now)
        self._publish_share(share)
        self._reclassify([decision.stream_id], now)
        return share

    def handle_peer_share(self, share: AggregateShare) -> None:
        now = self.clock()
        if not self.core.on_peer_share(share, now):
            return
        # a peer share can flip any local stream of the same sensor type
        affected = []
        for stream_id in self.core.local_stream_ids():
            local = self.core.peers.latest(self.core.aggregator_id, stream_id)
            if local is not None and local.sensor_type == share.sensor_type:
                affected.append(stream_id)
        self._reclassify(affected, now)

    def tick(self) -> None:
        """Periodic liveness sweep: reclassify everything against now."""
        self._reclassify(self.core.local_stream_ids(), self.clock())

    def _reclassify(self, stream_ids: Sequence[str], now: int) -> None:
        for stream_id in stream_ids:
            drift_class = self.core.classify_drift(stream_id, now)
            fingerprint = (
                drift_class.kind,
                drift_class.concurrent_peers,
                drift_class.contributing_streams,
            )
            with self._lock:
                if self._last_class.get(stream_id) == fingerprint:
                    continue
                self._last_class[stream_id] = fingerprint
            self._publish_class(drift_class)

    # ---------------------------------------------------------- publish

    def _publish_share(self, share: AggregateShare) -> None:
        with self._lock:
            self._flush_locked()
            if self._pending_shares:
                self._queue_locked(share)
                return
            try:
                self._send_share(share)
            except TransportUnavailable:
                self._queue_locked(share)

    def flush_shares(self) -> int:
        with self._lock:
            before = self.shares_published
            self._flush_locked()
            return self.shares_published - before

    def _queue_locked(self, share: AggregateShare) -> None:
        if len(self._pending_shares) >= self._share_queue_size:
            self._pending_shares.popleft()
            self.share_queue_dropped += 1
        self._pending_shares.append(share)

    def _flush_locked(self) -> None:
        while self._pending_shares:
            head = self._pending_shares[0]
            try:
                self._send_share(head)
            except TransportUnavailable:
                return
            self._pending_shares.popleft()

    def _send_share(self, share: AggregateShare) -> None:
        topic = topic_for(Channel.AGGREGATE, share.site, [share.stream_id])
        envelope = make_envelope(MessageKind.AGGREGATE, share.as_dict())
        self.bus.publish(topic, envelope.encode(), retained=True)
        self.shares_published += 1

    def _publish_class(self, drift_class: DriftClass) -> None:
        topic = topic_for(Channel.CLASS, drift_class.site, [drift_class.stream_id])
        envelope = make_envelope(MessageKind.CLASS, drift_class.as_dict())
        try:
            self.bus.publish(topic, envelope.encode(), retained=True)
            self.classes_published += 1
        except TransportUnavailable:
            # the next reclassification republishes; classes are derived state
            with self._lock:
                self._last_class.pop(drift_class.stream_id, None)

    def stats(self) -> dict:
        return {
            "aggregator_id": self.core.aggregator_id,
            "site": self.core.site,
            "peer_entries": len(self.core.peers),
            "shares_published": self.shares_published,
            "classes_published": self.classes_published,
            "share_queue_dropped": self.share_queue_dropped,
            "share_queue_buffered": len(self._pending_shares),
            "malformed_dropped": self.core.malformed_dropped,
            "stale_dropped": self.core.stale_dropped,
            "decode_errors": self.decode_errors,
        }
