"""Edge drift-detection service.

A detector hosts many sensor streams. Each stream gets an ensemble of
estimators; a per-estimator flag is considered a vote for the next V
samples, and the stream's verdict flips when a quorum of estimators vote
drifting. Decisions are emitted only on verdict transitions and carry a
one-sample K-S comparison of the most recent values against a baseline
that was frozen the moment drift began.

Privacy contract: drift decisions never carry raw sample values, only the
vote booleans and the K-S summary statistics. Raw values leave the edge
tier only over the explicit relay path, which is off by default.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import (
    ConfigError,
    ConflictError,
    DecodeError,
    InputError,
    RoutingError,
    TransportUnavailable,
)
from .estimators import DEFAULT_ENSEMBLE, Estimator, make_estimator
from .estimators.ks import KsResult, RollingEcdf, ks_one_sample
from .transport.envelope import MessageKind, decode, make_envelope
from .transport.topics import Channel, subscription_filter, topic_for
from .transport.topics import _check_segment as _check_topic_segment

__all__ = [
    "Metadata",
    "Sample",
    "DriftDecision",
    "StreamBinding",
    "DetectorCore",
    "DetectorService",
    "Relay",
    "ensemble_vote",
]

DEFAULT_VOTE_WINDOW = 10
DEFAULT_QUORUM_FRACTION = 0.5
DEFAULT_BASELINE_CAPACITY = 300
RELAY_BUFFER_SIZE = 1000


def _body_str(body: Mapping, name: str, default: Optional[str] = None) -> str:
    if name not in body:
        if default is not None:
            return default
        raise DecodeError(f"missing required field {name}", field=name)
    value = body[name]
    if not isinstance(value, str):
        raise DecodeError(f"field {name} must be a string", field=name)
    return value


def _body_number(body: Mapping, name: str) -> float:
    if name not in body:
        raise DecodeError(f"missing required field {name}", field=name)
    value = body[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DecodeError(f"field {name} must be a number", field=name)
    return float(value)


def _body_int(body: Mapping, name: str, minimum: int = 0) -> int:
    if name not in body:
        raise DecodeError(f"missing required field {name}", field=name)
    value = body[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise DecodeError(f"field {name} must be an integer", field=name)
    if value < minimum:
        raise DecodeError(f"field {name} must be >= {minimum}", field=name)
    return value


@dataclass(frozen=True)
class Metadata:
    """Descriptive stream metadata carried on samples and decisions."""

    sensor_type: str = ""
    unit: str = ""
    extra: Mapping[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"sensor_type": self.sensor_type, "unit": self.unit, "extra": dict(self.extra)}

    @classmethod
    def from_body(cls, body: Mapping) -> "Metadata":
        if not isinstance(body, Mapping):
            raise DecodeError("field metadata must be an object", field="metadata")
        extra = body.get("extra", {})
        if not isinstance(extra, Mapping):
            raise DecodeError("field metadata.extra must be an object", field="metadata")
        for key, value in extra.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise DecodeError("field metadata.extra must map strings to strings", field="metadata")
        return cls(
            sensor_type=_body_str(body, "sensor_type", default=""),
            unit=_body_str(body, "unit", default=""),
            extra=dict(extra),
        )


@dataclass(frozen=True)
class Sample:
    """One sensor reading. ``seq`` increases strictly per stream."""

    stream_id: str
    site: str
    timestamp: int
    value: float
    seq: int
    metadata: Metadata = field(default_factory=Metadata)

    def as_dict(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "site": self.site,
            "timestamp": self.timestamp,
            "value": self.value,
            "seq": self.seq,
            "metadata": self.metadata.as_dict(),
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "Sample":
        value = _body_number(body, "value")
        if not math.isfinite(value):
            raise DecodeError("field value must be finite", field="value")
        meta = body.get("metadata", {})
        return cls(
            stream_id=_body_str(body, "stream_id"),
            site=_body_str(body, "site"),
            timestamp=_body_int(body, "timestamp"),
            value=value,
            seq=_body_int(body, "seq"),
            metadata=Metadata.from_body(meta),
        )


@dataclass(frozen=True)
class DriftDecision:
    """Published on every ensemble verdict transition for a stream.

    ``ks`` is the one-sample test of the last vote-window values against
    the frozen baseline; it is None only when drift begins before any
    baseline value was collected.
    """

    stream_id: str
    detector_id: str
    site: str
    decided_at: int
    drifting: bool
    votes: Mapping[str, bool]
    seq_at_decision: int
    ks: Optional[KsResult] = None
    metadata: Metadata = field(default_factory=Metadata)

    def as_dict(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "detector_id": self.detector_id,
            "site": self.site,
            "decided_at": self.decided_at,
            "drifting": self.drifting,
            "votes": dict(self.votes),
            "seq_at_decision": self.seq_at_decision,
            "ks": None if self.ks is None else self.ks.as_dict(),
            "metadata": self.metadata.as_dict(),
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "DriftDecision":
        drifting = body.get("drifting")
        if not isinstance(drifting, bool):
            raise DecodeError("field drifting must be a boolean", field="drifting")
        votes = body.get("votes")
        if not isinstance(votes, Mapping) or not votes:
            raise DecodeError("field votes must be a nonempty object", field="votes")
        for key, flag in votes.items():
            if not isinstance(key, str) or not isinstance(flag, bool):
                raise DecodeError("field votes must map estimator kinds to booleans", field="votes")
        ks_body = body.get("ks")
        if ks_body is not None:
            try:
                ks = KsResult.from_dict(ks_body)
            except (KeyError, TypeError, ValueError):
                raise DecodeError("field ks is malformed", field="ks") from None
        else:
            ks = None
        return cls(
            stream_id=_body_str(body, "stream_id"),
            detector_id=_body_str(body, "detector_id"),
            site=_body_str(body, "site"),
            decided_at=_body_int(body, "decided_at"),
            drifting=drifting,
            votes=dict(votes),
            seq_at_decision=_body_int(body, "seq_at_decision"),
            ks=ks,
            metadata=Metadata.from_body(body.get("metadata", {})),
        )


def ensemble_vote(votes: Mapping[str, bool], quorum_fraction: float) -> bool:
    """True iff the count of true votes meets ceil(quorum_fraction * n).

    A small slack keeps float noise in quorum_fraction * n from pushing
    the ceiling one estimator too high.
    """
    if not votes:
        raise InputError("ensemble_vote requires at least one vote")
    if not (0.0 < quorum_fraction <= 1.0):
        raise InputError(f"quorum_fraction must be in (0, 1], got {quorum_fraction!r}")
    needed = max(1, math.ceil(quorum_fraction * len(votes) - 1e-9))
    return sum(1 for flag in votes.values() if flag) >= needed


class StreamBinding:
    """Per-stream detection state: estimators, vote windows, baseline."""

    def __init__(
        self,
        stream_id: str,
        estimators: Optional[Sequence[Estimator]] = None,
        vote_window: int = DEFAULT_VOTE_WINDOW,
        quorum_fraction: float = DEFAULT_QUORUM_FRACTION,
        baseline_capacity: int = DEFAULT_BASELINE_CAPACITY,
        metadata: Optional[Metadata] = None,
    ):
        _check_topic_segment(stream_id, "stream_id")
        if estimators is None:
            estimators = [make_estimator(kind) for kind in DEFAULT_ENSEMBLE]
        estimators = list(estimators)
        if not estimators:
            raise ConfigError(f"stream {stream_id}: estimator set must be nonempty")
        kinds = [est.kind for est in estimators]
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"stream {stream_id}: duplicate estimator kinds in ensemble")
        if not isinstance(vote_window, int) or vote_window < 1:
            raise ConfigError(f"stream {stream_id}: vote_window must be a positive integer")
        if not (0.0 < quorum_fraction <= 1.0):
            raise ConfigError(f"stream {stream_id}: quorum_fraction must be in (0, 1]")
        if not isinstance(baseline_capacity, int) or baseline_capacity < 30:
            raise ConfigError(f"stream {stream_id}: baseline_capacity must be an integer >= 30")

        self.stream_id = stream_id
        self.estimators = estimators
        self.vote_window = vote_window
        self.quorum_fraction = quorum_fraction
        self.metadata = metadata or Metadata()
        self.baseline = RollingEcdf(baseline_capacity)
        self.frozen_baseline = None
        self.drifting = False
        self.last_seq: Optional[int] = None
        self.samples_seen = 0
        self.stale_dropped = 0
        # index of the most recent flag per estimator; a flag votes true
        # for vote_window consecutive samples starting at its own
        self._last_flag_index = [None] * len(estimators)
        self._recent_values: deque = deque(maxlen=vote_window)
        self._lock = threading.Lock()

    def votes_at(self, index: int) -> dict[str, bool]:
        return {
            est.kind: (last is not None and index - last < self.vote_window)
            for est, last in zip(self.estimators, self._last_flag_index)
        }


class DetectorCore:
    """Stream registry plus the ingest state machine, transport-free."""

    def __init__(self, detector_id: str, site: str):
        _check_topic_segment(detector_id, "detector_id")
        _check_topic_segment(site, "site")
        self.detector_id = detector_id
        self.site = site
        self._bindings: dict[str, StreamBinding] = {}
        self._registry_lock = threading.Lock()
        self.invalid_dropped = 0
        self.stale_dropped = 0
        self.decisions_emitted = 0

    def register_stream(self, binding: StreamBinding) -> StreamBinding:
        with self._registry_lock:
            if binding.stream_id in self._bindings:
                raise ConflictError(f"stream {binding.stream_id!r} is already registered")
            self._bindings[binding.stream_id] = binding
        return binding

    def binding_for(self, stream_id: str) -> Optional[StreamBinding]:
        with self._registry_lock:
            return self._bindings.get(stream_id)

    def stream_ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._bindings)

    def ingest_sample(self, sample: Sample) -> Optional[DriftDecision]:
        binding = self.binding_for(sample.stream_id)
        if binding is None:
            raise RoutingError(f"no binding registered for stream {sample.stream_id!r}")
        if not isinstance(sample.value, (int, float)) or isinstance(sample.value, bool) or (
            not math.isfinite(sample.value)
        ):
            self.invalid_dropped += 1
            raise InputError(f"sample value must be finite, got {sample.value!r}")

        with binding._lock:
            if binding.last_seq is not None and sample.seq <= binding.last_seq:
                binding.stale_dropped += 1
                self.stale_dropped += 1
                return None
            binding.last_seq = sample.seq
            index = binding.samples_seen
            binding.samples_seen += 1

            value = float(sample.value)
            for slot, est in enumerate(binding.estimators):
                if est.update(value):
                    binding._last_flag_index[slot] = index
            binding._recent_values.append(value)
            if binding.metadata.sensor_type == "" and sample.metadata.sensor_type:
                binding.metadata = sample.metadata

            votes = binding.votes_at(index)
            verdict = ensemble_vote(votes, binding.quorum_fraction)

            decision: Optional[DriftDecision] = None
            if verdict != binding.drifting:
                if verdict:
                    # drift onset: freeze the pre-drift baseline (None when
                    # drift begins before any value was collected)
                    binding.frozen_baseline = (
                        binding.baseline.freeze() if len(binding.baseline) > 0 else None
                    )
                reference = binding.frozen_baseline
                ks = None
                if reference is not None and len(reference) > 0:
                    ks = ks_one_sample(list(binding._recent_values), reference)
                decision = DriftDecision(
                    stream_id=sample.stream_id,
                    detector_id=self.detector_id,
                    site=self.site,
                    decided_at=sample.timestamp,
                    drifting=verdict,
                    votes=votes,
                    seq_at_decision=sample.seq,
                    ks=ks,
                    metadata=sample.metadata,
                )
                binding.drifting = verdict
                if not verdict:
                    binding.frozen_baseline = None
                self.decisions_emitted += 1

            if not binding.drifting:
                binding.baseline.push(value)
            return decision

    def stats(self) -> dict:
        with self._registry_lock:
            bindings = list(self._bindings.values())
        return {
            "detector_id": self.detector_id,
            "site": self.site,
            "streams": len(bindings),
            "samples_seen": sum(b.samples_seen for b in bindings),
            "stale_dropped": self.stale_dropped,
            "invalid_dropped": self.invalid_dropped,
            "decisions_emitted": self.decisions_emitted,
        }


class Relay:
    """Forwards raw samples to the cloud tier when enabled.

    Outages are absorbed by a bounded FIFO buffer; once the buffer is
    full the oldest sample is dropped and counted. Buffered samples are
    flushed in seq order before newer traffic.
    """

    def __init__(
        self,
        send: Callable[[Sample], None],
        enabled: bool = False,
        buffer_size: int = RELAY_BUFFER_SIZE,
    ):
        if buffer_size < 1:
            raise ConfigError("relay buffer_size must be positive")
        self._send = send
        self.enabled = enabled
        self.buffer_size = buffer_size
        self._buffer: deque[Sample] = deque()
        self.dropped = 0
        self.sent = 0
        # reentrant: sending may dispatch bus callbacks that re-enter offer()
        self._lock = threading.RLock()

    def offer(self, sample: Sample) -> None:
        if not self.enabled:
            return
        with self._lock:
            self._flush_locked()
            if self._buffer:
                self._push_locked(sample)
                return
            try:
                self._send(sample)
                self.sent += 1
            except TransportUnavailable:
                self._push_locked(sample)

    def flush(self) -> int:
        """Retry buffered samples; returns how many were sent."""
        with self._lock:
            before = self.sent
            self._flush_locked()
            return self.sent - before

    def _push_locked(self, sample: Sample) -> None:
        if len(self._buffer) >= self.buffer_size:
            self._buffer.popleft()
            self.dropped += 1
        self._buffer.append(sample)

    def _flush_locked(self) -> None:
        while self._buffer:
            head = self._buffer[0]
            try:
                self._send(head)
            except TransportUnavailable:
                return
            self._buffer.popleft()
            self.sent += 1

    @property
    def buffered(self) -> int:
        with self._lock:
            return len(self._buffer)


def _estimators_from_config(specs: Iterable[Mapping]) -> list[Estimator]:
    built = []
    for spec in specs:
        if not isinstance(spec, Mapping) or "kind" not in spec:
            raise ConfigError("estimator config entries need a 'kind'")
        built.append(make_estimator(spec["kind"], spec.get("params")))
    return built


class DetectorService:
    """Binds a DetectorCore to a message bus.

    Subscribes to sample topics, auto-registers unseen streams (picking
    the ensemble by sensor_type when configured), publishes decisions as
    retained messages, and optionally relays raw samples.
    """

    def __init__(
        self,
        bus,
        detector_id: str,
        site: str,
        subscribe_site: Optional[str] = None,
        vote_window: int = DEFAULT_VOTE_WINDOW,
        quorum_fraction: float = DEFAULT_QUORUM_FRACTION,
        baseline_capacity: int = DEFAULT_BASELINE_CAPACITY,
        estimators_by_type: Optional[Mapping[str, Sequence[Mapping]]] = None,
        relay_enabled: bool = False,
        relay_buffer: int = RELAY_BUFFER_SIZE,
    ):
        self.bus = bus
        self.core = DetectorCore(detector_id, site)
        self.vote_window = vote_window
        self.quorum_fraction = quorum_fraction
        self.baseline_capacity = baseline_capacity
        self.estimators_by_type = dict(estimators_by_type or {})
        # validate the per-type map up front so bad config fails at startup
        for sensor_type, specs in self.estimators_by_type.items():
            _estimators_from_config(specs)
        self.relay = Relay(self._send_relay, enabled=relay_enabled, buffer_size=relay_buffer)
        self.decode_errors = 0
        self.decisions_published = 0
        self._subscription = None
        self._subscribe_site = subscribe_site if subscribe_site else site

    def start(self) -> None:
        if self._subscription is not None:
            return
        topic_filter = subscription_filter(Channel.DATA, site=self._subscribe_site)
        self._subscription = self.bus.subscribe(topic_filter, self._on_message)

    def stop(self) -> None:
        if self._subscription is not None:
            self._subscription.unsubscribe()
            self._subscription = None

    def _on_message(self, topic: str, payload: bytes, retained: bool) -> None:
        try:
            envelope = decode(payload)
            if envelope.kind != MessageKind.SAMPLE:
                raise DecodeError(f"unexpected kind {envelope.kind!r} on a data topic", field="kind")
            sample = Sample.from_body(envelope.body)
        except DecodeError:
            self.decode_errors += 1
            return
        self.handle_sample(sample)

    def handle_sample(self, sample: Sample) -> Optional[DriftDecision]:
        if self.core.binding_for(sample.stream_id) is None:
            try:
                self._register_default(sample)
            except (ConfigError, InputError):
                self.decode_errors += 1
                return None
        try:
            decision = self.core.ingest_sample(sample)
        except (InputError, RoutingError):
            return None
        self.relay.offer(sample)
        if decision is not None:
            self.publish_decision(decision)
        return decision

    def _register_default(self, sample: Sample) -> None:
        specs = self.estimators_by_type.get(sample.metadata.sensor_type)
        estimators = _estimators_from_config(specs) if specs is not None else None
        binding = StreamBinding(
            sample.stream_id,
            estimators=estimators,
            vote_window=self.vote_window,
            quorum_fraction=self.quorum_fraction,
            baseline_capacity=self.baseline_capacity,
            metadata=sample.metadata,
        )
        try:
            self.core.register_stream(binding)
        except ConflictError:
            # raced with another registration for the same stream
            pass

    def publish_decision(self, decision: DriftDecision) -> None:
        topic = topic_for(Channel.DECISION, decision.site, [decision.detector_id, decision.stream_id])
        envelope = make_envelope(MessageKind.DECISION, decision.as_dict())
        self.bus.publish(topic, envelope.encode(), retained=True)
        self.decisions_published += 1

    def _send_relay(self, sample: Sample) -> None:
        topic = topic_for(Channel.RELAY, sample.site, [sample.stream_id])
        envelope = make_envelope(MessageKind.SAMPLE, sample.as_dict())
        self.bus.publish(topic, envelope.encode(), retained=False)

    def stats(self) -> dict:
        merged = self.core.stats()
        merged.update(
            {
                "decode_errors": self.decode_errors,
                "decisions_published": self.decisions_published,
                "relay_sent": self.relay.sent,
                "relay_dropped": self.relay.dropped,
                "relay_buffered": self.relay.buffered,
            }
        )
        return merged
