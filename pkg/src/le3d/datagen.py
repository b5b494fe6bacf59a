"""Endpoint tooling: sensor emulation and CSV replay.

The emulator synthesizes a stream around a fitted or hand-written profile
(level + seeded noise) and accepts operator drift commands over the
control topic: abrupt steps, linear ramps, stuck-at faults, and noise
scaling. The streamer replays a two-column CSV dataset at a configurable
rate. Both publish ordinary samples; downstream services cannot tell the
difference.

Clearing conventions (a later command of the same kind replaces the
earlier one): Step with magnitude 0 removes the step, Ramp with magnitude
0 removes the ramp, NoiseScale with magnitude 1 removes the scaling. A
StuckAt fault ends only via its duration_ms or a replacement StuckAt.
"""

from __future__ import annotations

import csv
import math
import random
import statistics
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence, Tuple

from .detector import Metadata, Sample, _body_int, _body_number, _body_str
from .errors import ConfigError, DecodeError, InputError
from .transport.envelope import MessageKind, decode, make_envelope
from .transport.topics import Channel, subscription_filter, topic_for
from .transport.topics import _check_segment as _check_topic_segment

__all__ = [
    "NoiseModel",
    "StreamProfile",
    "DriftKind",
    "DriftScope",
    "DriftCommand",
    "CommandAck",
    "fit_profile",
    "parse_profile_text",
    "parse_profile_file",
    "profile_to_text",
    "Emulator",
    "EmulatorService",
    "CsvStreamer",
    "BROADCAST_SITE",
]

# site segment used for commands addressed to every site at once
BROADCAST_SITE = "all"


class NoiseModel(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM_JITTER = "uniform_jitter"


@dataclass(frozen=True)
class StreamProfile:
    """Statistical shape of one emulated stream."""

    mean: float = 0.0
    stddev: float = 1.0
    sample_period_ms: int = 1000
    noise_model: NoiseModel = NoiseModel.GAUSSIAN
    seed: int = 0
    sensor_type: str = ""
    unit: str = ""

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise ConfigError("profile mean must be finite")
        if not math.isfinite(self.stddev) or self.stddev < 0:
            raise ConfigError("profile stddev must be >= 0")
        if not isinstance(self.sample_period_ms, int) or self.sample_period_ms < 1:
            raise ConfigError("profile sample_period_ms must be a positive integer")
        if not isinstance(self.noise_model, NoiseModel):
            raise ConfigError(f"unknown noise model {self.noise_model!r}")


def fit_profile(
    rows: Sequence[Tuple[float, float]],
    sensor_type: str = "",
    unit: str = "",
    seed: int = 0,
    noise_model: NoiseModel = NoiseModel.GAUSSIAN,
) -> StreamProfile:
    """Fit a profile to observed (timestamp_ms, value) rows.

    mean and stddev are the sample statistics (n-1 denominator); the
    sample period is the median inter-arrival gap, which shrugs off a
    few transmission stalls in the source data.
    """
    rows = list(rows)
    if len(rows) < 2:
        raise InputError("fit_profile needs at least 2 rows")
    values = []
    previous_ts: Optional[float] = None
    gaps = []
    for index, row in enumerate(rows):
        try:
            ts, value = row
        except (TypeError, ValueError):
            raise InputError(f"row {index} is not a (timestamp, value) pair") from None
        if not math.isfinite(value):
            raise InputError(f"row {index} has a non-finite value")
        if not math.isfinite(ts):
            raise InputError(f"row {index} has a non-finite timestamp")
        if previous_ts is not None:
            if ts < previous_ts:
                raise InputError(f"row {index} breaks timestamp order")
            gaps.append(ts - previous_ts)
        previous_ts = ts
        values.append(float(value))
    period = max(1, int(round(statistics.median(gaps))))
    return StreamProfile(
        mean=statistics.fmean(values),
        stddev=statistics.stdev(values),
        sample_period_ms=period,
        noise_model=noise_model,
        seed=seed,
        sensor_type=sensor_type,
        unit=unit,
    )


_PROFILE_PARSERS: dict[str, Callable[[str], object]] = {
    "mean": float,
    "stddev": float,
    "sample_period_ms": int,
    "noise_model": NoiseModel,
    "seed": int,
    "sensor_type": str,
    "unit": str,
}


def parse_profile_text(text: str) -> StreamProfile:
    """Parse the flat key=value profile format (comments start with #)."""
    fields: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"profile line {lineno} is not key=value: {line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        parser = _PROFILE_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown profile key {key!r} on line {lineno}")
        try:
            fields[key] = parser(raw_value)
        except ValueError:
            raise ConfigError(f"profile key {key} has invalid value {raw_value!r}") from None
    return StreamProfile(**fields)  # type: ignore[arg-type]


def parse_profile_file(path: str) -> StreamProfile:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return parse_profile_text(handle.read())
    except OSError as exc:
        raise ConfigError(f"cannot read profile file {path}: {exc}") from None


def profile_to_text(profile: StreamProfile) -> str:
    return (
        f"mean={profile.mean!r}\n"
        f"stddev={profile.stddev!r}\n"
        f"sample_period_ms={profile.sample_period_ms}\n"
        f"noise_model={profile.noise_model.value}\n"
        f"seed={profile.seed}\n"
        f"sensor_type={profile.sensor_type}\n"
        f"unit={profile.unit}\n"
    )


class DriftKind(str, Enum):
    STEP = "step"
    RAMP = "ramp"
    STUCK_AT = "stuck_at"
    NOISE_SCALE = "noise_scale"


class DriftScope(str, Enum):
    SINGLE = "single"
    ALL_OF_TYPE = "all_of_type"


@dataclass(frozen=True)
class DriftCommand:
    """Operator-injected drift. ``sensor_type`` addresses AllOfType scope."""

    target_stream_id: str
    kind: DriftKind
    magnitude: float
    duration_ms: int
    issued_at: int
    scope: DriftScope = DriftScope.SINGLE
    sensor_type: str = ""

    def as_dict(self) -> dict:
        return {
            "target_stream_id": self.target_stream_id,
            "kind": self.kind.value,
            "magnitude": self.magnitude,
            "duration_ms": self.duration_ms,
            "issued_at": self.issued_at,
            "scope": self.scope.value,
            "sensor_type": self.sensor_type,
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "DriftCommand":
        kind_raw = body.get("kind")
        try:
            kind = DriftKind(kind_raw)
        except ValueError:
            raise DecodeError(f"unknown drift kind {kind_raw!r}", field="kind") from None
        scope_raw = body.get("scope", DriftScope.SINGLE.value)
        try:
            scope = DriftScope(scope_raw)
        except ValueError:
            raise DecodeError(f"unknown drift scope {scope_raw!r}", field="scope") from None
        return cls(
            target_stream_id=_body_str(body, "target_stream_id", default=""),
            kind=kind,
            magnitude=_body_number(body, "magnitude"),
            duration_ms=_body_int(body, "duration_ms"),
            issued_at=_body_int(body, "issued_at"),
            scope=scope,
            sensor_type=_body_str(body, "sensor_type", default=""),
        )


@dataclass(frozen=True)
class CommandAck:
    """Emulator response on the control-ack topic."""

    stream_id: str
    site: str
    kind: DriftKind
    ok: bool
    acked_at: int
    reason: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "site": self.site,
            "kind": self.kind.value,
            "ok": self.ok,
            "acked_at": self.acked_at,
            "reason": self.reason,
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "CommandAck":
        ok = body.get("ok")
        if not isinstance(ok, bool):
            raise DecodeError("field ok must be a boolean", field="ok")
        kind_raw = body.get("kind")
        try:
            kind = DriftKind(kind_raw)
        except ValueError:
            raise DecodeError(f"unknown drift kind {kind_raw!r}", field="kind") from None
        reason = body.get("reason")
        if reason is not None and not isinstance(reason, str):
            raise DecodeError("field reason must be a string or null", field="reason")
        return cls(
            stream_id=_body_str(body, "stream_id"),
            site=_body_str(body, "site"),
            kind=kind,
            ok=ok,
            acked_at=_body_int(body, "acked_at"),
            reason=reason,
        )


class Emulator:
    """Deterministic sample synthesizer for one stream.

    value = mean + step/ramp offsets + noise_draw * stddev * noise_scale,
    except a StuckAt fault pins the value outright. One noise draw is
    consumed per sample regardless of active faults, so a command log
    never shifts the underlying noise sequence.
    """

    def __init__(self, stream_id: str, site: str, profile: StreamProfile):
        _check_topic_segment(stream_id, "stream_id")
        _check_topic_segment(site, "site")
        self.stream_id = stream_id
        self.site = site
        self.profile = profile
        self._rng = random.Random(profile.seed)
        self._seq = 0
        self._commands: dict[DriftKind, DriftCommand] = {}
        self.commands_applied = 0
        self.commands_rejected = 0

    # ------------------------------------------------------------ drifts

    def apply_drift(self, cmd: DriftCommand) -> Tuple[bool, Optional[str]]:
        """Apply one command; returns (ok, reason). Does not check scope."""
        reason = self._validate(cmd)
        if reason is not None:
            self.commands_rejected += 1
            return False, reason
        if self._is_clearing(cmd):
            self._commands.pop(cmd.kind, None)
        else:
            self._commands[cmd.kind] = cmd
        self.commands_applied += 1
        return True, None

    @staticmethod
    def _validate(cmd: DriftCommand) -> Optional[str]:
        if not math.isfinite(cmd.magnitude):
            return "magnitude must be finite"
        if cmd.kind is DriftKind.NOISE_SCALE and cmd.magnitude <= 0:
            return "magnitude must be > 0"
        if cmd.kind is DriftKind.RAMP and cmd.duration_ms <= 0 and cmd.magnitude != 0:
            return "ramp requires duration_ms > 0"
        if cmd.duration_ms < 0:
            return "duration_ms must be >= 0"
        return None

    @staticmethod
    def _is_clearing(cmd: DriftCommand) -> bool:
        if cmd.kind in (DriftKind.STEP, DriftKind.RAMP):
            return cmd.magnitude == 0
        if cmd.kind is DriftKind.NOISE_SCALE:
            return cmd.magnitude == 1.0
        return False

    def matches(self, cmd: DriftCommand) -> bool:
        if cmd.scope is DriftScope.SINGLE:
            return cmd.target_stream_id == self.stream_id
        return cmd.sensor_type == self.profile.sensor_type

    def _active(self, kind: DriftKind, now: int) -> Optional[DriftCommand]:
        cmd = self._commands.get(kind)
        if cmd is None or now < cmd.issued_at:
            return None
        if kind is DriftKind.RAMP:
            return cmd  # a finished ramp holds at full magnitude
        if cmd.duration_ms > 0 and now >= cmd.issued_at + cmd.duration_ms:
            return None
        return cmd

    def _offset(self, now: int) -> float:
        total = 0.0
        step = self._active(DriftKind.STEP, now)
        if step is not None:
            total += step.magnitude
        ramp = self._active(DriftKind.RAMP, now)
        if ramp is not None:
            progress = min(1.0, (now - ramp.issued_at) / ramp.duration_ms)
            total += ramp.magnitude * progress
        return total

    def _noise_scale(self, now: int) -> float:
        scale = self._active(DriftKind.NOISE_SCALE, now)
        return scale.magnitude if scale is not None else 1.0

    # ----------------------------------------------------------- samples

    def next_sample(self, now: int) -> Sample:
        if self.profile.noise_model is NoiseModel.GAUSSIAN:
            draw = self._rng.gauss(0.0, 1.0)
        else:
            draw = self._rng.uniform(-1.0, 1.0)
        stuck = self._active(DriftKind.STUCK_AT, now)
        if stuck is not None:
            value = stuck.magnitude
        else:
            value = (
                self.profile.mean
                + self._offset(now)
                + draw * self.profile.stddev * self._noise_scale(now)
            )
        sample = Sample(
            stream_id=self.stream_id,
            site=self.site,
            timestamp=now,
            value=value,
            seq=self._seq,
            metadata=Metadata(sensor_type=self.profile.sensor_type, unit=self.profile.unit),
        )
        self._seq += 1
        return sample


class EmulatorService:
    """Publishes an emulator's samples and answers its control traffic."""

    def __init__(
        self,
        bus,
        stream_id: str,
        site: str,
        profile: StreamProfile,
        clock: Optional[Callable[[], int]] = None,
    ):
        self.bus = bus
        self.emulator = Emulator(stream_id, site, profile)
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.decode_errors = 0
        self.samples_published = 0
        self._subscriptions: list = []

    def start(self) -> None:
        if self._subscriptions:
            return
        # commands may be addressed to this site or broadcast to all sites
        self._subscriptions.append(
            self.bus.subscribe(
                subscription_filter(Channel.CONTROL, site=self.emulator.site), self._on_command
            )
        )
        self._subscriptions.append(
            self.bus.subscribe(
                subscription_filter(Channel.CONTROL, site=BROADCAST_SITE), self._on_command
            )
        )

    def stop(self) -> None:
        for sub in self._subscriptions:
            sub.unsubscribe()
        self._subscriptions = []

    def _on_command(self, topic: str, payload: bytes, retained: bool) -> None:
        try:
            envelope = decode(payload)
            if envelope.kind != MessageKind.COMMAND:
                raise DecodeError(f"unexpected kind {envelope.kind!r} on a control topic", field="kind")
            cmd = DriftCommand.from_body(envelope.body)
        except DecodeError:
            self.decode_errors += 1
            return
        self.handle_command(cmd)

    def handle_command(self, cmd: DriftCommand) -> Optional[CommandAck]:
        if not self.emulator.matches(cmd):
            return None
        ok, reason = self.emulator.apply_drift(cmd)
        ack = CommandAck(
            stream_id=self.emulator.stream_id,
            site=self.emulator.site,
            kind=cmd.kind,
            ok=ok,
            acked_at=self.clock(),
            reason=reason,
        )
        topic = topic_for(Channel.CONTROLACK, self.emulator.site, [self.emulator.stream_id])
        self.bus.publish(topic, make_envelope(MessageKind.COMMAND_ACK, ack.as_dict()).encode())
        return ack

    def emit(self, now: Optional[int] = None) -> Sample:
        sample = self.emulator.next_sample(self.clock() if now is None else now)
        topic = topic_for(Channel.DATA, sample.site, [sample.stream_id])
        self.bus.publish(topic, make_envelope(MessageKind.SAMPLE, sample.as_dict()).encode())
        self.samples_published += 1
        return sample

    def run(self, sample_count: Optional[int] = None, sleep: Callable[[float], None] = time.sleep) -> None:
        """Timer loop for standalone use; emit() is the scriptable path."""
        period_s = self.emulator.profile.sample_period_ms / 1000.0
        emitted = 0
        while sample_count is None or emitted < sample_count:
            self.emit()
            emitted += 1
            sleep(period_s)


class CsvStreamer:
    """Replays a timestamp,value CSV file as a live stream."""

    def __init__(
        self,
        path: str,
        stream_id: str,
        site: str,
        rate_multiplier: float = 1.0,
        sensor_type: str = "",
        unit: str = "",
        loop: bool = False,
    ):
        _check_topic_segment(stream_id, "stream_id")
        _check_topic_segment(site, "site")
        if not (rate_multiplier > 0) or not math.isfinite(rate_multiplier):
            raise ConfigError("rate_multiplier must be > 0")
        self.stream_id = stream_id
        self.site = site
        self.rate_multiplier = rate_multiplier
        self.metadata = Metadata(sensor_type=sensor_type, unit=unit)
        self.loop = loop
        self.skipped_rows = 0
        self.rows = self._load(path)

    def _load(self, path: str) -> list[Tuple[int, float]]:
        try:
            handle = open(path, "r", encoding="utf-8", newline="")
        except OSError as exc:
            raise InputError(f"cannot read CSV file {path}: {exc}") from None
        with handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"CSV file {path} is empty") from None
            if [column.strip().lower() for column in header] != ["timestamp", "value"]:
                raise InputError(
                    f"CSV file {path} must start with a 'timestamp,value' header row"
                )
            rows: list[Tuple[int, float]] = []
            for row in reader:
                parsed = self._parse_row(row)
                if parsed is None:
                    self.skipped_rows += 1
                else:
                    rows.append(parsed)
            return rows

    @staticmethod
    def _parse_row(row: Sequence[str]) -> Optional[Tuple[int, float]]:
        if len(row) != 2:
            return None
        ts_text, value_text = row[0].strip(), row[1].strip()
        try:
            ts_float = float(ts_text)
            value = float(value_text)
        except ValueError:
            return None
        if not math.isfinite(ts_float) or not math.isfinite(value):
            return None
        if ts_float < 0 or ts_float != int(ts_float):
            return None
        return int(ts_float), value

    def samples(self, start_seq: int = 0) -> Iterable[Sample]:
        """The replayed samples, seq assigned start_seq..start_seq+n-1."""
        for offset, (ts, value) in enumerate(self.rows):
            yield Sample(
                stream_id=self.stream_id,
                site=self.site,
                timestamp=ts,
                value=value,
                seq=start_seq + offset,
                metadata=self.metadata,
            )

    def run(
        self,
        publish: Callable[[Sample], None],
        sleep: Callable[[float], None] = time.sleep,
    ) -> int:
        """Publish every row, pacing at original gaps / rate_multiplier.

        With loop=True the file replays forever; seq keeps counting up so
        consumers never mistake a new pass for stale traffic.
        """
        published = 0
        while True:
            previous_ts: Optional[int] = None
            for sample in self.samples(start_seq=published):
                if previous_ts is not None:
                    gap_ms = max(0, sample.timestamp - previous_ts)
                    sleep(gap_ms / self.rate_multiplier / 1000.0)
                publish(sample)
                published += 1
                previous_ts = sample.timestamp
            if not self.loop:
                return published

    def run_on_bus(self, bus, sleep: Callable[[float], None] = time.sleep) -> int:
        topic = topic_for(Channel.DATA, self.site, [self.stream_id])

        def publish(sample: Sample) -> None:
            bus.publish(topic, make_envelope(MessageKind.SAMPLE, sample.as_dict()).encode())

        return self.run(publish, sleep=sleep)
