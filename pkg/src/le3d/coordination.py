"""Cloud-tier coordination: registry, stream matching, and state storage.

Endpoints, emulators, streamers, detectors, and aggregators announce
themselves here; the service then matches each stream to a detector and
keeps the latest decisions and classifications for the operator console.

Everything lives in memory behind one lock, so mutations are linearized
and the core guarantees hold against that order:

- entity ids are server-assigned and unique across kinds,
- assignments form a function stream_id -> detector (a stream is never
  assigned twice; re-asking returns the existing record),
- a fresh assignment always lands on a least-loaded live detector at the
  stream's site, ties broken by lexicographically smallest entity id.

Liveness is heartbeat-based. An entity whose last heartbeat is older than
the liveness window is still listed (marked stale by callers that care)
but is excluded as an assignment target. Existing assignments are never
rebalanced.

The storage side is deliberately small: per stream and kind, the latest
payload plus a bounded history ring. A persistent backend could replace
it without changing the call surface.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Tuple

from .aggregator import DriftClass
from .detector import DriftDecision
from .errors import ConfigError, ConflictError, InputError, NotFoundError

HISTORY_CAP = 1000

STATE_KINDS = ("decision", "classification")


def _now_ms() -> int:
    return int(time.time() * 1000)


class EntityKind(str, Enum):
    ENDPOINT = "endpoint"
    EMULATOR = "emulator"
    STREAMER = "streamer"
    DETECTOR = "detector"
    AGGREGATOR = "aggregator"


# Kinds that feed samples and therefore can anchor an assignment.
SOURCE_KINDS = frozenset({EntityKind.ENDPOINT, EntityKind.EMULATOR, EntityKind.STREAMER})


@dataclass(frozen=True)
class Entity:
    entity_id: str
    kind: EntityKind
    site: str
    sensor_type: str
    announced_at: int
    heartbeat_at: int

    def as_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "kind": self.kind.value,
            "site": self.site,
            "sensor_type": self.sensor_type,
            "announced_at": self.announced_at,
            "heartbeat_at": self.heartbeat_at,
        }


@dataclass(frozen=True)
class Assignment:
    source_entity_id: str
    detector_entity_id: str
    stream_id: str
    created_at: int

    def as_dict(self) -> dict:
        return {
            "source_entity_id": self.source_entity_id,
            "detector_entity_id": self.detector_entity_id,
            "stream_id": self.stream_id,
            "created_at": self.created_at,
        }


def _parse_kind(kind) -> EntityKind:
    try:
        return EntityKind(kind)
    except ValueError:
        raise InputError("unknown entity kind: {!r}".format(kind)) from None


def _check_state_kind(kind) -> str:
    if kind not in STATE_KINDS:
        raise InputError(
            "unknown state kind: {!r}; expected one of {}".format(kind, ", ".join(STATE_KINDS))
        )
    return kind


class CoordinationCore:
    """Linearized in-memory registry, matcher, and state store."""

    def __init__(self, liveness_window_ms: int = 60000, clock: Optional[Callable[[], int]] = None):
        if not isinstance(liveness_window_ms, int) or liveness_window_ms < 1:
            raise ConfigError("liveness_window_ms must be a positive integer")
        self.liveness_window_ms = liveness_window_ms
        self._clock = clock or _now_ms
        self._lock = threading.Lock()
        self._entities: Dict[str, Entity] = {}
        self._assignments: Dict[str, Assignment] = {}
        self._history: Dict[Tuple[str, str], Deque[dict]] = {}
        self._next_id = itertools.count(1)

    def now(self) -> int:
        return self._clock()

    # ------------------------------------------------------------ registry

    def register(self, kind, site, sensor_type: str = "", now: Optional[int] = None) -> Entity:
        parsed = _parse_kind(kind)
        if not isinstance(site, str) or not site:
            raise InputError("site must be a non-empty string")
        if sensor_type is None:
            sensor_type = ""
        if not isinstance(sensor_type, str):
            raise InputError("sensor_type must be a string")
        with self._lock:
            at = self._clock() if now is None else int(now)
            entity = Entity(
                entity_id="e-{:06d}".format(next(self._next_id)),
                kind=parsed,
                site=site,
                sensor_type=sensor_type,
                announced_at=at,
                heartbeat_at=at,
            )
            self._entities[entity.entity_id] = entity
            return entity

    def heartbeat(self, entity_id: str, now: Optional[int] = None) -> Entity:
        with self._lock:
            entity = self._entities.get(entity_id)
            if entity is None:
                raise NotFoundError("unknown entity: {}".format(entity_id))
            at = self._clock() if now is None else int(now)
            # heartbeat_at may never fall behind announced_at
            updated = replace(entity, heartbeat_at=max(at, entity.announced_at))
            self._entities[entity_id] = updated
            return updated

    def entity(self, entity_id: str) -> Entity:
        with self._lock:
            entity = self._entities.get(entity_id)
        if entity is None:
            raise NotFoundError("unknown entity: {}".format(entity_id))
        return entity

    def is_live(self, entity: Entity, now: Optional[int] = None) -> bool:
        at = self._clock() if now is None else int(now)
        return entity.heartbeat_at >= at - self.liveness_window_ms

    def list_entities(self, site: Optional[str] = None, kind=None) -> List[Entity]:
        wanted = _parse_kind(kind) if kind is not None else None
        with self._lock:
            rows = [
                entity
                for entity in self._entities.values()
                if (site is None or entity.site == site)
                and (wanted is None or entity.kind is wanted)
            ]
        rows.sort(key=lambda entity: (entity.announced_at, entity.entity_id))
        return rows

    # ------------------------------------------------------------ matching

    def assign(self, source_entity_id, stream_id, now: Optional[int] = None) -> Assignment:
        if not isinstance(source_entity_id, str) or not source_entity_id:
            raise InputError("source_entity_id must be a non-empty string")
        if not isinstance(stream_id, str) or not stream_id:
            raise InputError("stream_id must be a non-empty string")
        with self._lock:
            source = self._entities.get(source_entity_id)
            if source is None:
                raise NotFoundError("unknown source entity: {}".format(source_entity_id))
            if source.kind not in SOURCE_KINDS:
                raise InputError(
                    "entity {} has kind {}; only endpoint, emulator, and streamer "
                    "entities feed streams".format(source_entity_id, source.kind.value)
                )
            existing = self._assignments.get(stream_id)
            if existing is not None:
                return existing
            at = self._clock() if now is None else int(now)
            horizon = at - self.liveness_window_ms
            candidates = [
                entity
                for entity in self._entities.values()
                if entity.kind is EntityKind.DETECTOR
                and entity.site == source.site
                and entity.heartbeat_at >= horizon
            ]
            if not candidates:
                raise ConflictError("no detector available at site {}".format(source.site))
            loads = {entity.entity_id: 0 for entity in candidates}
            for assignment in self._assignments.values():
                if assignment.detector_entity_id in loads:
                    loads[assignment.detector_entity_id] += 1
            chosen = min(candidates, key=lambda entity: (loads[entity.entity_id], entity.entity_id))
            assignment = Assignment(
                source_entity_id=source_entity_id,
                detector_entity_id=chosen.entity_id,
                stream_id=stream_id,
                created_at=at,
            )
            self._assignments[stream_id] = assignment
            return assignment

    def assignment_for_stream(self, stream_id: str) -> Optional[Assignment]:
        with self._lock:
            return self._assignments.get(stream_id)

    def list_assignments(self, site: Optional[str] = None) -> List[Assignment]:
        with self._lock:
            rows = list(self._assignments.values())
            if site is not None:
                keep = []
                for assignment in rows:
                    detector = self._entities.get(assignment.detector_entity_id)
                    if detector is not None and detector.site == site:
                        keep.append(assignment)
                rows = keep
        rows.sort(key=lambda assignment: (assignment.created_at, assignment.stream_id))
        return rows

    # ------------------------------------------------------------- storage

    def record_state(self, kind: str, payload) -> str:
        """Validate and store one decision or classification payload.

        Returns the stream id the payload belongs to. The stored object is
        the payload as given, so a later fetch returns an equal document.
        """
        _check_state_kind(kind)
        if not isinstance(payload, dict):
            raise InputError("state payload must be an object")
        if kind == "decision":
            parsed = DriftDecision.from_body(payload)
        else:
            parsed = DriftClass.from_body(payload)
        with self._lock:
            key = (kind, parsed.stream_id)
            ring = self._history.get(key)
            if ring is None:
                ring = deque(maxlen=HISTORY_CAP)
                self._history[key] = ring
            ring.append(payload)
        return parsed.stream_id

    def latest_state(self, kind: str, stream_id: str) -> Optional[dict]:
        _check_state_kind(kind)
        with self._lock:
            ring = self._history.get((kind, stream_id))
            return ring[-1] if ring else None

    def state_history(self, kind: str, stream_id: str) -> List[dict]:
        _check_state_kind(kind)
        with self._lock:
            ring = self._history.get((kind, stream_id))
            return list(ring) if ring else []

    def state_stream_ids(self, kind: str) -> List[str]:
        _check_state_kind(kind)
        with self._lock:
            return sorted(stream for k, stream in self._history if k == kind)

    # ----------------------------------------------------------------- misc

    def stats(self) -> dict:
        with self._lock:
            now = self._clock()
            horizon = now - self.liveness_window_ms
            stale = sum(1 for entity in self._entities.values() if entity.heartbeat_at < horizon)
            return {
                "entities": len(self._entities),
                "stale_entities": stale,
                "assignments": len(self._assignments),
                "decision_streams": sum(1 for kind, _ in self._history if kind == "decision"),
                "classification_streams": sum(
                    1 for kind, _ in self._history if kind == "classification"
                ),
            }
