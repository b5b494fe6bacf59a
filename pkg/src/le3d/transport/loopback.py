"""In-process publish/subscribe bus with retained-message semantics.

Behaviorally a stand-in for a broker connection: wildcard filters, retained
messages replayed to late subscribers, per-topic publish ordering. Used by
the deterministic multi-service tests and the single-process demo scenario.

Delivery model: publishes enqueue onto a single dispatch queue; whichever
thread finds the queue idle drains it. Callbacks therefore run strictly in
publish order, one at a time, and a callback may itself publish without
recursing (its messages are appended to the queue and delivered after the
current one completes).
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Callable, Optional

from .topics import topic_matches

__all__ = ["LoopbackBus", "Subscription"]

Callback = Callable[[str, bytes, bool], None]


class Subscription:
    def __init__(self, bus: "LoopbackBus", topic_filter: str, callback: Callback):
        self.topic_filter = topic_filter
        self.callback = callback
        self._bus = bus
        self.active = True

    def unsubscribe(self) -> None:
        self._bus._drop(self)


class LoopbackBus:
    """Deterministic in-process bus. Safe for use from multiple threads."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._subs: list[Subscription] = []
        self._retained: dict[str, bytes] = {}
        self._queue: deque[tuple[str, bytes, bool, Optional[Subscription]]] = deque()
        self._draining = False
        self.published_count = 0

    def publish(self, topic: str, payload: bytes, retained: bool = False) -> None:
        if not isinstance(payload, (bytes, bytearray)):
            raise TypeError("payload must be bytes")
        payload = bytes(payload)
        with self._lock:
            self.published_count += 1
            if retained:
                if payload:
                    self._retained[topic] = payload
                else:
                    # empty retained payload clears the slot, broker-style
                    self._retained.pop(topic, None)
            self._queue.append((topic, payload, retained, None))
        self._drain()

    def subscribe(self, topic_filter: str, callback: Callback) -> Subscription:
        sub = Subscription(self, topic_filter, callback)
        with self._lock:
            self._subs.append(sub)
            # late joiner: replay the latest retained message per match
            for topic in sorted(self._retained):
                if topic_matches(topic_filter, topic):
                    self._queue.append((topic, self._retained[topic], True, sub))
        self._drain()
        return sub

    def retained_topics(self) -> dict[str, bytes]:
        with self._lock:
            return dict(self._retained)

    def _drop(self, sub: Subscription) -> None:
        with self._lock:
            sub.active = False
            if sub in self._subs:
                self._subs.remove(sub)

    def _drain(self) -> None:
        while True:
            with self._lock:
                if self._draining or not self._queue:
                    return
                self._draining = True
            try:
                while True:
                    with self._lock:
                        if not self._queue:
                            break
                        topic, payload, retained, only = self._queue.popleft()
                        if only is not None:
                            targets = [only] if only.active else []
                        else:
                            targets = [
                                s for s in self._subs if topic_matches(s.topic_filter, topic)
                            ]
                    for sub in targets:
                        sub.callback(topic, payload, retained)
            finally:
                with self._lock:
                    self._draining = False
            # re-check: a publish that raced with the flag reset must not
            # strand its message until the next unrelated publish
