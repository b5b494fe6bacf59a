"""Static range check, the cheapest member of an ensemble."""

from __future__ import annotations

import math
import struct

from ..errors import ConfigError, InputError
from .snapshot import StateSnapshot

__all__ = ["StaticThreshold"]

_PACK = struct.Struct("<dd")


class StaticThreshold:
    """Flags any sample outside the inclusive [low, high] band.

    Stateless apart from its configuration; useful for sensors with hard
    physical limits where a single excursion is already meaningful.
    """

    kind = "static_threshold"

    def __init__(self, low: float = -math.inf, high: float = math.inf):
        low = float(low)
        high = float(high)
        if math.isnan(low) or math.isnan(high):
            raise ConfigError("threshold bounds must not be NaN")
        if low > high:
            raise ConfigError(f"threshold low {low} exceeds high {high}")
        self.low = low
        self.high = high

    def update(self, value: float) -> bool:
        v = float(value)
        if not math.isfinite(v):
            raise InputError(f"sample value must be finite, got {value!r}")
        return v < self.low or v > self.high

    def snapshot(self) -> StateSnapshot:
        return StateSnapshot(version=1, payload=_PACK.pack(self.low, self.high))
