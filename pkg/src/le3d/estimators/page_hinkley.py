"""Page-Hinkley drift estimator.

Accumulates deviations of each sample from the running mean into a single
cumulative statistic m_t with exponential forgetting, and flags when m_t
departs from its own running extremum by more than a threshold. Constant
space regardless of how many samples have been seen.
"""

from __future__ import annotations

import math
import struct

from ..errors import ConfigError, InputError
from .snapshot import StateSnapshot

__all__ = ["PageHinkley"]

_PACK = struct.Struct("<Qdddd")


class PageHinkley:
    """Two-sided Page-Hinkley test.

    Per sample, with samples_seen already incremented:

        running_mean += (value - running_mean) / samples_seen
        m_t = alpha * m_t + (value - running_mean - delta)

    Upward drift flags when m_t - min(m_t history) > threshold, downward
    drift when max(m_t history) - m_t > threshold; both only after
    ``min_instances`` samples. A flag resets the state to empty.
    """

    kind = "page_hinkley"

    def __init__(
        self,
        delta: float = 0.005,
        threshold: float = 50.0,
        alpha: float = 0.9999,
        min_instances: int = 30,
    ):
        delta = float(delta)
        threshold = float(threshold)
        alpha = float(alpha)
        if not (delta >= 0.0 and math.isfinite(delta)):
            raise ConfigError(f"page_hinkley delta must be >= 0, got {delta}")
        if not (threshold > 0.0 and math.isfinite(threshold)):
            raise ConfigError(f"page_hinkley threshold must be > 0, got {threshold}")
        if not (0.0 < alpha <= 1.0):
            raise ConfigError(f"page_hinkley alpha must be in (0,1], got {alpha}")
        if int(min_instances) < 1:
            raise ConfigError("page_hinkley min_instances must be >= 1")
        self.delta = delta
        self.threshold = threshold
        self.alpha = alpha
        self.min_instances = int(min_instances)
        self._reset()

    def _reset(self) -> None:
        self._samples_seen = 0
        self._running_mean = 0.0
        self._cumulative = 0.0
        self._running_min = math.inf
        self._running_max = -math.inf

    @property
    def samples_seen(self) -> int:
        return self._samples_seen

    @property
    def cumulative(self) -> float:
        return self._cumulative

    def update(self, value: float) -> bool:
        v = float(value)
        if not math.isfinite(v):
            raise InputError(f"sample value must be finite, got {value!r}")
        self._samples_seen += 1
        self._running_mean += (v - self._running_mean) / self._samples_seen
        self._cumulative = self.alpha * self._cumulative + (
            v - self._running_mean - self.delta
        )
        if self._cumulative < self._running_min:
            self._running_min = self._cumulative
        if self._cumulative > self._running_max:
            self._running_max = self._cumulative
        flagged = self._samples_seen >= self.min_instances and (
            self._cumulative - self._running_min > self.threshold
            or self._running_max - self._cumulative > self.threshold
        )
        if flagged:
            self._reset()
        return flagged

    def snapshot(self) -> StateSnapshot:
        payload = _PACK.pack(
            self._samples_seen,
            self._running_mean,
            self._cumulative,
            self._running_min,
            self._running_max,
        )
        return StateSnapshot(version=1, payload=payload)
