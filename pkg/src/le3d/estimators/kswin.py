"""Kolmogorov-Smirnov windowing drift estimator.

Keeps a bounded FIFO of recent samples. Once the window is full, every new
sample triggers a two-sample K-S test of the newest ``stat_size`` values
against ``stat_size`` values sampled uniformly without replacement from the
older remainder of the window. Low p-value means the recent slice no longer
looks like the past, which flags drift and resets the window to the recent
slice so detection can re-arm quickly.
"""

from __future__ import annotations

import math
import random
import struct
from collections import deque
from typing import Optional

from ..errors import ConfigError, InputError
from .ks import KsResult, ks_two_sample
from .snapshot import StateSnapshot

__all__ = ["Kswin"]

DEFAULT_SEED = 1


class Kswin:
    """KSWIN with a seeded reference sampler for reproducible runs."""

    kind = "kswin"

    def __init__(
        self,
        window_size: int = 100,
        stat_size: int = 30,
        alpha: float = 0.005,
        seed: int = DEFAULT_SEED,
    ):
        window_size = int(window_size)
        stat_size = int(stat_size)
        alpha = float(alpha)
        if window_size < 1:
            raise ConfigError("kswin window_size must be >= 1")
        if not (0 < stat_size < window_size):
            raise ConfigError(
                f"kswin stat_size must be in (0, window_size), got {stat_size}"
            )
        if stat_size > window_size - stat_size:
            raise ConfigError(
                "kswin stat_size exceeds the older remainder it is sampled from"
            )
        if not (0.0 < alpha < 1.0):
            raise ConfigError(f"kswin alpha must be in (0,1), got {alpha}")
        self.window_size = window_size
        self.stat_size = stat_size
        self.alpha = alpha
        self.seed = int(seed)
        self._rng = random.Random(self.seed)
        self._window: deque[float] = deque(maxlen=window_size)
        self._tests_performed = 0
        # Diagnostics from the most recent update, None when no test ran.
        self.last_test: Optional[KsResult] = None
        self.last_test_slices: Optional[tuple[tuple[float, ...], tuple[float, ...]]] = None

    @property
    def window(self) -> tuple[float, ...]:
        return tuple(self._window)

    @property
    def tests_performed(self) -> int:
        return self._tests_performed

    def update(self, value: float) -> bool:
        v = float(value)
        if not math.isfinite(v):
            raise InputError(f"sample value must be finite, got {value!r}")
        self.last_test = None
        self.last_test_slices = None
        self._window.append(v)
        if len(self._window) < self.window_size:
            return False
        values = list(self._window)
        recent = values[-self.stat_size :]
        older = values[: self.window_size - self.stat_size]
        reference = self._rng.sample(older, self.stat_size)
        result = ks_two_sample(reference, recent)
        self._tests_performed += 1
        self.last_test = result
        self.last_test_slices = (tuple(reference), tuple(recent))
        if result.p_value <= self.alpha:
            self._window.clear()
            self._window.extend(recent)
            return True
        return False

    def snapshot(self) -> StateSnapshot:
        header = struct.pack(
            "<QQdQQ",
            self.window_size,
            self.stat_size,
            self.alpha,
            self.seed & 0xFFFFFFFFFFFFFFFF,
            len(self._window),
        )
        body = struct.pack(f"<{len(self._window)}d", *self._window)
        return StateSnapshot(version=1, payload=header + body)
