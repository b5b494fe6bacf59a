"""Independent reference implementations used to pin expected outputs.

These deliberately trade efficiency for obviousness: the adaptive-window
oracle stores every retained sample and tests every split, the K-S oracles
evaluate both ECDFs at every candidate point in exact rational arithmetic,
and the Page-Hinkley oracle replays the recurrence while keeping the whole
statistic history around.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np


class AdwinOracle:
    """Uncompressed adaptive window: full sample storage, all n-1 splits.

    Uses the same cut rule as the production estimator (cut at the newest
    crossing split, drop the prefix, rescan until stable) but without any
    bucket compression, so every split index is admissible.
    """

    def __init__(self, delta: float = 0.002):
        self.delta = delta
        self.window: list[float] = []

    @property
    def total_count(self) -> int:
        return len(self.window)

    @property
    def mean(self) -> float:
        return sum(self.window) / len(self.window) if self.window else 0.0

    def update(self, value: float) -> bool:
        self.window.append(float(value))
        flagged = False
        while True:
            n = len(self.window)
            if n < 2:
                break
            w = np.asarray(self.window)
            prefix = np.cumsum(w)
            c0 = np.arange(1, n)
            c1 = n - c0
            mean0 = prefix[:-1] / c0
            mean1 = (prefix[-1] - prefix[:-1]) / c1
            log_term = math.log(4.0 * n / self.delta)
            eps_cut = np.sqrt(log_term * 0.5 * (1.0 / c0 + 1.0 / c1))
            crossing = np.nonzero(np.abs(mean0 - mean1) >= eps_cut)[0]
            if crossing.size == 0:
                break
            self.window = self.window[int(crossing.max()) + 1 :]
            flagged = True
        return flagged


class PageHinkleyOracle:
    """Recurrence replay that keeps the full statistic history per epoch."""

    def __init__(
        self,
        delta: float = 0.005,
        threshold: float = 50.0,
        alpha: float = 0.9999,
        min_instances: int = 30,
    ):
        self.delta = delta
        self.threshold = threshold
        self.alpha = alpha
        self.min_instances = min_instances
        self._values: list[float] = []
        self._stats: list[float] = []

    def update(self, value: float) -> bool:
        self._values.append(float(value))
        seen = len(self._values)
        running_mean = sum(self._values) / seen
        previous = self._stats[-1] if self._stats else 0.0
        m_t = self.alpha * previous + (value - running_mean - self.delta)
        self._stats.append(m_t)
        if seen < self.min_instances:
            return False
        if m_t - min(self._stats) > self.threshold or max(self._stats) - m_t > self.threshold:
            self._values.clear()
            self._stats.clear()
            return True
        return False


def ks_two_sample_exact(a: Sequence[float], b: Sequence[float]) -> Fraction:
    """Exact two-sample D: both ECDFs evaluated at every pooled point."""
    na, nb = len(a), len(b)
    best = Fraction(0)
    for x in sorted(set(a) | set(b)):
        fa = Fraction(sum(1 for v in a if v <= x), na)
        fb = Fraction(sum(1 for v in b if v <= x), nb)
        gap = abs(fa - fb)
        if gap > best:
            best = gap
    return best


def ks_one_sample_exact(window: Sequence[float], support: Sequence[float]) -> Fraction:
    """Exact one-sample D swept over every candidate point.

    Matches the order-statistic definition: the window ECDF is compared
    both at and just below each point (its left limit), while the
    reference CDF is always evaluated at the point itself.
    """
    n, m = len(window), len(support)
    best = Fraction(0)
    for x in sorted(set(window) | set(support)):
        fr = Fraction(sum(1 for v in support if v <= x), m)
        fw_at = Fraction(sum(1 for v in window if v <= x), n)
        fw_below = Fraction(sum(1 for v in window if v < x), n)
        gap = max(abs(fw_at - fr), abs(fw_below - fr))
        if gap > best:
            best = gap
    return best


TRACE_NOISE = 0.15


def drift_trace(seed: int) -> tuple[list[float], int | None]:
    """Seeded trace with at most one abrupt mean shift.

    Returns (values, change_index) where change_index is the 0-based index
    of the first post-shift sample, or None for a stationary trace. Noise
    is kept well inside the adaptive-window cut bound's operating scale
    (the Hoeffding-style bound is calibrated for roughly unit-range data)
    and change points sit on generous power-of-two alignments so windowing
    granularity cannot blur the shift location.
    """
    rng = np.random.default_rng(seed)
    if seed % 5 == 4:
        length = int(rng.integers(1000, 3001))
        return rng.normal(0.0, TRACE_NOISE, size=length).tolist(), None
    change = int(rng.choice([512, 1024, 1536]))
    tail = int(rng.integers(200, 801))
    shift = float(rng.uniform(0.4, 1.0)) * (1 if seed % 2 == 0 else -1)
    values = rng.normal(0.0, TRACE_NOISE, size=change + tail)
    values[change:] += shift
    return values.tolist(), change
