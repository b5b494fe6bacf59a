"""Adaptive windowing drift estimator.

Maintains a variable-length window over the most recent samples, compressed
into exponential-histogram buckets: capacity class c holds buckets of
exactly 2^c samples, at most ``max_buckets_per_class`` per class, oldest
buckets first. When two window halves disagree in mean beyond a
Hoeffding-style bound the older half is dropped and drift is flagged.

The cut test only examines splits at bucket boundaries, which is what makes
the estimator logarithmic in memory and per-sample cost. Splits are scanned
from the newest boundary toward the oldest; the first (newest) crossing
wins, the prefix before it is dropped, and the shrunken window is rescanned
until no crossing remains.
"""

from __future__ import annotations

import math
import struct
from typing import Iterator

from ..errors import ConfigError, InputError
from .snapshot import StateSnapshot

__all__ = ["Adwin"]

_HEADER = struct.Struct("<ddQdQ")
_BUCKET = struct.Struct("<ddQ")


class Adwin:
    """ADWIN with exponential-histogram compression.

    Flags when some prefix/suffix split (W0, W1) of the window satisfies
    |mean(W0) - mean(W1)| >= eps_cut, with

        eps_cut = sqrt( ln(4 * total_count / delta) / (2 * m) ),
        1/m = 1/|W0| + 1/|W1|.

    On a flag the window keeps only the samples after the cut.
    """

    kind = "adwin"

    def __init__(self, delta: float = 0.002, max_buckets_per_class: int = 5):
        delta = float(delta)
        if not (0.0 < delta < 1.0):
            raise ConfigError(f"adwin delta must be in (0,1), got {delta}")
        if int(max_buckets_per_class) < 1:
            raise ConfigError("adwin max_buckets_per_class must be >= 1")
        self.delta = delta
        self.max_buckets_per_class = int(max_buckets_per_class)
        # Parallel lists, oldest bucket first. Counts are powers of two.
        self._sums: list[float] = []
        self._vars: list[float] = []
        self._counts: list[int] = []
        # _per_class[c] = how many buckets currently hold 2^c samples.
        self._per_class: list[int] = []
        self._total_count = 0
        self._total_sum = 0.0
        # Conservative bounds on bucket means; may only be too wide, never
        # too narrow, so they are safe for the cheap no-cut precheck.
        self._mean_lo = math.inf
        self._mean_hi = -math.inf

    @property
    def total_count(self) -> int:
        """Number of samples in the current window."""
        return self._total_count

    @property
    def mean(self) -> float:
        return self._total_sum / self._total_count if self._total_count else 0.0

    @property
    def bucket_count(self) -> int:
        return len(self._sums)

    def buckets(self) -> Iterator[tuple[float, float, int]]:
        """Yield (sum, variance aux, count) per bucket, oldest first."""
        return zip(self._sums, self._vars, self._counts)

    def update(self, value: float) -> bool:
        v = float(value)
        if not math.isfinite(v):
            raise InputError(f"sample value must be finite, got {value!r}")
        self._sums.append(v)
        self._vars.append(0.0)
        self._counts.append(1)
        if not self._per_class:
            self._per_class.append(0)
        self._per_class[0] += 1
        self._total_count += 1
        self._total_sum += v
        if v < self._mean_lo:
            self._mean_lo = v
        if v > self._mean_hi:
            self._mean_hi = v
        self._compress()
        return self._detect_and_cut()

    def _compress(self) -> None:
        # Only the class that just gained a bucket can overflow, so merges
        # cascade upward from class 0 and stop at the first settled level.
        # Merging the two oldest buckets of an overflowing class preserves
        # the oldest-first ordering: the merged bucket becomes the newest
        # member of the next class, which ends exactly where this class
        # begins.
        per_class = self._per_class
        level = 0
        while level < len(per_class) and per_class[level] > self.max_buckets_per_class:
            start = sum(per_class[c] for c in range(level + 1, len(per_class)))
            s1, s2 = self._sums[start], self._sums[start + 1]
            v1, v2 = self._vars[start], self._vars[start + 1]
            n1, n2 = self._counts[start], self._counts[start + 1]
            mean_gap = s1 / n1 - s2 / n2
            merged_var = v1 + v2 + (n1 * n2 / (n1 + n2)) * mean_gap * mean_gap
            self._sums[start : start + 2] = [s1 + s2]
            self._vars[start : start + 2] = [merged_var]
            self._counts[start : start + 2] = [n1 + n2]
            per_class[level] -= 2
            if level + 1 == len(per_class):
                per_class.append(0)
            per_class[level + 1] += 1
            level += 1

    def _detect_and_cut(self) -> bool:
        flagged = False
        while self._total_count >= 2 and len(self._sums) >= 2:
            n = self._total_count
            log_term = math.log(4.0 * n / self.delta)
            # No split can cross if even the most favorable one (balanced
            # halves, means at the tracked extremes) stays under the bound.
            if self._mean_hi - self._mean_lo < math.sqrt(2.0 * log_term / n):
                break
            cut_at = self._scan_for_cut(log_term)
            if cut_at < 0:
                break
            flagged = True
            self._drop_prefix(cut_at)
        return flagged

    def _scan_for_cut(self, log_term: float) -> int:
        """Return the newest bucket boundary whose split crosses, or -1."""
        sums = self._sums
        counts = self._counts
        total_sum = self._total_sum
        total_count = self._total_count
        suffix_sum = 0.0
        suffix_count = 0
        for i in range(len(sums) - 1, 0, -1):
            suffix_sum += sums[i]
            suffix_count += counts[i]
            prefix_count = total_count - suffix_count
            prefix_sum = total_sum - suffix_sum
            m = 1.0 / (1.0 / prefix_count + 1.0 / suffix_count)
            eps_cut = math.sqrt(log_term / (2.0 * m))
            if abs(prefix_sum / prefix_count - suffix_sum / suffix_count) >= eps_cut:
                return i
        return -1

    def _drop_prefix(self, cut_at: int) -> None:
        for c in self._counts[:cut_at]:
            self._total_count -= c
            self._per_class[c.bit_length() - 1] -= 1
        for s in self._sums[:cut_at]:
            self._total_sum -= s
        del self._sums[:cut_at]
        del self._vars[:cut_at]
        del self._counts[:cut_at]
        while self._per_class and self._per_class[-1] == 0:
            self._per_class.pop()
        # Tracked mean bounds may reference dropped buckets; retighten.
        self._mean_lo = math.inf
        self._mean_hi = -math.inf
        for s, c in zip(self._sums, self._counts):
            m = s / c
            if m < self._mean_lo:
                self._mean_lo = m
            if m > self._mean_hi:
                self._mean_hi = m

    def snapshot(self) -> StateSnapshot:
        parts = [
            _HEADER.pack(
                self.delta,
                self._total_sum,
                self._total_count,
                float(self.max_buckets_per_class),
                len(self._sums),
            )
        ]
        for s, v, c in self.buckets():
            parts.append(_BUCKET.pack(s, v, c))
        return StateSnapshot(version=1, payload=b"".join(parts))
