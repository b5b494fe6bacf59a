"""Kolmogorov-Smirnov primitives.

Both the two-sample test (used by the KSWIN estimator) and the one-sample
test (attached to drift decisions and exchanged between aggregators) reduce
to the maximum gap between step functions. The statistic is computed with
integer arithmetic over a common denominator so that D is the exactly
rounded float of the underlying rational value; p-values come from the
asymptotic Kolmogorov distribution with the usual small-sample correction.
"""

from __future__ import annotations

import math
from bisect import bisect_right, insort
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..errors import InputError

__all__ = [
    "KsResult",
    "EcdfSummary",
    "RollingEcdf",
    "ks_two_sample",
    "ks_one_sample",
    "kolmogorov_sf",
]


@dataclass(frozen=True)
class KsResult:
    """Summary of one K-S test run.

    ``n_reference`` is the size of the baseline/reference side and
    ``n_recent`` the size of the window under test.
    """

    statistic_d: float
    p_value: float
    n_recent: int
    n_reference: int

    def as_dict(self) -> dict:
        return {
            "statistic_d": self.statistic_d,
            "p_value": self.p_value,
            "n_recent": self.n_recent,
            "n_reference": self.n_reference,
        }

    @classmethod
    def from_dict(cls, body: dict) -> "KsResult":
        return cls(
            statistic_d=float(body["statistic_d"]),
            p_value=float(body["p_value"]),
            n_recent=int(body["n_recent"]),
            n_reference=int(body["n_reference"]),
        )


def _require_finite(values: Iterable[float], label: str) -> list[float]:
    out = []
    for v in values:
        f = float(v)
        if not math.isfinite(f):
            raise InputError(f"{label} contains non-finite value {v!r}")
        out.append(f)
    return out


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the Kolmogorov distribution.

    p = 2 * sum_{k>=1} (-1)^(k-1) * exp(-2 k^2 lam^2), truncated once a term
    drops below 1e-8 and clamped to [0, 1]. For very small lam the series
    converges too slowly to be useful and the value is 1 to double precision,
    so 1.0 is returned directly.
    """
    if lam <= 1e-3:
        return 1.0
    total = 0.0
    sign = 1.0
    coeff = -2.0 * lam * lam
    for k in range(1, 10_000):
        term = math.exp(coeff * k * k)
        if term < 1e-8:
            break
        total += sign * term
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def _ks_p_value(d: float, n_effective: float) -> float:
    sqrt_n = math.sqrt(n_effective)
    lam = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d
    return kolmogorov_sf(lam)


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> KsResult:
    """Two-sample K-S test: D = sup |ECDF_a(x) - ECDF_b(x)|.

    ``a`` is treated as the reference side, ``b`` as the recent side. The
    supremum is attained at pooled sample points, so D is found with one
    merge walk over both sorted samples; the gap is kept as an integer
    numerator over len(a)*len(b) until the final division.
    """
    if not a or not b:
        raise InputError("ks_two_sample requires at least one value per sample")
    sa = sorted(_require_finite(a, "sample a"))
    sb = sorted(_require_finite(b, "sample b"))
    na, nb = len(sa), len(sb)

    d_num = 0
    i = j = 0
    while i < na or j < nb:
        if j >= nb or (i < na and sa[i] <= sb[j]):
            v = sa[i]
        else:
            v = sb[j]
        while i < na and sa[i] <= v:
            i += 1
        while j < nb and sb[j] <= v:
            j += 1
        gap = abs(i * nb - j * na)
        if gap > d_num:
            d_num = gap

    d = d_num / (na * nb)
    n_eff = na * nb / (na + nb)
    return KsResult(
        statistic_d=d,
        p_value=1.0 if d_num == 0 else _ks_p_value(d, n_eff),
        n_recent=nb,
        n_reference=na,
    )


class EcdfSummary:
    """Frozen empirical CDF over a multiset of support values."""

    __slots__ = ("_support",)

    def __init__(self, values: Iterable[float]):
        support = sorted(_require_finite(values, "reference"))
        if not support:
            raise InputError("reference ECDF requires at least one support point")
        self._support: list[float] = support

    def __len__(self) -> int:
        return len(self._support)

    def cdf(self, x: float) -> float:
        """Fraction of support points <= x (right-continuous step function)."""
        return bisect_right(self._support, x) / len(self._support)

    @property
    def support(self) -> tuple[float, ...]:
        return tuple(self._support)


def ks_one_sample(window: Sequence[float], reference: EcdfSummary) -> KsResult:
    """One-sample K-S test of ``window`` against a reference ECDF.

    D = max_i max(|i/n - F(x_(i))|, |(i-1)/n - F(x_(i))|) over the sorted
    window values x_(1..n); the p-value uses n = len(window).
    """
    if not window:
        raise InputError("ks_one_sample requires a nonempty window")
    if len(reference) < 1:
        raise InputError("ks_one_sample requires a nonempty reference")
    xs = sorted(_require_finite(window, "window"))
    n = len(xs)
    d = 0.0
    for i, x in enumerate(xs, start=1):
        f = reference.cdf(x)
        gap = max(abs(i / n - f), abs((i - 1) / n - f))
        if gap > d:
            d = gap
    return KsResult(
        statistic_d=d,
        p_value=1.0 if d == 0.0 else _ks_p_value(d, float(n)),
        n_recent=n,
        n_reference=len(reference),
    )


class RollingEcdf:
    """Bounded FIFO of the most recent values, freezable to an EcdfSummary.

    Used as a stream's rolling baseline: holds the last ``capacity`` values
    observed while the stream was considered healthy. A sorted shadow list
    is kept alongside the FIFO so freezing is cheap.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InputError("baseline capacity must be >= 1")
        self._capacity = capacity
        self._fifo: deque[float] = deque()
        self._sorted: list[float] = []

    def __len__(self) -> int:
        return len(self._fifo)

    @property
    def capacity(self) -> int:
        return self._capacity

    def push(self, value: float) -> None:
        v = float(value)
        if not math.isfinite(v):
            raise InputError(f"baseline value must be finite, got {value!r}")
        if len(self._fifo) == self._capacity:
            oldest = self._fifo.popleft()
            idx = bisect_right(self._sorted, oldest) - 1
            del self._sorted[idx]
        self._fifo.append(v)
        insort(self._sorted, v)

    def freeze(self) -> EcdfSummary:
        if not self._fifo:
            raise InputError("cannot freeze an empty baseline")
        summary = EcdfSummary.__new__(EcdfSummary)
        summary._support = list(self._sorted)
        return summary
