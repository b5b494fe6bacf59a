"""Online drift estimators and the K-S primitives they share.

Every estimator follows the same small contract: ``update(value) -> bool``
consumes one finite sample and reports whether drift was flagged at that
sample, ``kind`` names the algorithm, and ``snapshot()`` returns a
versioned opaque state dump for diagnostics. Instances are single-writer:
one stream feeds one estimator, sequentially.
"""

from __future__ import annotations

from enum import Enum
from typing import Mapping, Optional, Union

from ..errors import ConfigError, InputError
from .adwin import Adwin
from .ks import EcdfSummary, KsResult, RollingEcdf, ks_one_sample, ks_two_sample, kolmogorov_sf
from .kswin import Kswin
from .page_hinkley import PageHinkley
from .snapshot import StateSnapshot
from .threshold import StaticThreshold

__all__ = [
    "Adwin",
    "PageHinkley",
    "Kswin",
    "StaticThreshold",
    "EstimatorKind",
    "StateSnapshot",
    "KsResult",
    "EcdfSummary",
    "RollingEcdf",
    "ks_one_sample",
    "ks_two_sample",
    "kolmogorov_sf",
    "make_estimator",
    "DEFAULT_ENSEMBLE",
]


class EstimatorKind(str, Enum):
    ADWIN = "adwin"
    PAGE_HINKLEY = "page_hinkley"
    KSWIN = "kswin"
    STATIC_THRESHOLD = "static_threshold"

    @classmethod
    def parse(cls, name: str) -> "EstimatorKind":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            known = ", ".join(k.value for k in cls)
            raise InputError(f"unknown estimator kind {name!r} (known: {known})") from None


_CLASSES = {
    EstimatorKind.ADWIN: Adwin,
    EstimatorKind.PAGE_HINKLEY: PageHinkley,
    EstimatorKind.KSWIN: Kswin,
    EstimatorKind.STATIC_THRESHOLD: StaticThreshold,
}

_PARAM_NAMES = {
    EstimatorKind.ADWIN: frozenset({"delta", "max_buckets_per_class"}),
    EstimatorKind.PAGE_HINKLEY: frozenset({"delta", "threshold", "alpha", "min_instances"}),
    EstimatorKind.KSWIN: frozenset({"window_size", "stat_size", "alpha", "seed"}),
    EstimatorKind.STATIC_THRESHOLD: frozenset({"low", "high"}),
}

# Ensemble used when a stream's config does not name its estimators.
DEFAULT_ENSEMBLE = (EstimatorKind.ADWIN, EstimatorKind.PAGE_HINKLEY, EstimatorKind.KSWIN)

Estimator = Union[Adwin, PageHinkley, Kswin, StaticThreshold]


def make_estimator(
    kind: Union[EstimatorKind, str], params: Optional[Mapping[str, object]] = None
) -> Estimator:
    """Construct an estimator of ``kind`` from a flat parameter mapping.

    Missing parameters fall back to the estimator's defaults; unknown
    parameter names are a config error so typos never pass silently.
    """
    if not isinstance(kind, EstimatorKind):
        kind = EstimatorKind.parse(kind)
    params = dict(params or {})
    unknown = set(params) - _PARAM_NAMES[kind]
    if unknown:
        raise ConfigError(
            f"unknown {kind.value} parameter(s): {', '.join(sorted(unknown))}"
        )
    return _CLASSES[kind](**params)
