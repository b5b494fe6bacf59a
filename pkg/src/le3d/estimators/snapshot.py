"""Opaque estimator state snapshots for diagnostics."""

from __future__ import annotations

from typing import NamedTuple

__all__ = ["StateSnapshot"]


class StateSnapshot(NamedTuple):
    """Versioned opaque dump of an estimator's internal state."""

    version: int
    payload: bytes
