"""Layered runtime configuration.

Resolution order: built-in defaults, then a JSON config file, then
environment variables prefixed LE3D_ (upper-snake form of the dotted key,
so `detector.vote_window` is overridden by LE3D_DETECTOR_VOTE_WINDOW).
Every known key has a default and a range check; unknown file keys are
rejected so typos cannot silently configure nothing.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional

from ..errors import ConfigError

__all__ = ["Config", "load_config", "KNOWN_KEYS", "env_name_for"]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class KeySpec:
    default: Any
    parse: Callable[[str], Any]
    check: Optional[Callable[[Any], bool]] = None
    doc: str = ""
    structured: bool = False  # file-only nested value, no env override


def _int_range(lo: Optional[int] = None, hi: Optional[int] = None):
    return lambda v: isinstance(v, int) and (lo is None or v >= lo) and (hi is None or v <= hi)


KNOWN_KEYS: dict[str, KeySpec] = {
    "detector.id": KeySpec("", str, doc="detector identity; CLI flag usually sets this"),
    "detector.site": KeySpec("local", str, doc="site segment used in topics"),
    "detector.subscribe_site": KeySpec(
        "", str, doc="site filter for sample subscription; empty = own site"
    ),
    "detector.vote_window": KeySpec(
        10, int, _int_range(lo=1), doc="per-estimator vote window V in samples"
    ),
    "detector.quorum_fraction": KeySpec(
        0.5,
        float,
        lambda v: isinstance(v, (int, float)) and 0.0 < float(v) <= 1.0,
        doc="fraction of estimators that must vote drifting",
    ),
    "detector.baseline_capacity": KeySpec(
        300, int, _int_range(lo=30), doc="rolling baseline size B for the one-sample test"
    ),
    "detector.relay_enabled": KeySpec(False, _parse_bool, doc="relay raw samples to the cloud tier"),
    "detector.relay_buffer": KeySpec(
        1000, int, _int_range(lo=1), doc="relay buffer size while transport is down"
    ),
    "detector.estimators_by_type": KeySpec(
        {},
        json.loads,
        lambda v: isinstance(v, dict),
        doc="sensor_type -> list of {kind, params} estimator configs",
        structured=True,
    ),
    "aggregator.id": KeySpec("", str, doc="aggregator identity"),
    "aggregator.site": KeySpec("local", str, doc="site segment used in topics"),
    "aggregator.natural_quorum": KeySpec(
        2, int, _int_range(lo=2), doc="concurrent drifting peers (incl. self) for Natural"
    ),
    "aggregator.concurrency_window_ms": KeySpec(
        30_000, int, _int_range(lo=1), doc="max |decided_at| gap between concurrent drifts"
    ),
    "aggregator.liveness_timeout_ms": KeySpec(
        120_000, int, _int_range(lo=1), doc="peer shares older than this are ignored"
    ),
    "aggregator.tau": KeySpec(
        0.3,
        float,
        lambda v: isinstance(v, (int, float)) and 0.0 <= float(v) <= 1.0,
        doc="K-S statistic similarity tolerance",
    ),
    "aggregator.ks_gate_enabled": KeySpec(
        False, _parse_bool, doc="require K-S similarity for a peer to count toward Natural"
    ),
    "aggregator.share_queue": KeySpec(
        100, int, _int_range(lo=1), doc="outbound share buffer while transport is down"
    ),
    "broker.host": KeySpec("127.0.0.1", str, doc="MQTT broker host"),
    "broker.port": KeySpec(1883, int, _int_range(lo=1, hi=65535), doc="MQTT broker port"),
    "broker.keepalive_s": KeySpec(60, int, _int_range(lo=0), doc="MQTT keepalive interval"),
    "broker.username": KeySpec("", str, doc="MQTT username, empty = anonymous"),
    "broker.password": KeySpec("", str, doc="MQTT password"),
    "coordination.host": KeySpec("127.0.0.1", str, doc="coordination service bind host"),
    "coordination.port": KeySpec(8080, int, _int_range(lo=1, hi=65535), doc="coordination service port"),
    "coordination.liveness_window_ms": KeySpec(
        60_000, int, _int_range(lo=1), doc="entities silent past this are stale"
    ),
    "coordination.heartbeat_interval_ms": KeySpec(
        15_000, int, _int_range(lo=1), doc="suggested heartbeat cadence for clients"
    ),
}

ENV_PREFIX = "LE3D_"


def env_name_for(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


class Config:
    """Resolved configuration; read-only view over the layered values."""

    def __init__(self, values: Mapping[str, Any]):
        self._values = dict(values)

    def get(self, key: str) -> Any:
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def __repr__(self) -> str:
        return f"Config({self._values!r})"


def _flatten_file(node: Any, prefix: str, out: dict[str, Any]) -> None:
    if prefix in KNOWN_KEYS and KNOWN_KEYS[prefix].structured:
        out[prefix] = node
        return
    if isinstance(node, dict):
        for name, child in node.items():
            _flatten_file(child, f"{prefix}.{name}" if prefix else str(name), out)
        return
    out[prefix] = node


def _checked(key: str, value: Any) -> Any:
    spec = KNOWN_KEYS[key]
    if isinstance(spec.default, bool) and isinstance(value, bool):
        pass
    elif isinstance(spec.default, int) and not isinstance(spec.default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key} expects an integer, got {value!r}")
    elif isinstance(spec.default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key} expects a number, got {value!r}")
        value = float(value)
    elif isinstance(spec.default, str) and not isinstance(value, str):
        raise ConfigError(f"config key {key} expects a string, got {value!r}")
    elif isinstance(spec.default, bool) and not isinstance(value, bool):
        raise ConfigError(f"config key {key} expects a boolean, got {value!r}")
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"config key {key} value out of range: {value!r}")
    return value


def load_config(path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None) -> Config:
    """Resolve defaults <- file <- environment into a Config."""
    values: dict[str, Any] = {key: spec.default for key, spec in KNOWN_KEYS.items()}

    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                document = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(document, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        flat: dict[str, Any] = {}
        _flatten_file(document, "", flat)
        for key, value in flat.items():
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown config key in file: {key!r}")
            values[key] = _checked(key, value)

    env = os.environ if environ is None else environ
    for key, spec in KNOWN_KEYS.items():
        if spec.structured:
            continue
        raw = env.get(env_name_for(key))
        if raw is None:
            continue
        try:
            parsed = spec.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"environment override for {key} is invalid: {exc}") from None
        values[key] = _checked(key, parsed)

    return Config(values)
