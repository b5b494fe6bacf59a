"""Message envelopes: versioned JSON payloads with retained-flag rules.

The envelope layer is deliberately type-agnostic: `body` is a plain JSON
object and the typed domain messages (samples, decisions, shares, ...)
parse themselves out of it. Decisions, aggregate shares, and drift classes
ride as retained messages; samples, relays, and control traffic do not.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

from ..errors import DecodeError, InputError

__all__ = ["Envelope", "SCHEMA_VERSION", "MessageKind", "RETAINED_KINDS", "make_envelope", "decode"]

SCHEMA_VERSION = 1


class MessageKind:
    SAMPLE = "sample"
    DECISION = "decision"
    AGGREGATE = "aggregate"
    CLASS = "class"
    COMMAND = "command"
    COMMAND_ACK = "commandack"

    ALL = frozenset({SAMPLE, DECISION, AGGREGATE, CLASS, COMMAND, COMMAND_ACK})


# Drift state must survive for late joiners; everything else is transient.
RETAINED_KINDS = frozenset({MessageKind.DECISION, MessageKind.AGGREGATE, MessageKind.CLASS})


@dataclass(frozen=True)
class Envelope:
    kind: str
    body: Mapping
    retained: bool
    schema_version: int = SCHEMA_VERSION

    def encode(self) -> bytes:
        if self.kind not in MessageKind.ALL:
            raise InputError(f"unknown message kind {self.kind!r}")
        if self.retained != (self.kind in RETAINED_KINDS):
            raise InputError(
                f"kind {self.kind!r} must have retained={self.kind in RETAINED_KINDS}"
            )
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "kind": self.kind,
                "retained": self.retained,
                "body": dict(self.body),
            },
            separators=(",", ":"),
            sort_keys=True,
        ).encode("utf-8")


def make_envelope(kind: str, body: Mapping) -> Envelope:
    """Build an envelope with the retained flag the kind mandates."""
    if kind not in MessageKind.ALL:
        raise InputError(f"unknown message kind {kind!r}")
    return Envelope(kind=kind, body=body, retained=kind in RETAINED_KINDS)


def decode(raw: bytes) -> Envelope:
    """Parse envelope bytes; unknown extra fields are ignored.

    Raises DecodeError naming the first offending field for malformed or
    incomplete payloads.
    """
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"payload is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise DecodeError("payload is not a JSON object")
    for name in ("schema_version", "kind", "retained", "body"):
        if name not in obj:
            raise DecodeError(f"missing required field {name}", field=name)
    version = obj["schema_version"]
    if version != SCHEMA_VERSION:
        raise DecodeError(f"unknown schema_version {version!r}", field="schema_version")
    kind = obj["kind"]
    if kind not in MessageKind.ALL:
        raise DecodeError(f"unknown kind {kind!r}", field="kind")
    retained = obj["retained"]
    if not isinstance(retained, bool):
        raise DecodeError("retained must be a boolean", field="retained")
    if retained != (kind in RETAINED_KINDS):
        raise DecodeError(f"kind {kind!r} carries the wrong retained flag", field="retained")
    body = obj["body"]
    if not isinstance(body, dict):
        raise DecodeError("body must be a JSON object", field="body")
    return Envelope(kind=kind, body=body, retained=retained, schema_version=version)
