"""Topic grammar for the messaging plane.

Every topic is `le3d/<channel>/<site>/<id...>` with a fixed id arity per
channel. Segments are restricted to a conservative charset so topics are
safe across brokers and never collide with the `+`/`#` wildcards.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from ..errors import InputError

__all__ = ["Channel", "ParsedTopic", "topic_for", "parse_topic", "subscription_filter", "topic_matches"]

ROOT = "le3d"

_SEGMENT = re.compile(r"^[A-Za-z0-9_-]+$")


class Channel(str, Enum):
    DATA = "data"
    DECISION = "decision"
    AGGREGATE = "aggregate"
    CLASS = "class"
    CONTROL = "control"
    CONTROLACK = "controlack"
    RELAY = "relay"


# decision topics carry detector_id + stream_id; everything else one id
ID_ARITY = {
    Channel.DATA: 1,
    Channel.DECISION: 2,
    Channel.AGGREGATE: 1,
    Channel.CLASS: 1,
    Channel.CONTROL: 1,
    Channel.CONTROLACK: 1,
    Channel.RELAY: 1,
}


def _check_segment(segment: str, label: str) -> str:
    if not isinstance(segment, str) or not _SEGMENT.match(segment):
        raise InputError(f"invalid topic segment for {label}: {segment!r}")
    return segment


@dataclass(frozen=True)
class ParsedTopic:
    channel: Channel
    site: str
    ids: tuple[str, ...]


def topic_for(channel: Channel | str, site: str, ids: Sequence[str]) -> str:
    if not isinstance(channel, Channel):
        try:
            channel = Channel(str(channel))
        except ValueError:
            raise InputError(f"unknown channel {channel!r}") from None
    ids = tuple(ids)
    if len(ids) != ID_ARITY[channel]:
        raise InputError(
            f"channel {channel.value} takes {ID_ARITY[channel]} id segment(s), got {len(ids)}"
        )
    _check_segment(site, "site")
    for i in ids:
        _check_segment(i, "id")
    return "/".join([ROOT, channel.value, site, *ids])


def parse_topic(topic: str) -> ParsedTopic:
    parts = topic.split("/")
    if len(parts) < 4 or parts[0] != ROOT:
        raise InputError(f"not a recognized topic: {topic!r}")
    try:
        channel = Channel(parts[1])
    except ValueError:
        raise InputError(f"unknown channel in topic: {topic!r}") from None
    site = _check_segment(parts[2], "site")
    ids = tuple(_check_segment(p, "id") for p in parts[3:])
    if len(ids) != ID_ARITY[channel]:
        raise InputError(f"wrong id arity for channel {channel.value}: {topic!r}")
    return ParsedTopic(channel=channel, site=site, ids=ids)


def subscription_filter(
    channel: Channel | str, site: Optional[str] = None, ids: Optional[Sequence[Optional[str]]] = None
) -> str:
    """Build a wildcard filter for one channel.

    Unspecified site/ids become `+` wildcards; each id may individually be
    None to wildcard just that position.
    """
    if not isinstance(channel, Channel):
        channel = Channel(str(channel))
    arity = ID_ARITY[channel]
    id_parts: list[str] = list(ids) if ids is not None else [None] * arity  # type: ignore[list-item]
    if len(id_parts) != arity:
        raise InputError(f"channel {channel.value} takes {arity} id segment(s)")
    segments = [ROOT, channel.value, _check_segment(site, "site") if site else "+"]
    for part in id_parts:
        segments.append(_check_segment(part, "id") if part is not None else "+")
    return "/".join(segments)


def topic_matches(topic_filter: str, topic: str) -> bool:
    """MQTT-style filter matching: `+` one segment, trailing `#` the rest."""
    fparts = topic_filter.split("/")
    tparts = topic.split("/")
    for i, f in enumerate(fparts):
        if f == "#":
            return i == len(fparts) - 1
        if i >= len(tparts):
            return False
        if f != "+" and f != tparts[i]:
            return False
    return len(fparts) == len(tparts)
