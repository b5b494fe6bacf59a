"""Messaging layer: topic scheme, wire envelope, buses, configuration."""

from .config import KNOWN_KEYS, Config, env_name_for, load_config
from .envelope import RETAINED_KINDS, SCHEMA_VERSION, Envelope, MessageKind, decode, make_envelope
from .loopback import LoopbackBus, Subscription
from .minibroker import MiniBroker
from .mqtt import MqttBus, MqttSubscription
from .topics import (
    Channel,
    ParsedTopic,
    ROOT,
    parse_topic,
    subscription_filter,
    topic_for,
    topic_matches,
)

__all__ = [
    "Channel",
    "Config",
    "Envelope",
    "KNOWN_KEYS",
    "LoopbackBus",
    "MessageKind",
    "MiniBroker",
    "MqttBus",
    "MqttSubscription",
    "ParsedTopic",
    "RETAINED_KINDS",
    "ROOT",
    "SCHEMA_VERSION",
    "Subscription",
    "decode",
    "env_name_for",
    "load_config",
    "make_envelope",
    "parse_topic",
    "subscription_filter",
    "topic_for",
    "topic_matches",
]
