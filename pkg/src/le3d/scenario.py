"""Single-process demo stack: three sites sharing one in-process bus.

Each site runs a seeded temperature emulator, a detector with the default
ensemble, and an aggregator, all wired through a loopback bus and driven
by a manually advanced clock, so whole deployments replay deterministically
in milliseconds of wall time.

Two scripted experiments cover the interesting outcomes:

- run_all_of_type_script steps every temperature stream at once; each
  aggregator should see its own drift corroborated by peers and classify
  it as natural.
- run_single_script steps one stream only; its aggregator should classify
  the drift as abnormal while the quiet sites report nothing.

The stack records every decision, share, and class payload that crosses
the bus, so callers can audit ordering and scan for privacy leaks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .aggregator import AggregatorService, DriftClass
from .datagen import (
    BROADCAST_SITE,
    DriftCommand,
    DriftKind,
    DriftScope,
    EmulatorService,
    StreamProfile,
)
from .detector import DetectorService, DriftDecision
from .transport import Channel, LoopbackBus, decode, make_envelope, topic_for

DEFAULT_SITES = ("site-a", "site-b", "site-c")


class SimClock:
    """Manually advanced millisecond clock shared by every service."""

    def __init__(self, start: int = 1_000_000):
        self.now = start

    def __call__(self) -> int:
        return self.now

    def advance(self, ms: int) -> None:
        self.now += ms


@dataclass
class SiteNode:
    site: str
    stream_id: str
    emulator: EmulatorService
    detector: DetectorService
    aggregator: AggregatorService


class ScenarioStack:
    """Three-site edge deployment in one process.

    Emission is pull-driven: each tick advances the shared clock by one
    sample period and has every emulator publish once. Loopback delivery
    is synchronous, so by the time tick() returns, every decision, share,
    and classification caused by those samples has been published too.
    """

    # The default ensemble answers a clean step at very different speeds:
    # Adwin on the first shifted sample, PageHinkley about ten samples
    # later, Kswin up to a window transit after that. The vote window has
    # to bridge those gaps or the votes expire one by one without ever
    # overlapping, so the stack runs wider than the single-estimator
    # default of 10.
    VOTE_WINDOW = 50

    def __init__(
        self,
        seed: int = 0,
        sites=DEFAULT_SITES,
        tick_ms: int = 100,
        mean: float = 20.0,
        stddev: float = 0.15,
        bus: Optional[LoopbackBus] = None,
        clock: Optional[SimClock] = None,
    ):
        self.bus = bus or LoopbackBus()
        self.clock = clock or SimClock()
        self.tick_ms = tick_ms
        self.nodes: List[SiteNode] = []
        self.decisions: List[Tuple[str, DriftDecision]] = []
        self.classes: List[Tuple[str, DriftClass]] = []
        self.scanned_payloads: List[Tuple[str, bytes]] = []
        for index, site in enumerate(sites):
            stream_id = "temp-{}".format(site)
            profile = StreamProfile(
                mean=mean,
                stddev=stddev,
                sample_period_ms=tick_ms,
                seed=seed * 1009 + index,
                sensor_type="temperature",
                unit="C",
            )
            detector_id = "det-{}".format(site)
            self.nodes.append(
                SiteNode(
                    site=site,
                    stream_id=stream_id,
                    emulator=EmulatorService(self.bus, stream_id, site, profile, clock=self.clock),
                    detector=DetectorService(self.bus, detector_id, site, vote_window=self.VOTE_WINDOW),
                    aggregator=AggregatorService(
                        self.bus, "agg-{}".format(site), site, detector_id, clock=self.clock
                    ),
                )
            )
        self._subs = [
            self.bus.subscribe("le3d/decision/#", self._on_decision),
            self.bus.subscribe("le3d/class/#", self._on_class),
            self.bus.subscribe("le3d/aggregate/#", self._on_aggregate),
        ]

    def start(self) -> "ScenarioStack":
        for node in self.nodes:
            node.detector.start()
            node.aggregator.start()
            node.emulator.start()
        return self

    # ------------------------------------------------------------ recording

    def _on_decision(self, topic: str, payload: bytes, retained: bool) -> None:
        self.scanned_payloads.append((topic, payload))
        self.decisions.append((topic, DriftDecision.from_body(decode(payload).body)))

    def _on_class(self, topic: str, payload: bytes, retained: bool) -> None:
        self.scanned_payloads.append((topic, payload))
        self.classes.append((topic, DriftClass.from_body(decode(payload).body)))

    def _on_aggregate(self, topic: str, payload: bytes, retained: bool) -> None:
        self.scanned_payloads.append((topic, payload))

    # -------------------------------------------------------------- driving

    def tick(self, count: int = 1) -> None:
        for _ in range(count):
            self.clock.advance(self.tick_ms)
            for node in self.nodes:
                node.emulator.emit()
            for node in self.nodes:
                node.aggregator.tick()

    def inject(self, command: DriftCommand) -> None:
        topic_id = (
            command.target_stream_id
            if command.scope is DriftScope.SINGLE
            else command.sensor_type
        )
        envelope = make_envelope("command", command.as_dict())
        self.bus.publish(topic_for(Channel.CONTROL, BROADCAST_SITE, [topic_id]), envelope.encode())

    @property
    def stream_ids(self) -> List[str]:
        return [node.stream_id for node in self.nodes]


@dataclass
class ScriptResult:
    injected_at: int
    window_ms: int
    stream_ids: List[str]
    target: Optional[str]
    decisions: List[Tuple[str, DriftDecision]]
    classes: List[Tuple[str, DriftClass]]
    payloads: List[Tuple[str, bytes]]

    def classes_for(self, stream_id: str, until: Optional[int] = None) -> List[DriftClass]:
        rows = [cls for _, cls in self.classes if cls.stream_id == stream_id]
        if until is not None:
            rows = [cls for cls in rows if cls.classified_at <= until]
        return rows

    def decisions_before(self, at: int) -> List[DriftDecision]:
        return [decision for _, decision in self.decisions if decision.decided_at <= at]


def _run_script(
    scope: DriftScope,
    seed: int,
    warmup_ticks: int,
    post_ticks: int,
    magnitude: float,
    target_index: int,
) -> ScriptResult:
    stack = ScenarioStack(seed=seed).start()
    stack.tick(warmup_ticks)
    injected_at = stack.clock()
    target = stack.nodes[target_index].stream_id if scope is DriftScope.SINGLE else ""
    stack.inject(
        DriftCommand(
            target_stream_id=target,
            kind=DriftKind.STEP,
            magnitude=magnitude,
            duration_ms=0,
            issued_at=injected_at,
            scope=scope,
            sensor_type="temperature",
        )
    )
    stack.tick(post_ticks)
    return ScriptResult(
        injected_at=injected_at,
        window_ms=stack.nodes[0].aggregator.core.concurrency_window_ms,
        stream_ids=stack.stream_ids,
        target=target or None,
        decisions=stack.decisions,
        classes=stack.classes,
        payloads=stack.scanned_payloads,
    )


def run_all_of_type_script(
    seed: int = 0, warmup_ticks: int = 200, post_ticks: int = 400, magnitude: float = 5.0
) -> ScriptResult:
    """Step every temperature stream at once; drift should read as natural."""
    return _run_script(DriftScope.ALL_OF_TYPE, seed, warmup_ticks, post_ticks, magnitude, 0)


def run_single_script(
    seed: int = 0,
    warmup_ticks: int = 200,
    post_ticks: int = 400,
    magnitude: float = 5.0,
    target_index: int = 0,
) -> ScriptResult:
    """Step one stream only; its drift should read as abnormal."""
    return _run_script(DriftScope.SINGLE, seed, warmup_ticks, post_ticks, magnitude, target_index)
