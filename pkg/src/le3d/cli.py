"""Command-line entry points for every runnable service.

One executable, one subcommand per role: `broker` runs the bundled message
broker, `emulate` and `stream` feed sample topics, `detector` and
`aggregator` run the edge tier, `coordination` runs the cloud-side REST
service (optionally serving the operator console), `demo` replays the
scripted drift scenarios in-process, and `config` prints the resolved
configuration. Settings resolve as defaults < config file < LE3D_*
environment variables < explicit flags.

Long-running commands stop on Ctrl-C; `--run-for-s` bounds them instead,
which is how the tests and demos drive them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from typing import Optional

from .aggregator import AggregatorService
from .coordination import CoordinationCore
from .datagen import CsvStreamer, EmulatorService, parse_profile_file
from .detector import DetectorService
from .errors import Le3dError
from .scenario import run_all_of_type_script, run_single_script
from .transport import Config, MiniBroker, MqttBus, load_config
from .webapp import WebApp

__all__ = ["main"]

log = logging.getLogger("le3d.cli")


def _connect_bus(cfg: Config) -> MqttBus:
    return MqttBus(
        host=cfg.get("broker.host"),
        port=cfg.get("broker.port"),
        username=cfg.get("broker.username"),
        password=cfg.get("broker.password"),
        keepalive_s=cfg.get("broker.keepalive_s"),
    ).connect()


def _linger(run_for_s: Optional[float]) -> None:
    """Sleep until the bound expires or the operator interrupts."""
    if run_for_s is None:
        threading.Event().wait()
    else:
        time.sleep(run_for_s)


def _cmd_config(args, cfg: Config) -> int:
    print(json.dumps(cfg.as_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_broker(args, cfg: Config) -> int:
    host = args.host if args.host is not None else cfg.get("broker.host")
    port = args.port if args.port is not None else cfg.get("broker.port")
    broker = MiniBroker(host=host, port=port).start()
    print("broker listening on %s:%d" % broker.address, flush=True)
    try:
        _linger(args.run_for_s)
    finally:
        broker.stop()
    return 0


def _cmd_emulate(args, cfg: Config) -> int:
    profile = parse_profile_file(args.profile)
    bus = _connect_bus(cfg)
    try:
        service = EmulatorService(bus, args.stream_id, args.site, profile)
        service.start()
        period_s = profile.sample_period_ms / 1000.0
        deadline = time.monotonic() + args.run_for_s if args.run_for_s else None
        emitted = 0
        while args.count is None or emitted < args.count:
            service.emit()
            emitted += 1
            if deadline is not None and time.monotonic() >= deadline:
                break
            time.sleep(period_s)
        print("emitted %d samples for %s" % (emitted, args.stream_id), flush=True)
    finally:
        bus.close()
    return 0


def _cmd_stream(args, cfg: Config) -> int:
    streamer = CsvStreamer(
        args.csv,
        args.stream_id,
        args.site,
        rate_multiplier=args.rate,
        sensor_type=args.sensor_type,
        unit=args.unit,
        loop=args.loop,
    )
    bus = _connect_bus(cfg)
    try:
        published = streamer.run_on_bus(bus)
        print(
            "replayed %d samples from %s (%d rows skipped)"
            % (published, args.csv, streamer.skipped_rows),
            flush=True,
        )
    finally:
        bus.close()
    return 0


def _cmd_detector(args, cfg: Config) -> int:
    site = args.site if args.site is not None else cfg.get("detector.site")
    detector_id = args.id or cfg.get("detector.id") or "det-%s" % site
    subscribe_site = (
        args.subscribe_site
        if args.subscribe_site is not None
        else (cfg.get("detector.subscribe_site") or None)
    )
    relay = args.relay if args.relay is not None else cfg.get("detector.relay_enabled")
    bus = _connect_bus(cfg)
    service = None
    try:
        service = DetectorService(
            bus,
            detector_id,
            site,
            subscribe_site=subscribe_site,
            vote_window=cfg.get("detector.vote_window"),
            quorum_fraction=cfg.get("detector.quorum_fraction"),
            baseline_capacity=cfg.get("detector.baseline_capacity"),
            estimators_by_type=cfg.get("detector.estimators_by_type") or None,
            relay_enabled=relay,
            relay_buffer=cfg.get("detector.relay_buffer"),
        )
        service.start()
        print("detector %s watching site %s" % (detector_id, subscribe_site or site), flush=True)
        _linger(args.run_for_s)
    finally:
        if service is not None:
            service.stop()
        bus.close()
    return 0


def _cmd_aggregator(args, cfg: Config) -> int:
    site = args.site if args.site is not None else cfg.get("aggregator.site")
    aggregator_id = args.id or cfg.get("aggregator.id") or "agg-%s" % site
    detector_id = args.detector_id or cfg.get("detector.id") or "det-%s" % site
    bus = _connect_bus(cfg)
    service = None
    try:
        service = AggregatorService(
            bus,
            aggregator_id,
            site,
            detector_id,
            natural_quorum=cfg.get("aggregator.natural_quorum"),
            concurrency_window_ms=cfg.get("aggregator.concurrency_window_ms"),
            liveness_timeout_ms=cfg.get("aggregator.liveness_timeout_ms"),
            tau=cfg.get("aggregator.tau"),
            ks_gate_enabled=cfg.get("aggregator.ks_gate_enabled"),
            share_queue=cfg.get("aggregator.share_queue"),
        )
        service.start()
        print("aggregator %s for detector %s at %s" % (aggregator_id, detector_id, site), flush=True)
        deadline = time.monotonic() + args.run_for_s if args.run_for_s else None
        tick_s = args.tick_ms / 1000.0
        while deadline is None or time.monotonic() < deadline:
            time.sleep(tick_s)
            service.tick()
    finally:
        if service is not None:
            service.stop()
        bus.close()
    return 0


def _cmd_coordination(args, cfg: Config) -> int:
    host = args.host if args.host is not None else cfg.get("coordination.host")
    port = args.port if args.port is not None else cfg.get("coordination.port")
    core = CoordinationCore(liveness_window_ms=cfg.get("coordination.liveness_window_ms"))
    bus = None if args.no_bus else _connect_bus(cfg)
    app = WebApp(core, bus=bus, host=host, port=port, static_dir=args.static)
    try:
        app.start()
        print("coordination service at %s" % app.url, flush=True)
        _linger(args.run_for_s)
    finally:
        app.stop()
        if bus is not None:
            bus.close()
    return 0


def _summarize_script(result, title: str) -> None:
    print(title)
    print(
        "  injected at t=%d ms, concurrency window %d ms"
        % (result.injected_at, result.window_ms)
    )
    print(
        "  %d decisions and %d classifications published"
        % (len(result.decisions), len(result.classes))
    )
    for stream_id in result.stream_ids:
        kinds = []
        for cls in result.classes_for(stream_id):
            if not kinds or kinds[-1] != cls.kind.value:
                kinds.append(cls.kind.value)
        marker = " <- injected" if stream_id == result.target else ""
        print("  %-16s %s%s" % (stream_id, " > ".join(kinds) or "(no class published)", marker))


def _cmd_demo(args, cfg: Config) -> int:
    print("scenario 1: step every temperature stream at once (seed %d)" % args.seed)
    _summarize_script(run_all_of_type_script(seed=args.seed), "  -> expected verdict: natural")
    print()
    print("scenario 2: step a single stream (seed %d)" % args.seed)
    _summarize_script(run_single_script(seed=args.seed), "  -> expected verdict: abnormal")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="le3d",
        description="distributed drift detection services",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("config", help="print the resolved configuration")
    p.set_defaults(func=_cmd_config)

    p = commands.add_parser("broker", help="run the bundled message broker")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--run-for-s", type=float, default=None)
    p.set_defaults(func=_cmd_broker)

    p = commands.add_parser("emulate", help="drive one emulated sensor stream")
    p.add_argument("--profile", required=True, help="profile file (key = value lines)")
    p.add_argument("--stream-id", required=True, dest="stream_id")
    p.add_argument("--site", required=True)
    p.add_argument("--count", type=int, default=None, help="emit N samples, then exit")
    p.add_argument("--run-for-s", type=float, default=None)
    p.set_defaults(func=_cmd_emulate)

    p = commands.add_parser("stream", help="replay a recorded CSV as a sample stream")
    p.add_argument("--csv", required=True)
    p.add_argument("--stream-id", required=True, dest="stream_id")
    p.add_argument("--site", default="local")
    p.add_argument("--rate", type=float, default=1.0, help="replay speed multiplier")
    p.add_argument("--sensor-type", default="", dest="sensor_type")
    p.add_argument("--unit", default="")
    p.add_argument("--loop", action="store_true")
    p.set_defaults(func=_cmd_stream)

    p = commands.add_parser("detector", help="run a drift detector")
    p.add_argument("--id", default="")
    p.add_argument("--site")
    p.add_argument("--subscribe-site", dest="subscribe_site")
    relay = p.add_mutually_exclusive_group()
    relay.add_argument("--relay", dest="relay", action="store_true", default=None)
    relay.add_argument("--no-relay", dest="relay", action="store_false")
    p.add_argument("--run-for-s", type=float, default=None)
    p.set_defaults(func=_cmd_detector)

    p = commands.add_parser("aggregator", help="run a decision aggregator")
    p.add_argument("--id", default="")
    p.add_argument("--site")
    p.add_argument("--detector-id", default="", dest="detector_id")
    p.add_argument("--tick-ms", type=int, default=1000, dest="tick_ms")
    p.add_argument("--run-for-s", type=float, default=None)
    p.set_defaults(func=_cmd_aggregator)

    p = commands.add_parser("coordination", help="run the coordination REST service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--static", help="directory of console assets to serve")
    p.add_argument("--no-bus", action="store_true", help="run without a broker bridge")
    p.add_argument("--run-for-s", type=float, default=None)
    p.set_defaults(func=_cmd_coordination)

    p = commands.add_parser("demo", help="replay the scripted drift scenarios in-process")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_demo)

    return parser


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except KeyboardInterrupt:
        return 0
    except Le3dError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
