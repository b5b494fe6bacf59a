"""The command surface: argument wiring, config precedence, exit codes,
and that each service subcommand actually runs its service."""

import json
import socket
import threading
import time
import urllib.request

import pytest

from le3d.cli import main
from le3d.transport import MiniBroker, MqttBus


@pytest.fixture
def broker(monkeypatch):
    b = MiniBroker().start()
    monkeypatch.setenv("LE3D_BROKER_PORT", str(b.port))
    yield b
    b.stop()


class Collector:
    def __init__(self):
        self.items = []
        self._cond = threading.Condition()

    def __call__(self, topic, payload, retained):
        with self._cond:
            self.items.append((topic, payload, retained))
            self._cond.notify_all()

    def wait_count(self, count, timeout=10.0):
        with self._cond:
            self._cond.wait_for(lambda: len(self.items) >= count, timeout)
            return list(self.items)


def _free_port():
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


def test_config_prints_resolved_defaults(capsys):
    assert main(["config"]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["detector.vote_window"] == 10
    assert resolved["broker.port"] == 1883


def test_config_env_layer_wins(capsys, monkeypatch):
    monkeypatch.setenv("LE3D_DETECTOR_VOTE_WINDOW", "20")
    assert main(["config"]) == 0
    assert json.loads(capsys.readouterr().out)["detector.vote_window"] == 20


def test_config_file_layer_between_defaults_and_env(capsys, monkeypatch, tmp_path):
    config_file = tmp_path / "le3d.json"
    config_file.write_text(json.dumps({"detector": {"vote_window": 15, "site": "plant-9"}}))
    monkeypatch.setenv("LE3D_DETECTOR_VOTE_WINDOW", "20")
    assert main(["--config", str(config_file), "config"]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["detector.vote_window"] == 20  # env beats file
    assert resolved["detector.site"] == "plant-9"  # file beats default


def test_bad_env_value_exits_with_error(capsys, monkeypatch):
    monkeypatch.setenv("LE3D_DETECTOR_VOTE_WINDOW", "0")
    assert main(["config"]) == 2
    assert "detector.vote_window" in capsys.readouterr().err


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["no-such-command"])
    assert excinfo.value.code == 2


def test_emulate_publishes_bounded_sample_run(broker, tmp_path, capsys):
    profile = tmp_path / "temp.profile"
    profile.write_text(
        "mean = 20.0\nstddev = 0.5\nsample_period_ms = 1\n"
        "sensor_type = temperature\nunit = C\nseed = 7\n"
    )
    observer = MqttBus(port=broker.port).connect()
    got = Collector()
    observer.subscribe("le3d/data/lab/#", got)
    try:
        code = main(
            ["emulate", "--profile", str(profile), "--stream-id", "t1", "--site", "lab",
             "--count", "5"]
        )
        assert code == 0
        assert "emitted 5 samples" in capsys.readouterr().out
        items = got.wait_count(5)
        assert len(items) == 5
        assert all(topic == "le3d/data/lab/t1" for topic, _, _ in items)
    finally:
        observer.close()


def test_emulate_missing_profile_file_exits_with_error(broker, tmp_path, capsys):
    code = main(
        ["emulate", "--profile", str(tmp_path / "ghost.profile"), "--stream-id", "t1",
         "--site", "lab", "--count", "1"]
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_stream_replays_csv_then_exits(broker, tmp_path, capsys):
    csv_file = tmp_path / "capture.csv"
    csv_file.write_text(
        "timestamp,value\n1000,20.1\n2000,20.3\nnot-a-number,20.9\n3000,19.8\n"
    )
    observer = MqttBus(port=broker.port).connect()
    got = Collector()
    observer.subscribe("le3d/data/lab/cap1", got)
    try:
        code = main(
            ["stream", "--csv", str(csv_file), "--stream-id", "cap1", "--site", "lab",
             "--rate", "10000"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "replayed 3 samples" in out
        assert "1 rows skipped" in out
        assert len(got.wait_count(3)) == 3
    finally:
        observer.close()


def test_detector_subcommand_serves_and_exits(broker, capsys):
    code = main(["detector", "--id", "det-lab", "--site", "lab", "--run-for-s", "0.3"])
    assert code == 0
    assert "detector det-lab watching site lab" in capsys.readouterr().out


def test_aggregator_subcommand_serves_and_exits(broker, capsys):
    code = main(
        ["aggregator", "--id", "agg-lab", "--site", "lab", "--detector-id", "det-lab",
         "--tick-ms", "50", "--run-for-s", "0.3"]
    )
    assert code == 0
    assert "aggregator agg-lab for detector det-lab" in capsys.readouterr().out


def test_coordination_subcommand_answers_http(broker):
    port = _free_port()
    result = {}

    def run():
        result["code"] = main(["coordination", "--port", str(port), "--run-for-s", "2.0"])

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 5
    body = None
    while time.monotonic() < deadline:
        try:
            with urllib.request.urlopen(
                "http://127.0.0.1:%d/api/v1/healthz" % port, timeout=1
            ) as response:
                body = json.loads(response.read())
                break
        except OSError:
            time.sleep(0.05)
    thread.join(timeout=10)
    assert result.get("code") == 0
    assert body is not None and body["ok"] is True
    assert body["bus_attached"] is True


def test_coordination_without_broker_bridge():
    port = _free_port()
    result = {}

    def run():
        result["code"] = main(
            ["coordination", "--port", str(port), "--no-bus", "--run-for-s", "1.5"]
        )

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 5
    body = None
    while time.monotonic() < deadline:
        try:
            with urllib.request.urlopen(
                "http://127.0.0.1:%d/api/v1/healthz" % port, timeout=1
            ) as response:
                body = json.loads(response.read())
                break
        except OSError:
            time.sleep(0.05)
    thread.join(timeout=10)
    assert result.get("code") == 0
    assert body is not None and body["bus_attached"] is False


def test_broker_subcommand_accepts_clients(capsys):
    port = _free_port()
    result = {}

    def run():
        result["code"] = main(["broker", "--port", str(port), "--run-for-s", "1.5"])

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    client = None
    deadline = time.monotonic() + 5
    while time.monotonic() < deadline:
        try:
            client = MqttBus(port=port, ack_timeout_s=1.0).connect()
            break
        except Exception:
            time.sleep(0.05)
    assert client is not None, "bundled broker never came up"
    client.publish("le3d/data/lab/s1", b"x")
    client.close()
    thread.join(timeout=10)
    assert result.get("code") == 0


def test_demo_prints_both_scenario_verdicts(capsys):
    assert main(["demo", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "scenario 1" in out and "scenario 2" in out
    assert "natural" in out and "abnormal" in out
    assert "<- injected" in out


def test_unreachable_broker_is_a_clean_error(capsys, monkeypatch):
    monkeypatch.setenv("LE3D_BROKER_PORT", "1")
    code = main(["detector", "--site", "lab", "--run-for-s", "0.1"])
    assert code == 2
    assert "error:" in capsys.readouterr().err
