"""HTTP service: endpoints, replay lifecycle, adjudication over the wire."""

import json
import threading
import time
import urllib.error
import urllib.request
from contextlib import contextmanager

import pytest

from hpcguard import cli, telemetry
from hpcguard.service import DetectorService, RecoverySettings
from hpcguard.telemetry import Regime


@contextmanager
def running_service(pipeline, recovery=None):
    models, templates, config, run = pipeline
    service = DetectorService(
        models=models,
        templates=templates,
        config=config,
        scaler=run.scaler,
        port=0,
        recovery=recovery,
    )
    thread = threading.Thread(target=service.serve_forever, daemon=True)
    thread.start()
    try:
        yield service, f"http://{service.host}:{service.port}"
    finally:
        service.shutdown()
        thread.join(timeout=5.0)


def get_json(base, path):
    with urllib.request.urlopen(base + path, timeout=10) as resp:
        return resp.status, json.loads(resp.read())


def post_json(base, path, payload):
    body = json.dumps(payload).encode()
    req = urllib.request.Request(
        base + path, data=body, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def wait_for(predicate, timeout=30.0, interval=0.02):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval)
    raise AssertionError("timed out waiting for service state")


# ---------------------------------------------------------------------------
# plain endpoint behavior (tiny pipeline)


def test_root_lists_the_endpoints(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        status, data = get_json(base, "/")
        assert status == 200
        assert "POST /api/adjudicate" in data["endpoints"]


def test_initial_state_snapshot(tiny_pipeline):
    _, _, config, _ = tiny_pipeline
    with running_service(tiny_pipeline) as (_, base):
        status, data = get_json(base, "/api/state")
        assert status == 200
        assert data["mode"] == "Monitoring"
        assert data["windows_seen"] == 0
        assert data["replay"] is None
        assert data["latency"] is None
        assert data["config"]["threshold_1"] == config.calibration_1.threshold
        assert data["config"]["m_consecutive"] == config.policy.m_consecutive


def test_initial_errors_and_correlation(tiny_pipeline):
    _, templates, _, _ = tiny_pipeline
    with running_service(tiny_pipeline) as (_, base):
        status, data = get_json(base, "/api/errors?from=0")
        assert status == 200
        assert data["errors"] == []
        assert data["threshold_1"] > 0

        status, data = get_json(base, "/api/correlation")
        assert status == 200
        assert data["label"] == "disk-encryption"
        assert data["template_length"] == len(templates[0])
        assert data["rho"] == []


def test_unknown_paths_404(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        with pytest.raises(urllib.error.HTTPError) as exc_info:
            get_json(base, "/api/nope")
        assert exc_info.value.code == 404
        status, _ = post_json(base, "/api/nope", {})
        assert status == 404


def test_recovery_404_until_a_report_exists(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        with pytest.raises(urllib.error.HTTPError) as exc_info:
            get_json(base, "/api/recovery")
        assert exc_info.value.code == 404


def test_errors_from_must_be_an_integer(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        with pytest.raises(urllib.error.HTTPError) as exc_info:
            get_json(base, "/api/errors?from=abc")
        assert exc_info.value.code == 400


def test_adjudicate_while_monitoring_is_409(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        status, data = post_json(base, "/api/adjudicate", {"approve": True})
        assert status == 409
        assert "Monitoring" in data["error"]


def test_malformed_bodies_are_400(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        for path, payload in (
            ("/api/adjudicate", {}),
            ("/api/adjudicate", {"approve": "yes"}),
            ("/api/replay", {}),
            ("/api/replay", {"profile": "Quantum"}),
            ("/api/replay", {"profile": "Baseline", "speed_multiplier": 0}),
            ("/api/replay", {"profile": "Baseline", "ticks": "many"}),
            ("/api/replay", {"trace_id": "/nonexistent/trace.csv"}),
        ):
            status, _ = post_json(base, path, payload)
            assert status == 400, (path, payload)

        # raw garbage body
        req = urllib.request.Request(
            base + "/api/replay", data=b"{not json", headers={"Content-Type": "application/json"}
        )
        with pytest.raises(urllib.error.HTTPError) as exc_info:
            urllib.request.urlopen(req, timeout=10)
        assert exc_info.value.code == 400


# ---------------------------------------------------------------------------
# replay lifecycle (tiny pipeline)


def replay_done(base):
    def check():
        _, data = get_json(base, "/api/state")
        return data if (data["replay"] or {}).get("done") else None

    return wait_for(check)


def test_replay_folds_every_window(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        status, data = post_json(
            base,
            "/api/replay",
            {"profile": "Baseline", "seed": 71, "ticks": 160,
             "speed_multiplier": 10000},
        )
        assert status == 200
        assert data["started"] == {"profile": "Baseline", "seed": 71, "ticks": 160}

        state = replay_done(base)
        assert state["windows_seen"] == 61
        assert state["error_count"] == 61
        assert state["latency"]["windows_processed"] == 61
        assert state["latency"]["budget_ms"] == 10.0

        _, errors = get_json(base, "/api/errors?from=0")
        assert len(errors["errors"]) == 61
        _, tail = get_json(base, "/api/errors?from=59")
        assert [row[0] for row in tail["errors"]] == [59, 60]


def test_replay_from_a_trace_file(tiny_pipeline, tmp_path):
    path = tmp_path / "trace.csv"
    trace = telemetry.generate_trace(Regime.BASELINE, 140, 72)
    telemetry.save_trace(str(path), trace)
    with running_service(tiny_pipeline) as (_, base):
        status, data = post_json(
            base, "/api/replay", {"trace_id": str(path), "speed_multiplier": 10000}
        )
        assert status == 200
        assert data["started"]["ticks"] == 140
        state = replay_done(base)
        assert state["windows_seen"] == 41


def test_concurrent_replay_is_409(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        status, _ = post_json(
            base,
            "/api/replay",
            {"profile": "Baseline", "seed": 73, "ticks": 4000,
             "speed_multiplier": 1.0},
        )
        assert status == 200
        status, data = post_json(
            base,
            "/api/replay",
            {"profile": "Baseline", "seed": 74, "ticks": 100,
             "speed_multiplier": 10000},
        )
        assert status == 409
        assert "already running" in data["error"]


def test_fresh_replay_resets_history(tiny_pipeline):
    with running_service(tiny_pipeline) as (_, base):
        for seed in (75, 76):
            status, _ = post_json(
                base,
                "/api/replay",
                {"profile": "Baseline", "seed": seed, "ticks": 130,
                 "speed_multiplier": 10000},
            )
            assert status == 200
            state = replay_done(base)
            assert state["windows_seen"] == 31
            assert state["error_count"] == 31


# ---------------------------------------------------------------------------
# adjudication cycle and stream fidelity (shipped pipeline)


def read_stream_until(resp, stop_kind, deadline_s=30.0):
    lines = []
    deadline = time.monotonic() + deadline_s
    while time.monotonic() < deadline:
        raw = resp.readline()
        if raw == b"":
            break
        line = raw.decode().strip()
        if not line:
            continue
        lines.append(line)
        if json.loads(line)["kind"] == stop_kind:
            return lines
    raise AssertionError(f"stream never delivered {stop_kind}")


def test_disk_replay_suspends_then_approve_resumes(
    default_pipeline, default_manifest_dir, tmp_path
):
    trace_path = tmp_path / "disk.csv"
    trace = telemetry.generate_trace(Regime.DISK_ENCRYPTION, 300, 2)
    telemetry.save_trace(str(trace_path), trace)

    with running_service(default_pipeline) as (_, base):
        stream = urllib.request.urlopen(base + "/api/events", timeout=20)
        status, _ = post_json(
            base, "/api/replay", {"trace_id": str(trace_path), "speed_multiplier": 10000}
        )
        assert status == 200

        lines = read_stream_until(stream, "SuspendedAwaitingUser")
        stream.close()

        _, state = get_json(base, "/api/state")
        assert state["mode"] == "AwaitingAdjudication"

        # the CLI over the same trace and manifest must log the same events
        events_path = tmp_path / "cli.jsonl"
        code = cli.main(
            ["detect", "--manifest", str(default_manifest_dir), "--trace",
             str(trace_path), "--events-out", str(events_path)]
        )
        assert code == cli.EXIT_AWAITING_ADJUDICATION
        cli_lines = events_path.read_text().splitlines()
        assert lines == cli_lines

        # errors endpoint carries the same series the stream was built from
        _, errors = get_json(base, "/api/errors?from=0")
        suspect_index = json.loads(lines[-1])["window_index"]
        assert errors["errors"][-1][0] == suspect_index

        status, data = post_json(base, "/api/adjudicate", {"approve": True})
        assert status == 200
        assert data["mode"] == "ResumedDiskEncryption"

        state = replay_done(base)
        assert state["mode"] == "ResumedDiskEncryption"


def test_deny_terminates_and_recovery_reports(default_pipeline):
    recovery = RecoverySettings(files=400, capacity_n=128)
    with running_service(default_pipeline, recovery=recovery) as (_, base):
        status, _ = post_json(
            base,
            "/api/replay",
            {"profile": "DiskEncryption", "seed": 3, "ticks": 300,
             "speed_multiplier": 10000},
        )
        assert status == 200

        wait_for(
            lambda: get_json(base, "/api/state")[1]["mode"] == "AwaitingAdjudication"
        )
        status, data = post_json(base, "/api/adjudicate", {"approve": False})
        assert status == 200
        assert data["mode"] == "TerminatedRansomware"

        state = replay_done(base)
        assert state["mode"] == "TerminatedRansomware"

        _, report = get_json(base, "/api/recovery")
        assert report["total_encrypted"] > 0
        assert len(report["recovered"]) + len(report["lost"]) == report["total_encrypted"]
        assert report["lost"] == []  # capacity covers the whole attack window


def test_duplicate_adjudication_yields_exactly_one_transition(default_pipeline):
    with running_service(default_pipeline) as (_, base):
        status, _ = post_json(
            base,
            "/api/replay",
            {"profile": "DiskEncryption", "seed": 4, "ticks": 300,
             "speed_multiplier": 10000},
        )
        assert status == 200
        wait_for(
            lambda: get_json(base, "/api/state")[1]["mode"] == "AwaitingAdjudication"
        )

        results = []
        barrier = threading.Barrier(2)

        def submit():
            barrier.wait()
            results.append(post_json(base, "/api/adjudicate", {"approve": True}))

        threads = [threading.Thread(target=submit) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        codes = sorted(status for status, _ in results)
        assert codes == [200, 409]

        _, state = get_json(base, "/api/state")
        assert state["mode"] == "ResumedDiskEncryption"
        # exactly one UserApproved event made it into the log
        approved = [
            status for status, data in results if status == 200
        ]
        assert len(approved) == 1
