"""HTTP interface for live replay, monitoring, and adjudication.

One replay runs at a time and its thread is the only thing that folds
windows into the detector state; adjudications synchronize with it through
the same lock, so every state transition is serialized and observers read
consistent snapshots. Event and error histories accumulate per replay and
reset when a new one starts.

Endpoints (all JSON unless noted):
  GET  /api/state           detector state, config, replay status
  GET  /api/events          NDJSON push stream of detection events
  GET  /api/errors?from=N   both error series from window index N
  GET  /api/correlation     the live correlation track
  GET  /api/recovery        recovery report (once a verdict landed, when enabled)
  POST /api/replay          {profile|trace_id, seed?, ticks?, speed_multiplier?}
  POST /api/adjudicate      {approve: bool}; 409 unless awaiting adjudication
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import detector, recoverysim, telemetry
from .corrmod import ErrorTemplate
from .detector import (
    DetectionEvent,
    DetectorModels,
    DetectorState,
    LatencyReport,
    Mode,
    PipelineConfig,
)
from .telemetry import Regime, Scaler, Trace


@dataclass
class RecoverySettings:
    """Backup-ledger simulation triggered by a ransomware verdict."""

    files: int = 10000
    rate_files_per_s: float = 12.79874650582457
    capacity_n: int = 128
    quantum_ticks: int = recoverysim.DEFAULT_QUANTUM_TICKS


class DetectorService:
    """Owns detector state plus the HTTP server around it."""

    def __init__(
        self,
        models: DetectorModels,
        templates: list[ErrorTemplate],
        config: PipelineConfig,
        scaler: Scaler,
        host: str = "127.0.0.1",
        port: int = 8787,
        recovery: RecoverySettings | None = None,
    ):
        self._models = models
        self._templates = templates
        self._config = config
        self._scaler = scaler
        self._recovery_settings = recovery

        self._lock = threading.Lock()
        self._changed = threading.Condition(self._lock)
        self._state: DetectorState = detector.initial_state(templates)
        self._events: list[DetectionEvent] = []
        self._errors: list[tuple[int, float, float | None]] = []
        self._latency: LatencyReport | None = None
        self._recovery_report: recoverysim.RecoveryReport | None = None
        self._replay_thread: threading.Thread | None = None
        self._replay_meta: dict | None = None
        self._stopping = False

        self._httpd = _Server((host, port), _Handler)
        self._httpd.service = self
        self.host, self.port = self._httpd.server_address[:2]

    # -- lifecycle ----------------------------------------------------------

    def serve_forever(self) -> None:
        self._httpd.serve_forever(poll_interval=0.1)

    def shutdown(self) -> None:
        with self._changed:
            self._stopping = True
            self._changed.notify_all()
        thread = self._replay_thread
        if thread is not None and thread.is_alive():
            thread.join(timeout=5.0)
        self._httpd.shutdown()
        self._httpd.server_close()

    # -- replay -------------------------------------------------------------

    def start_replay(
        self,
        trace: Trace,
        meta: dict,
        speed_multiplier: float,
    ) -> None:
        """Reset state and begin folding the trace on the owner thread."""
        with self._changed:
            if self._replay_thread is not None and self._replay_thread.is_alive():
                raise ReplayActive()
            self._state = detector.initial_state(self._templates)
            self._events = []
            self._errors = []
            self._latency = None
            self._recovery_report = None
            self._replay_meta = dict(meta, speed_multiplier=speed_multiplier, done=False)
            thread = threading.Thread(
                target=self._replay_loop,
                args=(trace, speed_multiplier),
                name="detector-replay",
                daemon=True,
            )
            self._replay_thread = thread
            self._changed.notify_all()
        thread.start()

    def _replay_loop(self, trace: Trace, speed_multiplier: float) -> None:
        windows = telemetry.windowize(
            trace,
            self._scaler,
            window_len=self._config.window_len,
            stride=self._config.stride,
        )
        delay = (trace.interval_ms / 1000.0) / max(speed_multiplier, 1e-9)
        privilege = trace.privilege
        processed = 0
        spent = 0.0
        for window in windows:
            if delay >= 0.0005:
                time.sleep(delay)
            with self._changed:
                if self._stopping:
                    break
                while self._state.mode is Mode.AWAITING_ADJUDICATION:
                    self._changed.wait(timeout=0.5)
                    if self._stopping:
                        break
                if self._stopping:
                    break
                if self._state.mode in detector.TERMINAL_MODES:
                    break
                started = time.perf_counter()
                state, events = detector.process_window(
                    self._state,
                    window,
                    self._models,
                    self._templates,
                    self._config,
                    privilege,
                )
                spent += time.perf_counter() - started
                processed += 1
                self._state = state
                self._events.extend(events)
                if state.last_stage1_error is not None:
                    self._errors.append(
                        (
                            state.windows_seen - 1,
                            state.last_stage1_error,
                            state.last_stage2_error,
                        )
                    )
                self._changed.notify_all()
        with self._changed:
            first = self._state.first_anomaly_window
            latency_ms = None
            if first is not None:
                latency_ms = detector.detection_latency(
                    first_window_ms=self._config.window_len
                    * self._config.sampling_interval_ms,
                    anomaly_window_index=first + 1,
                    interval_ms=self._config.sampling_interval_ms,
                    timing=self._config.timing,
                )
            self._latency = LatencyReport(
                windows_processed=processed,
                mean_window_ms=(spent * 1000.0 / processed) if processed else 0.0,
                budget_ms=float(self._config.sampling_interval_ms),
                within_budget=(spent * 1000.0 / processed) < self._config.sampling_interval_ms
                if processed
                else True,
                first_anomaly_window=first,
                detection_latency_ms=latency_ms,
            )
            if (
                self._recovery_settings is not None
                and self._state.mode is Mode.TERMINATED_RANSOMWARE
                and latency_ms is not None
            ):
                self._recovery_report = self._run_recovery(latency_ms)
            if self._replay_meta is not None:
                self._replay_meta["done"] = True
            self._changed.notify_all()

    def _run_recovery(self, latency_ms: float) -> recoverysim.RecoveryReport:
        settings = self._recovery_settings
        ledger = recoverysim.BackupLedger(
            capacity_n=settings.capacity_n, quantum_ticks=settings.quantum_ticks
        )
        files = [
            recoverysim.SimFile.new(f"file-{i:05d}") for i in range(settings.files)
        ]
        recoverysim.simulate_attack(
            ledger, files, settings.rate_files_per_s, latency_ms
        )
        return recoverysim.recover(ledger, files)

    # -- adjudication ---------------------------------------------------------

    def adjudicate(self, approve: bool) -> DetectorState:
        with self._changed:
            if self._state.mode is not Mode.AWAITING_ADJUDICATION:
                raise detector.NotAwaitingAdjudication(
                    f"mode is {self._state.mode.value}"
                )
            state, events = detector.adjudicate(self._state, approve)
            self._state = state
            self._events.extend(events)
            self._changed.notify_all()
            return state

    # -- snapshots ------------------------------------------------------------

    def state_snapshot(self) -> dict:
        with self._lock:
            state = self._state
            track = state.correlation.track.rho
            config = self._config
            meta = dict(self._replay_meta) if self._replay_meta else None
            latency = self._latency
            return {
                "mode": state.mode.value,
                "windows_seen": state.windows_seen,
                "stage1_run": state.stage1_run,
                "stage2_run": state.stage2_run,
                "stage2_evaluations": state.stage2_evaluations,
                "first_anomaly_window": state.first_anomaly_window,
                "last_stage1_error": state.last_stage1_error,
                "last_stage2_error": state.last_stage2_error,
                "correlation_length": len(track),
                "last_rho": track[-1] if track else None,
                "event_count": len(self._events),
                "error_count": len(self._errors),
                "replay": meta,
                "latency": _latency_dict(latency),
                "config": {
                    "window_len": config.window_len,
                    "stride": config.stride,
                    "n_fft": config.n_fft,
                    "drop_dc": config.drop_dc,
                    "sampling_interval_ms": config.sampling_interval_ms,
                    "persistence_k": config.persistence_k,
                    "threshold_1": config.calibration_1.threshold,
                    "threshold_2": config.calibration_2.threshold,
                    "rho_high": config.policy.rho_high,
                    "rho_low": config.policy.rho_low,
                    "m_consecutive": config.policy.m_consecutive,
                },
            }

    def errors_snapshot(self, start: int) -> dict:
        with self._lock:
            rows = [
                [idx, e1, e2]
                for idx, e1, e2 in self._errors
                if idx >= start
            ]
            return {
                "from": start,
                "threshold_1": self._config.calibration_1.threshold,
                "threshold_2": self._config.calibration_2.threshold,
                "errors": rows,
            }

    def correlation_snapshot(self) -> dict:
        with self._lock:
            template = self._templates[0]
            return {
                "label": template.label,
                "template_length": len(template),
                "rho": list(self._state.correlation.track.rho),
            }

    def recovery_snapshot(self) -> dict | None:
        with self._lock:
            if self._recovery_report is None:
                return None
            report = self._recovery_report
            return {
                "recovered": list(report.recovered),
                "lost": list(report.lost),
                "total_encrypted": report.total_encrypted,
            }

    def events_since(self, index: int, timeout: float) -> tuple[list[DetectionEvent], int, bool]:
        """Events from index on, blocking up to timeout; returns (batch, next, stopping)."""
        with self._changed:
            if index >= len(self._events) and not self._stopping:
                self._changed.wait(timeout=timeout)
            batch = self._events[index:]
            return batch, index + len(batch), self._stopping


def _latency_dict(latency: LatencyReport | None) -> dict | None:
    if latency is None:
        return None
    return {
        "windows_processed": latency.windows_processed,
        "mean_window_ms": latency.mean_window_ms,
        "budget_ms": latency.budget_ms,
        "within_budget": latency.within_budget,
        "first_anomaly_window": latency.first_anomaly_window,
        "detection_latency_ms": latency.detection_latency_ms,
    }


class ReplayActive(Exception):
    """A replay is already running."""


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    service: DetectorService


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: _Server

    # quiet the default per-request stderr lines
    def log_message(self, fmt: str, *args) -> None:
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = (json.dumps(payload) + "\n").encode("ascii")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self._cors()
        self.end_headers()
        self.wfile.write(body)

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise ValueError("empty body")
        data = json.loads(raw)
        if not isinstance(data, dict):
            raise ValueError("body must be a JSON object")
        return data

    def do_OPTIONS(self) -> None:  # CORS preflight
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self) -> None:
        service = self.server.service
        url = urlparse(self.path)
        if url.path == "/api/state":
            self._send_json(200, service.state_snapshot())
        elif url.path == "/api/errors":
            params = parse_qs(url.query)
            try:
                start = int(params.get("from", ["0"])[0])
            except ValueError:
                self._send_json(400, {"error": "from must be an integer"})
                return
            self._send_json(200, service.errors_snapshot(start))
        elif url.path == "/api/correlation":
            self._send_json(200, service.correlation_snapshot())
        elif url.path == "/api/recovery":
            snapshot = service.recovery_snapshot()
            if snapshot is None:
                self._send_json(404, {"error": "no recovery report available"})
            else:
                self._send_json(200, snapshot)
        elif url.path == "/api/events":
            self._stream_events(service)
        elif url.path == "/":
            self._send_json(
                200,
                {
                    "endpoints": [
                        "GET /api/state",
                        "GET /api/events",
                        "GET /api/errors?from=N",
                        "GET /api/correlation",
                        "GET /api/recovery",
                        "POST /api/replay",
                        "POST /api/adjudicate",
                    ]
                },
            )
        else:
            self._send_json(404, {"error": f"no such endpoint {url.path}"})

    def _stream_events(self, service: DetectorService) -> None:
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Cache-Control", "no-store")
        self._cors()
        # chunked: the stream has no predetermined length
        self.send_header("Transfer-Encoding", "chunked")
        self.end_headers()
        index = 0
        try:
            while True:
                batch, index, stopping = service.events_since(index, timeout=15.0)
                if batch:
                    payload = "".join(
                        detector.event_to_json(event) + "\n" for event in batch
                    )
                    self._write_chunk(payload.encode("ascii"))
                elif not stopping:
                    self._write_chunk(b"\n")  # keepalive
                if stopping:
                    break
            self.wfile.write(b"0\r\n\r\n")
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _write_chunk(self, data: bytes) -> None:
        self.wfile.write(f"{len(data):x}\r\n".encode("ascii"))
        self.wfile.write(data)
        self.wfile.write(b"\r\n")
        self.wfile.flush()

    def do_POST(self) -> None:
        service = self.server.service
        url = urlparse(self.path)
        if url.path == "/api/replay":
            self._post_replay(service)
        elif url.path == "/api/adjudicate":
            self._post_adjudicate(service)
        else:
            self._send_json(404, {"error": f"no such endpoint {url.path}"})

    def _post_replay(self, service: DetectorService) -> None:
        try:
            body = self._read_body()
        except (ValueError, json.JSONDecodeError) as exc:
            self._send_json(400, {"error": f"malformed body: {exc}"})
            return
        speed = body.get("speed_multiplier", 1.0)
        if not isinstance(speed, (int, float)) or speed <= 0:
            self._send_json(400, {"error": "speed_multiplier must be positive"})
            return
        try:
            if "profile" in body:
                profile = str(body["profile"])
                regime = None
                for candidate in Regime:
                    if candidate.value.lower() == profile.lower():
                        regime = candidate
                if regime is None or regime is Regime.UNKNOWN:
                    self._send_json(400, {"error": f"unknown profile {profile!r}"})
                    return
                seed = int(body.get("seed", 0))
                ticks = int(body.get("ticks", 5000))
                trace = telemetry.generate_trace(regime, ticks, seed)
                meta = {"profile": regime.value, "seed": seed, "ticks": ticks}
            elif "trace_id" in body:
                trace = telemetry.load_trace(str(body["trace_id"]))
                meta = {"trace_id": str(body["trace_id"]), "ticks": len(trace)}
            else:
                self._send_json(400, {"error": "provide profile or trace_id"})
                return
        except (ValueError, TypeError) as exc:
            self._send_json(400, {"error": f"malformed body: {exc}"})
            return
        except (OSError, telemetry.TelemetryError) as exc:
            self._send_json(400, {"error": f"cannot load trace: {exc}"})
            return
        try:
            service.start_replay(trace, meta, float(speed))
        except ReplayActive:
            self._send_json(409, {"error": "a replay is already running"})
            return
        self._send_json(200, {"started": meta})

    def _post_adjudicate(self, service: DetectorService) -> None:
        try:
            body = self._read_body()
        except (ValueError, json.JSONDecodeError) as exc:
            self._send_json(400, {"error": f"malformed body: {exc}"})
            return
        approve = body.get("approve")
        if not isinstance(approve, bool):
            self._send_json(400, {"error": "approve must be a boolean"})
            return
        try:
            state = service.adjudicate(approve)
        except detector.NotAwaitingAdjudication as exc:
            self._send_json(409, {"error": str(exc)})
            return
        self._send_json(200, {"mode": state.mode.value})
