"""Online two-stage detection state machine.

Every window gets a stage-1 reconstruction error, which also feeds the
correlation track. Only windows whose stage-1 error exceeds its threshold
pay for stage 2: an FFT of the same window scored by the spectral
autoencoder. A verdict additionally requires persistence_k consecutive
stage-2 anomalies, at which point the correlation track decides between
ransomware and a known disk encryptor; a disk-encryptor match under
administrator privilege suspends detection and defers to a human, while the
same correlation picture without privilege is treated as ransomware.

The machine is a pure fold: process_window maps (state, window) to a new
state plus emitted events and never mutates its inputs. Terminal modes
absorb; feeding another window there is a caller bug and raises.
"""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import dataclass, field, replace

from . import corrmod, seqae, spectral
from .corrmod import CorrelationPolicy, CumulativePearson, ErrorTemplate, Verdict
from .seqae import SequenceAutoencoder, ThresholdCalibration
from .telemetry import Privilege, Trace, Window, windowize


class DetectorError(Exception):
    pass


class TerminalState(DetectorError):
    pass


class NotAwaitingAdjudication(DetectorError):
    pass


class BadIndex(DetectorError):
    pass


class Mode(enum.Enum):
    MONITORING = "Monitoring"
    STAGE1_SUSPECT = "Stage1Suspect"
    HIGH_COMPUTE_CLEARED = "HighComputeCleared"
    REPEATED_ENCRYPTION = "RepeatedEncryption"
    AWAITING_ADJUDICATION = "AwaitingAdjudication"
    TERMINATED_RANSOMWARE = "TerminatedRansomware"
    RESUMED_DISK_ENCRYPTION = "ResumedDiskEncryption"


TERMINAL_MODES = frozenset({Mode.TERMINATED_RANSOMWARE, Mode.RESUMED_DISK_ENCRYPTION})


class EventKind(enum.Enum):
    STAGE1_ALARM = "Stage1Alarm"
    STAGE2_CLEARED = "Stage2Cleared"
    STAGE2_ALARM = "Stage2Alarm"
    DISK_ENCRYPTION_SUSPECT = "DiskEncryptionSuspect"
    SUSPENDED_AWAITING_USER = "SuspendedAwaitingUser"
    USER_APPROVED = "UserApproved"
    USER_DENIED = "UserDenied"
    RANSOMWARE_VERDICT = "RansomwareVerdict"


@dataclass(frozen=True)
class DetectionEvent:
    window_index: int
    kind: EventKind
    payload: dict


@dataclass(frozen=True)
class TimingConstants:
    """Per-window analysis costs in milliseconds, used for latency accounting."""

    ae1_test_ms: float = 1.321
    fft_ms: float = 0.0003
    ae2_test_ms: float = 1.699
    correlation_ms: float = 0.0001


@dataclass
class PipelineConfig:
    calibration_1: ThresholdCalibration
    calibration_2: ThresholdCalibration
    window_len: int = 100
    stride: int = 1
    n_fft: int = 128
    drop_dc: bool = False
    sampling_interval_ms: int = 10
    persistence_k: int = 5
    policy: CorrelationPolicy = field(default_factory=CorrelationPolicy)
    timing: TimingConstants = field(default_factory=TimingConstants)


@dataclass
class DetectorModels:
    model1: SequenceAutoencoder
    model2: SequenceAutoencoder


@dataclass
class DetectorState:
    mode: Mode
    correlation: CumulativePearson
    stage1_run: int = 0
    stage2_run: int = 0
    first_anomaly_window: int | None = None
    windows_seen: int = 0
    stage2_evaluations: int = 0
    # errors of the most recently processed window; stage 2 is None when it
    # was not evaluated for that window
    last_stage1_error: float | None = None
    last_stage2_error: float | None = None

    @property
    def correlation_track(self) -> corrmod.CorrelationTrack:
        return self.correlation.track


def initial_state(templates: list[ErrorTemplate]) -> DetectorState:
    """Monitoring state with a correlation track against the first template."""
    if not templates:
        raise DetectorError("at least one error template is required")
    return DetectorState(
        mode=Mode.MONITORING,
        correlation=CumulativePearson.for_template(templates[0]),
    )


def _stage2_error(
    window: Window, models: DetectorModels, config: PipelineConfig
) -> float:
    seq = spectral.stage2_sequence(window, n_fft=config.n_fft, drop_dc=config.drop_dc)
    if models.model2.scaler is not None:
        seq = models.model2.scaler.transform(seq)
    return seqae.reconstruction_error(models.model2, seq)


def process_window(
    state: DetectorState,
    window: Window,
    models: DetectorModels,
    templates: list[ErrorTemplate],
    config: PipelineConfig,
    privilege: Privilege = Privilege.USER,
) -> tuple[DetectorState, list[DetectionEvent]]:
    """Advance the detector by one window.

    While awaiting adjudication the workload is suspended, so incoming
    windows are ignored until a decision arrives. Terminal modes raise.
    """
    if state.mode in TERMINAL_MODES:
        raise TerminalState(f"detector is terminal in mode {state.mode.value}")
    if state.mode is Mode.AWAITING_ADJUDICATION:
        return state, []

    idx = state.windows_seen
    err1 = seqae.reconstruction_error(models.model1, window.values)
    correlation = state.correlation.advanced(err1)
    events: list[DetectionEvent] = []

    r_t = config.calibration_1.threshold
    if err1 <= r_t:
        new_state = replace(
            state,
            mode=Mode.MONITORING,
            correlation=correlation,
            stage1_run=0,
            stage2_run=0,
            windows_seen=idx + 1,
            last_stage1_error=err1,
            last_stage2_error=None,
        )
        return new_state, events

    events.append(
        DetectionEvent(idx, EventKind.STAGE1_ALARM, {"error": err1, "threshold": r_t})
    )
    stage1_run = state.stage1_run + 1
    first_anomaly = state.first_anomaly_window if state.first_anomaly_window is not None else idx

    err2 = _stage2_error(window, models, config)
    stage2_evaluations = state.stage2_evaluations + 1
    r2_t = config.calibration_2.threshold

    if err2 <= r2_t:
        events.append(
            DetectionEvent(
                idx, EventKind.STAGE2_CLEARED, {"error": err2, "threshold": r2_t}
            )
        )
        new_state = replace(
            state,
            mode=Mode.HIGH_COMPUTE_CLEARED,
            correlation=correlation,
            stage1_run=stage1_run,
            stage2_run=0,
            first_anomaly_window=first_anomaly,
            windows_seen=idx + 1,
            stage2_evaluations=stage2_evaluations,
            last_stage1_error=err1,
            last_stage2_error=err2,
        )
        return new_state, events

    events.append(
        DetectionEvent(idx, EventKind.STAGE2_ALARM, {"error": err2, "threshold": r2_t})
    )
    stage2_run = state.stage2_run + 1
    mode = Mode.STAGE1_SUSPECT

    if stage2_run >= config.persistence_k:
        verdict = corrmod.classify(correlation.track, config.policy)
        rho = correlation.track.rho[-1] if correlation.track.rho else None
        if verdict is Verdict.DISK_ENCRYPTION:
            events.append(
                DetectionEvent(idx, EventKind.DISK_ENCRYPTION_SUSPECT, {"rho": rho})
            )
            if privilege is Privilege.ADMINISTRATOR:
                events.append(
                    DetectionEvent(idx, EventKind.SUSPENDED_AWAITING_USER, {})
                )
                mode = Mode.AWAITING_ADJUDICATION
            else:
                # encryption-like, matches the template, but unprivileged
                events.append(
                    DetectionEvent(idx, EventKind.RANSOMWARE_VERDICT, {"rho": rho})
                )
                mode = Mode.TERMINATED_RANSOMWARE
        elif verdict is Verdict.RANSOMWARE:
            events.append(
                DetectionEvent(idx, EventKind.RANSOMWARE_VERDICT, {"rho": rho})
            )
            mode = Mode.TERMINATED_RANSOMWARE
        else:
            mode = Mode.REPEATED_ENCRYPTION

    new_state = replace(
        state,
        mode=mode,
        correlation=correlation,
        stage1_run=stage1_run,
        stage2_run=stage2_run,
        first_anomaly_window=first_anomaly,
        windows_seen=idx + 1,
        stage2_evaluations=stage2_evaluations,
        last_stage1_error=err1,
        last_stage2_error=err2,
    )
    return new_state, events


def adjudicate(
    state: DetectorState, approve: bool
) -> tuple[DetectorState, list[DetectionEvent]]:
    """Apply the human decision for a suspended disk-encryption suspect."""
    if state.mode is not Mode.AWAITING_ADJUDICATION:
        raise NotAwaitingAdjudication(f"mode is {state.mode.value}")
    idx = state.windows_seen
    if approve:
        events = [DetectionEvent(idx, EventKind.USER_APPROVED, {})]
        return replace(state, mode=Mode.RESUMED_DISK_ENCRYPTION), events
    events = [
        DetectionEvent(idx, EventKind.USER_DENIED, {}),
        DetectionEvent(idx, EventKind.RANSOMWARE_VERDICT, {"rho": None}),
    ]
    return replace(state, mode=Mode.TERMINATED_RANSOMWARE), events


def detection_latency(
    first_window_ms: float,
    anomaly_window_index: int,
    interval_ms: float,
    timing: TimingConstants,
) -> float:
    """Milliseconds from workload start to the stage-2 verdict on the first
    anomalous window.

    anomaly_window_index is 1-based: index 1 is the window completed at
    first_window_ms. Summation is exactly rounded (fsum) so reported
    latencies are reproducible to the last digit.
    """
    if anomaly_window_index < 1:
        raise BadIndex(f"anomaly_window_index must be >= 1, got {anomaly_window_index}")
    return math.fsum(
        [
            first_window_ms,
            (anomaly_window_index - 1) * interval_ms,
            timing.ae1_test_ms,
            timing.fft_ms,
            timing.ae2_test_ms,
        ]
    )


@dataclass
class LatencyReport:
    windows_processed: int
    mean_window_ms: float
    budget_ms: float
    within_budget: bool
    first_anomaly_window: int | None
    detection_latency_ms: float | None


@dataclass
class OnlineResult:
    events: list[DetectionEvent]
    final_state: DetectorState
    latency: LatencyReport
    # one row per processed window: (window_index, stage-1 error, stage-2
    # error or None when stage 2 never ran for that window)
    errors: list[tuple[int, float, float | None]]


def run_online(
    trace: Trace,
    models: DetectorModels,
    templates: list[ErrorTemplate],
    config: PipelineConfig,
    privilege: Privilege | None = None,
) -> OnlineResult:
    """Fold process_window over the sliding windows of a trace.

    Stops at a terminal verdict. The latency report carries measured mean
    per-window wall time against the sampling budget plus, when an anomaly
    fired, the modeled detection latency of its first anomalous window.
    """
    if models.model1.scaler is None:
        raise DetectorError("model1 carries no scaler; train or load a full manifest")
    privilege = privilege if privilege is not None else trace.privilege
    windows = windowize(
        trace, models.model1.scaler, window_len=config.window_len, stride=config.stride
    )
    state = initial_state(templates)
    events: list[DetectionEvent] = []
    errors: list[tuple[int, float, float | None]] = []
    started = time.perf_counter()
    processed = 0
    for window in windows:
        seen_before = state.windows_seen
        state, new_events = process_window(
            state, window, models, templates, config, privilege
        )
        events.extend(new_events)
        # windows ignored while awaiting adjudication leave no error row
        if state.windows_seen > seen_before:
            errors.append(
                (state.windows_seen - 1, state.last_stage1_error, state.last_stage2_error)
            )
        processed += 1
        if state.mode in TERMINAL_MODES:
            break
    elapsed_ms = (time.perf_counter() - started) * 1000.0

    mean_ms = elapsed_ms / processed if processed else 0.0
    first = state.first_anomaly_window
    latency_ms = None
    if first is not None:
        latency_ms = detection_latency(
            first_window_ms=config.window_len * config.sampling_interval_ms,
            anomaly_window_index=first + 1,
            interval_ms=config.sampling_interval_ms,
            timing=config.timing,
        )
    report = LatencyReport(
        windows_processed=processed,
        mean_window_ms=mean_ms,
        budget_ms=float(config.sampling_interval_ms),
        within_budget=mean_ms < config.sampling_interval_ms,
        first_anomaly_window=first,
        detection_latency_ms=latency_ms,
    )
    return OnlineResult(events=events, final_state=state, latency=report, errors=errors)


# ---------------------------------------------------------------------------
# event log serialization (JSON lines)


def event_to_json(event: DetectionEvent) -> str:
    return json.dumps(
        {
            "window_index": event.window_index,
            "kind": event.kind.value,
            "payload": event.payload,
        },
        sort_keys=True,
    )


def event_from_json(line: str) -> DetectionEvent:
    raw = json.loads(line)
    return DetectionEvent(
        window_index=int(raw["window_index"]),
        kind=EventKind(raw["kind"]),
        payload=dict(raw["payload"]),
    )


def save_event_log(path, events: list[DetectionEvent]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for event in events:
            fh.write(event_to_json(event) + "\n")


def load_event_log(path) -> list[DetectionEvent]:
    events = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(event_from_json(line))
    return events
