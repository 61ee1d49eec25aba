"""Streaming anomaly detection over hardware performance counter telemetry."""

from .telemetry import (
    CHANNELS,
    CounterSample,
    Privilege,
    Regime,
    Scaler,
    Trace,
    Window,
    fit_scaler,
    generate_trace,
    load_trace,
    parse_perf_interval_output,
    save_trace,
    windowize,
)
from .seqae import (
    SequenceAutoencoder,
    ThresholdCalibration,
    TrainConfig,
    calibrate_threshold,
    init_model,
    load_model,
    reconstruct,
    reconstruction_error,
    save_model,
    score_stream,
    train,
)
from .spectral import Spectrum, fft, fft_window, spectrum_as_sequence, stage2_sequence
from .corrmod import (
    CorrelationPolicy,
    CorrelationTrack,
    ErrorTemplate,
    Verdict,
    build_template,
    classify,
    cumulative_pearson,
    load_template,
    privilege_check,
    save_template,
)
from .detector import (
    DetectionEvent,
    DetectorModels,
    DetectorState,
    EventKind,
    Mode,
    PipelineConfig,
    TimingConstants,
    adjudicate,
    detection_latency,
    process_window,
    run_online,
)
from .recoverysim import (
    BackupLedger,
    FileState,
    RecoveryReport,
    SimFile,
    record_open,
    purge_expired,
    recover,
    simulate_attack,
)
from .manifest import (
    RunManifest,
    TrainedPipeline,
    TrainSettings,
    load_manifest,
    load_pipeline,
    save_pipeline,
    train_pipeline,
)

__version__ = "0.1.0"
