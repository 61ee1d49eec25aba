"""Pipeline training and the run manifest that ties artifacts together.

A trained pipeline is four things: the two autoencoders, the disk-encryptor
error template, and the calibrated thresholds wrapped in a PipelineConfig.
train_pipeline produces them from baseline traces plus one disk-encryption
trace (used only for the template, never for training); save_pipeline lays
them out in a directory under a manifest.json that records every scalar
needed to rebuild the exact detector, and load_pipeline restores the whole
set ready for run_online.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import corrmod, seqae, spectral, telemetry
from .corrmod import CorrelationPolicy, ErrorTemplate
from .detector import DetectorModels, PipelineConfig, TimingConstants
from .seqae import SequenceAutoencoder, ThresholdCalibration, TrainConfig
from .telemetry import Regime, Scaler, Trace

MANIFEST_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


class ManifestError(Exception):
    pass


class MissingArtifact(ManifestError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"manifest references missing file: {path}")


class MissingDiskTrace(ManifestError):
    """Training requires a disk-encryption trace to build the template."""


@dataclass
class TrainSettings:
    """Knobs for the offline phase.

    The sequence models train harder than their library defaults: the
    baseline family needs the larger hidden state and the longer schedule
    to generalize across seeds rather than memorize phases. Training
    windows are strided to keep the set small; deployment always slides
    by one.
    """

    window_len: int = 100
    train_stride: int = 7
    n_fft: int = 128
    drop_dc: bool = True
    hidden_dim: int = 48
    epochs: int = 150
    learning_rate: float = 5e-2
    batch_size: int = 48
    seed: int = 0
    persistence_k: int = 5
    policy: CorrelationPolicy = field(default_factory=CorrelationPolicy)
    timing: TimingConstants = field(default_factory=TimingConstants)


@dataclass
class TrainedPipeline:
    model1: SequenceAutoencoder
    model2: SequenceAutoencoder
    scaler: Scaler
    template: ErrorTemplate
    config: PipelineConfig
    settings: TrainSettings
    train_frac_below_1: float
    train_frac_below_2: float

    @property
    def models(self) -> DetectorModels:
        return DetectorModels(model1=self.model1, model2=self.model2)


def train_pipeline(
    baseline_traces: list[Trace],
    disk_trace: Trace,
    settings: TrainSettings | None = None,
) -> TrainedPipeline:
    """Offline phase: fit scaler, train both models, calibrate, template.

    The disk-encryption trace contributes only the correlation template;
    its windows never enter either training set.
    """
    settings = settings or TrainSettings()
    if not baseline_traces:
        raise ManifestError("at least one baseline trace is required")
    if disk_trace is None:
        raise MissingDiskTrace("a disk-encryption trace is required for the template")

    scaler = telemetry.fit_scaler(baseline_traces)
    windows = []
    for trace in baseline_traces:
        windows.extend(
            telemetry.windowize(
                trace,
                scaler,
                window_len=settings.window_len,
                stride=settings.train_stride,
            )
        )
    if not windows:
        raise ManifestError("baseline traces yield no training windows")
    x1 = np.stack([w.values for w in windows])

    cfg1 = TrainConfig(
        hidden_dim=settings.hidden_dim,
        epochs=settings.epochs,
        learning_rate=settings.learning_rate,
        batch_size=settings.batch_size,
        seed=settings.seed,
    )
    model1 = seqae.train(x1, cfg1)
    model1.scaler = scaler
    errors1 = seqae.reconstruction_errors(model1, x1)
    calibration_1 = seqae.calibrate_threshold(errors1)

    spectra = np.stack(
        [
            spectral.stage2_sequence(w, n_fft=settings.n_fft, drop_dc=settings.drop_dc)
            for w in windows
        ]
    )
    scaler2 = Scaler.fit_rows(np.concatenate(list(spectra), axis=0))
    x2 = np.stack([scaler2.transform(s) for s in spectra])
    cfg2 = TrainConfig(
        hidden_dim=settings.hidden_dim,
        epochs=settings.epochs,
        learning_rate=settings.learning_rate,
        batch_size=settings.batch_size,
        seed=settings.seed + 1,
    )
    model2 = seqae.train(x2, cfg2)
    model2.scaler = scaler2
    errors2 = seqae.reconstruction_errors(model2, x2)
    calibration_2 = seqae.calibrate_threshold(errors2)

    template = corrmod.build_template(
        model1,
        scaler,
        disk_trace,
        window_len=settings.window_len,
        stride=1,
        label="disk-encryption",
    )

    config = PipelineConfig(
        calibration_1=calibration_1,
        calibration_2=calibration_2,
        window_len=settings.window_len,
        stride=1,
        n_fft=settings.n_fft,
        drop_dc=settings.drop_dc,
        persistence_k=settings.persistence_k,
        policy=settings.policy,
        timing=settings.timing,
    )
    return TrainedPipeline(
        model1=model1,
        model2=model2,
        scaler=scaler,
        template=template,
        config=config,
        settings=settings,
        train_frac_below_1=float(np.mean(errors1 < calibration_1.threshold)),
        train_frac_below_2=float(np.mean(errors2 < calibration_2.threshold)),
    )


def _calibration_to_dict(cal: ThresholdCalibration) -> dict:
    return {
        "mean_error": cal.mean_error,
        "std_error": cal.std_error,
        "threshold": cal.threshold,
    }


def _calibration_from_dict(data: dict) -> ThresholdCalibration:
    return ThresholdCalibration(
        mean_error=float(data["mean_error"]),
        std_error=float(data["std_error"]),
        threshold=float(data["threshold"]),
    )


def save_pipeline(directory: str, trained: TrainedPipeline) -> str:
    """Write model files, template, and manifest.json; returns manifest path."""
    os.makedirs(directory, exist_ok=True)
    seqae.save_model(os.path.join(directory, "model1.npz"), trained.model1)
    seqae.save_model(os.path.join(directory, "model2.npz"), trained.model2)
    corrmod.save_template(os.path.join(directory, "template.csv"), trained.template)
    config = trained.config
    settings = trained.settings
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "seed": settings.seed,
        "files": {
            "model1": "model1.npz",
            "model2": "model2.npz",
            "template": "template.csv",
        },
        "scaler": {
            "mean": [float(v) for v in trained.scaler.mean],
            "std": [float(v) for v in trained.scaler.std],
        },
        "calibration_1": _calibration_to_dict(config.calibration_1),
        "calibration_2": _calibration_to_dict(config.calibration_2),
        "config": {
            "window_len": config.window_len,
            "stride": config.stride,
            "n_fft": config.n_fft,
            "drop_dc": config.drop_dc,
            "sampling_interval_ms": config.sampling_interval_ms,
            "persistence_k": config.persistence_k,
            "policy": {
                "rho_high": config.policy.rho_high,
                "rho_low": config.policy.rho_low,
                "m_consecutive": config.policy.m_consecutive,
            },
            "timing": {
                "ae1_test_ms": config.timing.ae1_test_ms,
                "fft_ms": config.timing.fft_ms,
                "ae2_test_ms": config.timing.ae2_test_ms,
                "correlation_ms": config.timing.correlation_ms,
            },
        },
        "training": {
            "window_len": settings.window_len,
            "train_stride": settings.train_stride,
            "hidden_dim": settings.hidden_dim,
            "epochs": settings.epochs,
            "learning_rate": settings.learning_rate,
            "batch_size": settings.batch_size,
            "frac_below_threshold_1": trained.train_frac_below_1,
            "frac_below_threshold_2": trained.train_frac_below_2,
        },
    }
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass
class RunManifest:
    """Parsed manifest.json plus the directory it lives in."""

    directory: str
    seed: int
    model1_path: str
    model2_path: str
    template_path: str
    scaler: Scaler
    config: PipelineConfig
    raw: dict


def load_manifest(path: str) -> RunManifest:
    """Parse manifest.json and check that every referenced file exists."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(path):
        raise MissingArtifact(path)
    with open(path, encoding="ascii") as fh:
        raw = json.load(fh)
    if raw.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ManifestError(f"unsupported manifest format: {raw.get('format_version')}")
    directory = os.path.dirname(os.path.abspath(path))
    files = {}
    for key in ("model1", "model2", "template"):
        rel = raw["files"][key]
        full = os.path.join(directory, rel)
        if not os.path.exists(full):
            raise MissingArtifact(full)
        files[key] = full
    cfg = raw["config"]
    config = PipelineConfig(
        calibration_1=_calibration_from_dict(raw["calibration_1"]),
        calibration_2=_calibration_from_dict(raw["calibration_2"]),
        window_len=int(cfg["window_len"]),
        stride=int(cfg["stride"]),
        n_fft=int(cfg["n_fft"]),
        drop_dc=bool(cfg["drop_dc"]),
        sampling_interval_ms=int(cfg["sampling_interval_ms"]),
        persistence_k=int(cfg["persistence_k"]),
        policy=CorrelationPolicy(
            rho_high=float(cfg["policy"]["rho_high"]),
            rho_low=float(cfg["policy"]["rho_low"]),
            m_consecutive=int(cfg["policy"]["m_consecutive"]),
        ),
        timing=TimingConstants(
            ae1_test_ms=float(cfg["timing"]["ae1_test_ms"]),
            fft_ms=float(cfg["timing"]["fft_ms"]),
            ae2_test_ms=float(cfg["timing"]["ae2_test_ms"]),
            correlation_ms=float(cfg["timing"]["correlation_ms"]),
        ),
    )
    scaler = Scaler(
        mean=np.array(raw["scaler"]["mean"], dtype=np.float64),
        std=np.array(raw["scaler"]["std"], dtype=np.float64),
    )
    return RunManifest(
        directory=directory,
        seed=int(raw["seed"]),
        model1_path=files["model1"],
        model2_path=files["model2"],
        template_path=files["template"],
        scaler=scaler,
        config=config,
        raw=raw,
    )


def load_pipeline(
    path: str,
) -> tuple[DetectorModels, list[ErrorTemplate], PipelineConfig, RunManifest]:
    """Load everything run_online needs from a manifest path or directory."""
    run = load_manifest(path)
    model1 = seqae.load_model(run.model1_path)
    model2 = seqae.load_model(run.model2_path)
    template = corrmod.load_template(run.template_path)
    return DetectorModels(model1=model1, model2=model2), [template], run.config, run


def default_training_traces(
    n_traces: int = 8,
    ticks: int = 2500,
    base_seed: int = 1000,
    template_seed: int = 1010,
    template_ticks: int = 1600,
) -> tuple[list[Trace], Trace]:
    """Synthesized training corpus: baseline traces plus the template trace."""
    baselines = [
        telemetry.generate_trace(Regime.BASELINE, ticks, base_seed + i)
        for i in range(n_traces)
    ]
    disk = telemetry.generate_trace(Regime.DISK_ENCRYPTION, template_ticks, template_seed)
    return baselines, disk
