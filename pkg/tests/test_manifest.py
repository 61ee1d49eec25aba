"""Pipeline training, persistence, and the run manifest."""

import json
import shutil

import numpy as np
import pytest

from hpcguard import manifest, seqae, spectral, telemetry
from hpcguard.manifest import (
    ManifestError,
    MissingArtifact,
    MissingDiskTrace,
    TrainSettings,
    load_manifest,
    load_pipeline,
    save_pipeline,
    train_pipeline,
)
from hpcguard.telemetry import Regime


TINY_SETTINGS = dict(
    hidden_dim=8, epochs=3, learning_rate=2e-2, batch_size=16, train_stride=13
)


def tiny_corpus():
    baselines = [
        telemetry.generate_trace(Regime.BASELINE, 700, seed) for seed in (401, 402)
    ]
    disk = telemetry.generate_trace(Regime.DISK_ENCRYPTION, 400, 409)
    return baselines, disk


# ---------------------------------------------------------------------------
# training contract


def test_training_requires_a_baseline_corpus():
    _, disk = tiny_corpus()
    with pytest.raises(ManifestError):
        train_pipeline([], disk, TrainSettings(**TINY_SETTINGS))


def test_training_requires_a_disk_trace():
    baselines, _ = tiny_corpus()
    with pytest.raises(MissingDiskTrace):
        train_pipeline(baselines, None, TrainSettings(**TINY_SETTINGS))


def test_training_is_deterministic_and_round_trips(tiny_pipeline):
    # retrain on the identical corpus: weights must match the fixture's
    # saved-and-reloaded pipeline bit for bit
    models, templates, config, run = tiny_pipeline
    baselines, disk = tiny_corpus()
    retrained = train_pipeline(baselines, disk, TrainSettings(**TINY_SETTINGS))

    for name in seqae._WEIGHT_NAMES:
        assert np.array_equal(
            retrained.model1.weights[name], models.model1.weights[name]
        )
        assert np.array_equal(
            retrained.model2.weights[name], models.model2.weights[name]
        )
    assert retrained.config.calibration_1 == config.calibration_1
    assert retrained.config.calibration_2 == config.calibration_2
    assert np.array_equal(retrained.template.values, templates[0].values)


def test_disk_trace_is_excluded_from_training(tiny_pipeline):
    # swapping the template trace must not move the models or thresholds
    models, _, config, _ = tiny_pipeline
    baselines, _ = tiny_corpus()
    other_disk = telemetry.generate_trace(Regime.DISK_ENCRYPTION, 420, 777)
    retrained = train_pipeline(baselines, other_disk, TrainSettings(**TINY_SETTINGS))

    for name in seqae._WEIGHT_NAMES:
        assert np.array_equal(
            retrained.model1.weights[name], models.model1.weights[name]
        )
    assert retrained.config.calibration_1 == config.calibration_1
    assert len(retrained.template) != len(models.model1.weights["enc_wx"])


def test_template_label_marks_the_workload(tiny_pipeline):
    _, templates, _, _ = tiny_pipeline
    assert templates[0].label == "disk-encryption"


# ---------------------------------------------------------------------------
# manifest round trip


def test_manifest_references_resolve(tiny_manifest_dir):
    run = load_manifest(str(tiny_manifest_dir))
    assert run.directory == str(tiny_manifest_dir)
    assert run.model1_path.endswith("model1.npz")
    assert run.config.window_len == 100
    assert run.config.stride == 1
    assert run.config.policy.m_consecutive == 100


def test_manifest_json_is_stable_and_ascii(tiny_manifest_dir):
    raw = (tiny_manifest_dir / "manifest.json").read_bytes()
    assert raw.endswith(b"\n")
    text = raw.decode("ascii")
    data = json.loads(text)
    assert json.dumps(data, indent=2, sort_keys=True) + "\n" == text
    assert set(data["files"]) == {"model1", "model2", "template"}
    assert 0.0 <= data["training"]["frac_below_threshold_1"] <= 1.0


def test_loaded_config_matches_saved_values(tiny_manifest_dir, tiny_pipeline):
    _, _, config, run = tiny_pipeline
    data = json.loads((tiny_manifest_dir / "manifest.json").read_text())
    assert config.calibration_1.threshold == data["calibration_1"]["threshold"]
    assert config.calibration_2.mean_error == data["calibration_2"]["mean_error"]
    assert config.n_fft == data["config"]["n_fft"]
    assert config.drop_dc == data["config"]["drop_dc"]
    assert config.timing.ae1_test_ms == data["config"]["timing"]["ae1_test_ms"]
    assert run.seed == data["seed"]


def test_scaler_agrees_across_artifacts(tiny_pipeline):
    # the scaler rides twice: inside model1.npz and in manifest.json
    models, _, _, run = tiny_pipeline
    assert np.array_equal(run.scaler.mean, models.model1.scaler.mean)
    assert np.array_equal(run.scaler.std, models.model1.scaler.std)


def test_missing_artifact_is_reported_by_path(tiny_manifest_dir, tmp_path):
    broken = tmp_path / "broken"
    shutil.copytree(tiny_manifest_dir, broken)
    (broken / "model2.npz").unlink()
    with pytest.raises(MissingArtifact) as exc_info:
        load_pipeline(str(broken))
    assert "model2.npz" in str(exc_info.value)


def test_missing_manifest_file(tmp_path):
    with pytest.raises(MissingArtifact):
        load_manifest(str(tmp_path / "nowhere"))


def test_unsupported_format_version(tiny_manifest_dir, tmp_path):
    clone = tmp_path / "clone"
    shutil.copytree(tiny_manifest_dir, clone)
    data = json.loads((clone / "manifest.json").read_text())
    data["format_version"] = 999
    (clone / "manifest.json").write_text(json.dumps(data))
    with pytest.raises(ManifestError):
        load_manifest(str(clone))


def test_save_accepts_a_fresh_directory(tmp_path, tiny_pipeline):
    baselines, disk = tiny_corpus()
    trained = train_pipeline(baselines, disk, TrainSettings(**TINY_SETTINGS))
    out = tmp_path / "nested" / "run"
    path = save_pipeline(str(out), trained)
    assert path.endswith("manifest.json")
    models, templates, config, _ = load_pipeline(str(out))
    assert config.calibration_1 == trained.config.calibration_1
    assert len(templates) == 1


# ---------------------------------------------------------------------------
# shipped pipeline quality


def test_shipped_training_errors_sit_below_threshold(default_pipeline):
    # rescoring the training corpus with the shipped models must land at
    # least 99% of windows under each calibrated threshold, and reproduce
    # the recorded calibration moments exactly
    models, _, config, run = default_pipeline
    settings = run.raw["training"]
    baselines, _ = manifest.default_training_traces()

    windows = []
    for trace in baselines:
        windows.extend(
            telemetry.windowize(
                trace,
                run.scaler,
                window_len=settings["window_len"],
                stride=settings["train_stride"],
            )
        )
    x1 = np.stack([w.values for w in windows])
    errors1 = seqae.reconstruction_errors(models.model1, x1)
    frac1 = float(np.mean(errors1 < config.calibration_1.threshold))
    assert frac1 >= 0.99

    scaler2 = models.model2.scaler
    x2 = np.stack(
        [
            scaler2.transform(
                spectral.stage2_sequence(w, n_fft=config.n_fft, drop_dc=config.drop_dc)
            )
            for w in windows
        ]
    )
    errors2 = seqae.reconstruction_errors(models.model2, x2)
    frac2 = float(np.mean(errors2 < config.calibration_2.threshold))
    assert frac2 >= 0.99

    recal1 = seqae.calibrate_threshold(errors1)
    recal2 = seqae.calibrate_threshold(errors2)
    assert recal1 == config.calibration_1
    assert recal2 == config.calibration_2

    assert frac1 == settings["frac_below_threshold_1"]
    assert frac2 == settings["frac_below_threshold_2"]


def test_shipped_manifest_shape(default_pipeline):
    models, templates, config, run = default_pipeline
    assert config.window_len == 100
    assert config.n_fft == 128
    assert config.drop_dc is True
    assert config.persistence_k == 5
    assert len(templates[0]) == 1501
    assert models.model1.hidden_dim == run.raw["training"]["hidden_dim"]
