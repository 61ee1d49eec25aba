"""Shared fixtures.

Two trained pipelines back the suite: a tiny one trained in seconds, used
wherever a test only exercises plumbing (manifests, CLI wiring, the HTTP
service), and the shipped default manifest, used wherever a test asserts
actual detection quality. The tiny pipeline makes no accuracy promises.
"""

from pathlib import Path

import pytest

from hpcguard import manifest, telemetry
from hpcguard.telemetry import Regime

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_MANIFEST_DIR = REPO_ROOT / "assets" / "default-manifest"


@pytest.fixture(scope="session")
def tiny_manifest_dir(tmp_path_factory) -> Path:
    baselines = [
        telemetry.generate_trace(Regime.BASELINE, 700, seed) for seed in (401, 402)
    ]
    disk = telemetry.generate_trace(Regime.DISK_ENCRYPTION, 400, 409)
    settings = manifest.TrainSettings(
        hidden_dim=8,
        epochs=3,
        learning_rate=2e-2,
        batch_size=16,
        train_stride=13,
    )
    trained = manifest.train_pipeline(baselines, disk, settings)
    out = tmp_path_factory.mktemp("tiny-manifest")
    manifest.save_pipeline(str(out), trained)
    return out


@pytest.fixture(scope="session")
def tiny_pipeline(tiny_manifest_dir):
    models, templates, config, run = manifest.load_pipeline(str(tiny_manifest_dir))
    return models, templates, config, run


@pytest.fixture(scope="session")
def default_manifest_dir() -> Path:
    if not (DEFAULT_MANIFEST_DIR / "manifest.json").exists():
        pytest.fail(
            "shipped manifest missing; regenerate with "
            "`hpcguard train --out-dir assets/default-manifest`"
        )
    return DEFAULT_MANIFEST_DIR


@pytest.fixture(scope="session")
def default_pipeline(default_manifest_dir):
    models, templates, config, run = manifest.load_pipeline(str(default_manifest_dir))
    return models, templates, config, run
