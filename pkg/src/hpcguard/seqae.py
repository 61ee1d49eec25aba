"""Gated-recurrent sequence autoencoder for window reconstruction.

A single recurrent encoder layer folds a window into its final hidden state,
the context; a decoder layer unrolls over the window length with the context
as its input at every step (no teacher forcing, so training and inference
traverse the identical path); a per-step linear projection maps hidden
states back to channel space. Reconstruction error is the mean of squared
entrywise differences, which keeps scores comparable across window lengths.

Training is plain stochastic gradient descent over hand-derived
backpropagation-through-time gradients, with global-norm gradient clipping.
Everything is seeded and float64, so a fixed seed reproduces parameters
bit-for-bit.

Anomaly thresholds follow the three-sigma rule over training reconstruction
errors: threshold = mean + 3 * population std. Thresholds are strictly
hardware- and workload-specific and must be calibrated locally;
REFERENCE_DEPLOYMENT_THRESHOLDS records magnitudes seen on one historical
deployment purely as documentation.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .telemetry import Scaler, Window

# Observed once on a single reference machine; never reuse, always recalibrate.
REFERENCE_DEPLOYMENT_THRESHOLDS = {
    "time_domain": 5.38e-6,
    "spectral": 0.002829,
}

MODEL_FORMAT_VERSION = 1

_WEIGHT_NAMES = (
    "enc_wx",
    "enc_wh",
    "enc_uh",
    "enc_b",
    "dec_wx",
    "dec_wh",
    "dec_uh",
    "dec_b",
    "out_w",
    "out_b",
)


class AutoencoderError(Exception):
    pass


class InsufficientSamples(AutoencoderError):
    pass


class EmptyTrainingSet(InsufficientSamples):
    pass


class ShapeMismatch(AutoencoderError, ValueError):
    pass


class DivergedTraining(AutoencoderError):
    pass


class ModelFormatError(AutoencoderError):
    pass


@dataclass
class TrainConfig:
    hidden_dim: int = 32
    epochs: int = 50
    learning_rate: float = 1e-2
    batch_size: int = 32
    clip_norm: float = 1.0
    seed: int = 0


@dataclass
class ThresholdCalibration:
    """Three-sigma threshold over a calibration error sample."""

    mean_error: float
    std_error: float
    threshold: float


@dataclass(eq=False)
class SequenceAutoencoder:
    input_dim: int
    hidden_dim: int
    seq_len: int
    weights: dict[str, np.ndarray]
    scaler: Scaler | None = None
    train_config: TrainConfig = field(default_factory=TrainConfig)


def init_model(
    input_dim: int,
    seq_len: int,
    hidden_dim: int = 32,
    seed: int = 0,
) -> SequenceAutoencoder:
    """Fresh model, reproducible per seed.

    Input and output projections start small and uniform; recurrent
    matrices start orthogonal with gain above one, which keeps hidden
    dynamics alive across a long unroll instead of collapsing to a fixed
    point within a few steps.
    """
    rng = np.random.default_rng(seed)
    h, d = hidden_dim, input_dim
    bound = 1.0 / math.sqrt(h)

    def uniform(shape):
        return rng.uniform(-bound, bound, size=shape)

    def orthogonal(gain: float = 1.2):
        a = rng.normal(size=(h, h))
        q, r = np.linalg.qr(a)
        return gain * q * np.sign(np.diag(r))

    weights = {
        "enc_wx": uniform((3 * h, d)),
        "enc_wh": np.concatenate([orthogonal(), orthogonal()]),
        "enc_uh": orthogonal(),
        "enc_b": np.zeros(3 * h),
        "dec_wx": uniform((3 * h, h)),
        "dec_wh": np.concatenate([orthogonal(), orthogonal()]),
        "dec_uh": orthogonal(),
        "dec_b": np.zeros(3 * h),
        "out_w": uniform((d, h)),
        "out_b": np.zeros(d),
    }
    return SequenceAutoencoder(
        input_dim=d, hidden_dim=h, seq_len=seq_len, weights=weights
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _forward_batch(weights: dict[str, np.ndarray], x: np.ndarray):
    """Batched forward pass keeping the caches backprop needs.

    x has shape (batch, seq_len, input_dim). Returns (y, caches).
    """
    w = weights
    h_dim = w["enc_uh"].shape[0]
    b, t_len, _ = x.shape

    h = np.zeros((b, h_dim))
    xw = x @ w["enc_wx"].T + w["enc_b"]
    enc_cache = []
    for t in range(t_len):
        azr = xw[:, t, : 2 * h_dim] + h @ w["enc_wh"].T
        z = _sigmoid(azr[:, :h_dim])
        r = _sigmoid(azr[:, h_dim:])
        rh = r * h
        ac = xw[:, t, 2 * h_dim :] + rh @ w["enc_uh"].T
        c = np.tanh(ac)
        h_new = (1.0 - z) * h + z * c
        enc_cache.append((h, z, r, c))
        h = h_new

    ctx = h
    ax = ctx @ w["dec_wx"].T + w["dec_b"]  # context input, constant per step
    dec_cache = []
    hs = np.empty((b, t_len, h_dim))
    for t in range(t_len):
        azr = ax[:, : 2 * h_dim] + h @ w["dec_wh"].T
        z = _sigmoid(azr[:, :h_dim])
        r = _sigmoid(azr[:, h_dim:])
        rh = r * h
        ac = ax[:, 2 * h_dim :] + rh @ w["dec_uh"].T
        c = np.tanh(ac)
        h_new = (1.0 - z) * h + z * c
        dec_cache.append((h, z, r, c))
        h = h_new
        hs[:, t] = h

    y = hs @ w["out_w"].T + w["out_b"]
    return y, (x, enc_cache, dec_cache, hs, ctx)


def loss_and_gradients(model: SequenceAutoencoder, x: np.ndarray):
    """Mean squared reconstruction loss over a batch plus its gradients.

    Gradients come from backpropagation through time over both recurrent
    layers; the decoder input path and recurrent path share the previous
    hidden state, so its gradient accumulates from both.
    """
    w = model.weights
    h_dim = model.hidden_dim
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    b, t_len, d = x.shape

    y, (_, enc_cache, dec_cache, hs, ctx) = _forward_batch(w, x)
    diff = y - x
    size = diff.size
    loss = float(np.mean(diff * diff))

    grads = {name: np.zeros_like(arr) for name, arr in w.items()}
    dy = 2.0 * diff / size

    grads["out_w"] += np.einsum("btd,bth->dh", dy, hs)
    grads["out_b"] += dy.sum(axis=(0, 1))
    dhs = dy @ w["out_w"]

    # decoder, newest step first; the context feeds every step, so its
    # gradient accumulates across the whole unroll
    dh = np.zeros((b, h_dim))
    dctx = np.zeros((b, h_dim))
    for t in range(t_len - 1, -1, -1):
        hp, z, r, c = dec_cache[t]
        dh = dh + dhs[:, t]
        dz = dh * (c - hp)
        dc = dh * z
        dhp = dh * (1.0 - z)

        dac = dc * (1.0 - c * c)
        grads["dec_b"][2 * h_dim :] += dac.sum(axis=0)
        grads["dec_wx"][2 * h_dim :] += dac.T @ ctx
        grads["dec_uh"] += dac.T @ (r * hp)
        drh = dac @ w["dec_uh"]
        dr = drh * hp
        dhp = dhp + drh * r
        dctx += dac @ w["dec_wx"][2 * h_dim :]

        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dazr = np.concatenate([daz, dar], axis=1)
        grads["dec_b"][: 2 * h_dim] += dazr.sum(axis=0)
        grads["dec_wx"][: 2 * h_dim] += dazr.T @ ctx
        grads["dec_wh"] += dazr.T @ hp
        dctx += dazr @ w["dec_wx"][: 2 * h_dim]
        dhp = dhp + dazr @ w["dec_wh"]

        dh = dhp

    # decoder initial state is the context as well
    dh = dh + dctx

    # encoder, gradient arrives only through its final hidden state
    dxw = np.zeros((b, t_len, 3 * h_dim))
    for t in range(t_len - 1, -1, -1):
        hp, z, r, c = enc_cache[t]
        dz = dh * (c - hp)
        dc = dh * z
        dhp = dh * (1.0 - z)

        dac = dc * (1.0 - c * c)
        grads["enc_uh"] += dac.T @ (r * hp)
        drh = dac @ w["enc_uh"]
        dr = drh * hp
        dhp = dhp + drh * r

        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dazr = np.concatenate([daz, dar], axis=1)
        grads["enc_wh"] += dazr.T @ hp
        dhp = dhp + dazr @ w["enc_wh"]

        dxw[:, t, : 2 * h_dim] = dazr
        dxw[:, t, 2 * h_dim :] = dac
        dh = dhp

    flat = dxw.reshape(b * t_len, 3 * h_dim)
    grads["enc_wx"] += flat.T @ x.reshape(b * t_len, d)
    grads["enc_b"] += flat.sum(axis=0)

    return loss, grads


def _mean_loss(model: SequenceAutoencoder, x_all: np.ndarray, chunk: int = 256) -> float:
    total = 0.0
    for start in range(0, x_all.shape[0], chunk):
        part = x_all[start : start + chunk]
        y, _ = _forward_batch(model.weights, part)
        diff = y - part
        total += float(np.sum(diff * diff))
    return total / x_all.size


def _as_batch(windows) -> np.ndarray:
    arrays = []
    for item in windows:
        values = item.values if isinstance(item, Window) else item
        arrays.append(np.asarray(values, dtype=np.float64))
    if not arrays:
        raise EmptyTrainingSet("no windows to train on")
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ShapeMismatch(f"windows disagree on shape: {sorted(shapes)}")
    return np.stack(arrays)


def train(windows, config: TrainConfig | None = None) -> SequenceAutoencoder:
    """Fit an autoencoder on scaled windows with seeded, deterministic SGD.

    Raises DivergedTraining when the loss goes non-finite or ends above its
    starting point.
    """
    config = config or TrainConfig()
    x_all = _as_batch(windows)
    n, t_len, d = x_all.shape

    model = init_model(d, t_len, config.hidden_dim, config.seed)
    model.train_config = config
    rng = np.random.default_rng(config.seed + 1)

    initial = _mean_loss(model, x_all)
    for epoch in range(config.epochs):
        # step decay; a fixed late rate just bounces around the SGD noise floor
        frac = epoch / config.epochs
        lr = config.learning_rate * (1.0 if frac < 0.5 else 0.4 if frac < 0.8 else 0.16)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = x_all[order[start : start + config.batch_size]]
            loss, grads = loss_and_gradients(model, batch)
            if not math.isfinite(loss):
                raise DivergedTraining(f"non-finite training loss {loss}")
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = config.clip_norm / norm if norm > config.clip_norm else 1.0
            for name, grad in grads.items():
                model.weights[name] -= lr * scale * grad
    final = _mean_loss(model, x_all)
    if not math.isfinite(final) or final > initial:
        raise DivergedTraining(
            f"training ended at {final:.3e}, started at {initial:.3e}"
        )
    return model


@njit(cache=True)
def _forward_single(
    x, enc_wx, enc_wh, enc_uh, enc_b, dec_wx, dec_wh, dec_uh, dec_b, out_w, out_b
):  # pragma: no cover - exercised through reconstruct()
    t_len = x.shape[0]
    d = x.shape[1]
    h_dim = enc_uh.shape[0]
    h = np.zeros(h_dim)
    for t in range(t_len):
        ax = np.dot(enc_wx, x[t]) + enc_b
        azr = ax[: 2 * h_dim] + np.dot(enc_wh, h)
        z = 1.0 / (1.0 + np.exp(-azr[:h_dim]))
        r = 1.0 / (1.0 + np.exp(-azr[h_dim:]))
        ac = ax[2 * h_dim :] + np.dot(enc_uh, r * h)
        c = np.tanh(ac)
        h = (1.0 - z) * h + z * c
    y = np.empty((t_len, d))
    ax = np.dot(dec_wx, h) + dec_b  # context input, constant per step
    for t in range(t_len):
        azr = ax[: 2 * h_dim] + np.dot(dec_wh, h)
        z = 1.0 / (1.0 + np.exp(-azr[:h_dim]))
        r = 1.0 / (1.0 + np.exp(-azr[h_dim:]))
        ac = ax[2 * h_dim :] + np.dot(dec_uh, r * h)
        c = np.tanh(ac)
        h = (1.0 - z) * h + z * c
        y[t] = np.dot(out_w, h) + out_b
    return y


def _kernel_args(model: SequenceAutoencoder):
    w = model.weights
    return tuple(np.ascontiguousarray(w[name]) for name in _WEIGHT_NAMES)


def reconstruct(model: SequenceAutoencoder, values: np.ndarray) -> np.ndarray:
    """Run one window (seq_len, input_dim) through encode and decode."""
    x = np.ascontiguousarray(values, dtype=np.float64)
    if x.shape != (model.seq_len, model.input_dim):
        raise ShapeMismatch(
            f"expected shape {(model.seq_len, model.input_dim)}, got {x.shape}"
        )
    return _forward_single(x, *_kernel_args(model))


def reconstruction_error(model: SequenceAutoencoder, values: np.ndarray) -> float:
    """Mean of squared entrywise differences between input and reconstruction."""
    x = np.asarray(values, dtype=np.float64)
    diff = reconstruct(model, x) - x
    return float(np.mean(diff * diff))


def reconstruction_errors(model: SequenceAutoencoder, windows) -> np.ndarray:
    """Score many windows; order of results matches the input order."""
    args = _kernel_args(model)
    out = np.empty(len(windows))
    for i, item in enumerate(windows):
        values = item.values if isinstance(item, Window) else item
        x = np.ascontiguousarray(values, dtype=np.float64)
        if x.shape != (model.seq_len, model.input_dim):
            raise ShapeMismatch(
                f"window {i}: expected {(model.seq_len, model.input_dim)}, got {x.shape}"
            )
        diff = _forward_single(x, *args) - x
        out[i] = np.mean(diff * diff)
    return out


def calibrate_threshold(errors) -> ThresholdCalibration:
    """Three-sigma rule: threshold = mean + 3 * population std."""
    arr = np.asarray(errors, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InsufficientSamples("calibration needs at least two error samples")
    mean = float(arr.mean())
    std = float(arr.std())  # population std
    return ThresholdCalibration(mean_error=mean, std_error=std, threshold=mean + 3.0 * std)


def score_stream(
    model: SequenceAutoencoder, calibration: ThresholdCalibration, windows
) -> list[tuple[int, float, bool]]:
    """Score windows in order against the calibrated threshold.

    Returns (window_index, error, is_anomalous) triples; a window sitting
    exactly at the threshold is not anomalous (strict inequality).
    """
    errors = reconstruction_errors(model, windows)
    return [
        (i, float(e), bool(e > calibration.threshold))
        for i, e in enumerate(errors)
    ]


# ---------------------------------------------------------------------------
# persistence


def save_model(path, model: SequenceAutoencoder) -> None:
    """Serialize dims, training config, scaler, and exact float64 weights."""
    payload = {name: model.weights[name] for name in _WEIGHT_NAMES}
    cfg = model.train_config
    payload["header"] = np.array(
        [
            MODEL_FORMAT_VERSION,
            model.input_dim,
            model.hidden_dim,
            model.seq_len,
            cfg.epochs,
            cfg.batch_size,
            cfg.seed,
        ],
        dtype=np.int64,
    )
    payload["train_floats"] = np.array([cfg.learning_rate, cfg.clip_norm])
    if model.scaler is not None:
        payload["scaler_mean"] = model.scaler.mean
        payload["scaler_std"] = model.scaler.std
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_model(path) -> SequenceAutoencoder:
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()))
    if "header" not in data:
        raise ModelFormatError("missing model header")
    header = data["header"]
    if int(header[0]) != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {int(header[0])}")
    lr, clip = (float(v) for v in data["train_floats"])
    config = TrainConfig(
        hidden_dim=int(header[2]),
        epochs=int(header[4]),
        learning_rate=lr,
        batch_size=int(header[5]),
        clip_norm=clip,
        seed=int(header[6]),
    )
    scaler = None
    if "scaler_mean" in data:
        scaler = Scaler(mean=data["scaler_mean"], std=data["scaler_std"])
    weights = {name: np.array(data[name]) for name in _WEIGHT_NAMES}
    return SequenceAutoencoder(
        input_dim=int(header[1]),
        hidden_dim=int(header[2]),
        seq_len=int(header[3]),
        weights=weights,
        scaler=scaler,
        train_config=config,
    )
