"""Frequency-domain view of counter windows.

Windows are zero-padded to a power-of-two length and transformed with an
iterative radix-2 decimation-in-time FFT. Only one-sided magnitudes are kept
downstream: repeated encryption shows up as stable harmonic peaks, while
aperiodic load spreads across bins and stays near the learned envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .telemetry import N_CHANNELS, Window


class SpectralError(Exception):
    pass


class NotPowerOfTwo(SpectralError):
    def __init__(self, n_fft: int):
        super().__init__(f"n_fft must be a power of two, got {n_fft}")


class WindowTooLong(SpectralError):
    def __init__(self, length: int, n_fft: int):
        super().__init__(f"window of {length} rows does not fit n_fft={n_fft}")


@dataclass(eq=False)
class Spectrum:
    """One-sided magnitude spectrum per channel: (n_fft // 2 + 1, 5)."""

    start_tick: int
    n_fft: int
    amplitudes: np.ndarray


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def fft(signal: np.ndarray) -> np.ndarray:
    """Radix-2 decimation-in-time FFT of a power-of-two-length signal.

    Iterative Cooley-Tukey: bit-reversal reorder, then log2(n) butterfly
    stages. Accepts real or complex input, returns complex128.
    """
    x = np.asarray(signal, dtype=np.complex128).copy()
    n = x.shape[0]
    if not _is_power_of_two(n):
        raise NotPowerOfTwo(n)
    if n == 1:
        return x
    levels = n.bit_length() - 1
    # bit-reversal permutation
    rev = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        rev[i] = (rev[i >> 1] >> 1) | ((i & 1) << (levels - 1))
    x = x[rev]
    half = 1
    while half < n:
        twiddle = np.exp(-1j * np.pi * np.arange(half) / half)
        step = half * 2
        for start in range(0, n, step):
            upper = x[start : start + half].copy()
            lower = x[start + half : start + step] * twiddle
            x[start : start + half] = upper + lower
            x[start + half : start + step] = upper - lower
        half = step
    return x


def fft_window(window: Window, n_fft: int = 128) -> Spectrum:
    """Zero-pad each channel of a window to n_fft and keep one-sided magnitudes.

    The DC bin is retained; bin k of channel c sits at amplitudes[k, c].
    """
    if not _is_power_of_two(n_fft):
        raise NotPowerOfTwo(n_fft)
    values = np.asarray(window.values, dtype=np.float64)
    length = values.shape[0]
    if length > n_fft:
        raise WindowTooLong(length, n_fft)
    n_bins = n_fft // 2 + 1
    amplitudes = np.zeros((n_bins, values.shape[1]), dtype=np.float64)
    padded = np.zeros(n_fft, dtype=np.float64)
    for c in range(values.shape[1]):
        padded[:] = 0.0
        padded[:length] = values[:, c]
        amplitudes[:, c] = np.abs(fft(padded))[:n_bins]
    return Spectrum(start_tick=window.start_tick, n_fft=n_fft, amplitudes=amplitudes)


def spectrum_as_sequence(spectrum: Spectrum, drop_dc: bool = False) -> np.ndarray:
    """Reinterpret a spectrum as a sequence over bins for the stage-2 model.

    Rows are frequency bins (lowest first), columns are the five channels,
    exactly the layout of window values, so the same autoencoder machinery
    applies unchanged. drop_dc removes bin 0.
    """
    amplitudes = np.asarray(spectrum.amplitudes, dtype=np.float64)
    if amplitudes.ndim != 2 or amplitudes.shape[1] != N_CHANNELS:
        raise SpectralError(f"expected (_, {N_CHANNELS}) amplitudes, got {amplitudes.shape}")
    seq = amplitudes[1:] if drop_dc else amplitudes
    return seq.copy()


def stage2_sequence(window: Window, n_fft: int = 128, drop_dc: bool = False) -> np.ndarray:
    """Canonical stage-2 model input for one scaled window.

    With drop_dc the per-channel mean is removed before the transform and
    the now-empty bin-0 row is dropped. Dropping the bin alone would not
    be enough: zero-padding smears any nonzero mean across neighboring
    bins (rectangular-pulse leakage), so an offset-free spectral view
    needs the DC component gone from the signal itself.
    """
    if drop_dc:
        values = np.asarray(window.values, dtype=np.float64)
        window = Window(
            start_tick=window.start_tick, values=values - values.mean(axis=0)
        )
    spectrum = fft_window(window, n_fft=n_fft)
    return spectrum_as_sequence(spectrum, drop_dc=drop_dc)
