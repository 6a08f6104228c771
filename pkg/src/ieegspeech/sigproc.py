"""Core DSP primitives: windows, STFT/ISTFT, analytic signal, filters, resampling.

Every function here is pure: inputs are never modified and no state is kept
between calls.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as _sig

NORM_FLOOR = 1e-8
NOTCH_Q = 30.0


@dataclass(frozen=True)
class Waveform:
    """Single-channel sampled signal."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {x.shape}")
        if not self.fs > 0:
            raise ValueError(f"sample rate must be positive, got {self.fs}")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains NaN or Inf")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.fs


@dataclass(frozen=True)
class StftGrid:
    """Analysis grid shared by a spectrogram and its inverse."""

    fft_size: int = 1024
    hop: int = 160
    win_len: int = 800
    fs: float = 16000.0

    def __post_init__(self):
        if not (1 <= self.hop <= self.win_len <= self.fft_size):
            raise ValueError(
                f"need 1 <= hop <= win_len <= fft_size, got hop={self.hop}, "
                f"win_len={self.win_len}, fft_size={self.fft_size}")
        if self.fft_size % 2:
            raise ValueError(f"fft_size must be even, got {self.fft_size}")
        if not self.fs > 0:
            raise ValueError(f"sample rate must be positive, got {self.fs}")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples):
        if n_samples < self.win_len:
            return 0
        return (n_samples - self.win_len) // self.hop + 1

    def signal_length(self, n_frames):
        """Samples spanned by ``n_frames`` frames."""
        return (n_frames - 1) * self.hop + self.win_len

    def bin_freqs(self):
        return np.arange(self.n_bins) * self.fs / self.fft_size


@dataclass(frozen=True)
class ComplexSpectrogram:
    values: np.ndarray  # T x F complex
    grid: StftGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2 or v.shape[1] != self.grid.n_bins:
            raise ValueError(
                f"spectrogram shape {v.shape} does not match {self.grid.n_bins} bins")
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self):
        return self.values.shape[0]

    def magnitude(self):
        return MagnitudeSpectrogram(np.abs(self.values), self.grid)

    def phase(self):
        return np.angle(self.values)


@dataclass(frozen=True)
class MagnitudeSpectrogram:
    values: np.ndarray  # T x F, non-negative
    grid: StftGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.grid.n_bins:
            raise ValueError(
                f"spectrogram shape {v.shape} does not match {self.grid.n_bins} bins")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("magnitudes must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class AnalyticSignal:
    values: np.ndarray
    fs: float

    def amplitude(self):
        return np.abs(self.values)

    def phase(self):
        return np.angle(self.values)


def hann_window(length):
    """Periodic Hann window, ``w[n] = 0.5 - 0.5 cos(2 pi n / length)``."""
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def stft(w, grid):
    """One-sided STFT; frame ``t`` covers ``[t*hop, t*hop + win_len)``."""
    x = w.samples
    if len(x) < grid.win_len:
        raise ValueError(
            f"signal of {len(x)} samples is shorter than one window ({grid.win_len})")
    frames = np.lib.stride_tricks.sliding_window_view(x, grid.win_len)[::grid.hop]
    frames = frames * hann_window(grid.win_len)
    values = np.fft.rfft(frames, n=grid.fft_size, axis=1)
    return ComplexSpectrogram(values, grid)


def _overlap_add(frames, hop, out_len):
    n_frames, win_len = frames.shape
    total = (n_frames - 1) * hop + win_len
    if win_len % hop == 0:
        r = win_len // hop
        blocks = np.zeros((n_frames + r - 1, hop))
        parts = frames.reshape(n_frames, r, hop)
        for i in range(r):
            blocks[i:i + n_frames] += parts[:, i]
        out = blocks.reshape(-1)
    else:
        out = np.zeros(total)
        for t in range(n_frames):
            out[t * hop:t * hop + win_len] += frames[t]
    if out_len <= total:
        return out[:out_len]
    return np.concatenate([out, np.zeros(out_len - total)])


def istft(s, out_len=None):
    """Weighted overlap-add inverse of :func:`stft`.

    The synthesis window equals the analysis window and each output sample is
    divided by the summed squared window; samples whose normaliser falls below
    ``1e-8`` are set to zero.
    """
    g = s.grid
    if out_len is None:
        out_len = g.signal_length(s.n_frames) if s.n_frames else 0
    if s.n_frames == 0:
        return Waveform(np.zeros(out_len), g.fs)
    win = hann_window(g.win_len)
    frames = np.fft.irfft(s.values, n=g.fft_size, axis=1)[:, :g.win_len] * win
    num = _overlap_add(frames, g.hop, out_len)
    den = _overlap_add(np.broadcast_to(win * win, frames.shape), g.hop, out_len)
    out = np.zeros(out_len)
    ok = den >= NORM_FLOOR
    out[ok] = num[ok] / den[ok]
    return Waveform(out, g.fs)


def hilbert_analytic(w):
    """Analytic signal via the FFT construction (real part equals the input)."""
    if len(w) < 8:
        raise ValueError(f"analytic signal needs >= 8 samples, got {len(w)}")
    return AnalyticSignal(_sig.hilbert(w.samples), w.fs)


def _check_band(lo, hi, fs):
    if not (0 < lo < hi < fs / 2):
        raise ValueError(f"band [{lo}, {hi}] Hz must satisfy 0 < lo < hi < fs/2 = {fs / 2}")


def _filtfilt(sos, x):
    padlen = 3 * (2 * len(sos) + 1)
    if len(x) <= padlen:
        raise ValueError(f"signal too short for zero-phase filtering ({len(x)} samples)")
    return _sig.sosfiltfilt(sos, x)


def bandpass(w, lo, hi, order=4):
    """Zero-phase Butterworth bandpass (forward-backward SOS cascade)."""
    _check_band(lo, hi, w.fs)
    if order < 1:
        raise ValueError(f"filter order must be >= 1, got {order}")
    sos = _sig.butter(order, [lo, hi], btype="bandpass", fs=w.fs, output="sos")
    return Waveform(_filtfilt(sos, w.samples), w.fs)


def lowpass(w, cutoff, order=4):
    if not 0 < cutoff < w.fs / 2:
        raise ValueError(f"cutoff {cutoff} Hz outside (0, {w.fs / 2})")
    sos = _sig.butter(order, cutoff, btype="lowpass", fs=w.fs, output="sos")
    return Waveform(_filtfilt(sos, w.samples), w.fs)


def notch(w, base, n_harmonics=3, q=NOTCH_Q):
    """Zero-phase cascade of second-order notches at ``base * k``, k = 1..n."""
    if base <= 0 or n_harmonics < 1:
        raise ValueError(f"need base > 0 and n_harmonics >= 1, got {base}, {n_harmonics}")
    if base * n_harmonics >= w.fs / 2:
        raise ValueError(
            f"harmonic {n_harmonics} of {base} Hz is at or above Nyquist ({w.fs / 2} Hz)")
    rows = []
    for k in range(1, n_harmonics + 1):
        b, a = _sig.iirnotch(base * k, q, fs=w.fs)
        rows.append(np.concatenate([b, a]))
    return Waveform(_filtfilt(np.array(rows), w.samples), w.fs)


def _as_fraction(v):
    return Fraction(v).limit_denominator(1_000_000)


def resample(w, target_fs):
    """Polyphase rational resampling with a lowpass at 0.45 * min(fs, target_fs)."""
    if not target_fs > 0:
        raise ValueError(f"target rate must be positive, got {target_fs}")
    if target_fs == w.fs:
        return Waveform(w.samples.copy(), w.fs)
    ratio = _as_fraction(target_fs) / _as_fraction(w.fs)
    up, down = ratio.numerator, ratio.denominator
    half_len = 10 * max(up, down)
    cutoff = 0.45 * min(w.fs, target_fs)
    h = _sig.firwin(2 * half_len + 1, cutoff, window=("kaiser", 5.0), fs=w.fs * up)
    y = _sig.resample_poly(w.samples, up, down, window=h, padtype="line")
    n_out = int(round(len(w) * target_fs / w.fs))
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return Waveform(y, float(target_fs))
