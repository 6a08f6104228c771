"""Daubechies-4 discrete wavelet transform with periodic boundaries.

With periodic extension and dyadic lengths the transform is orthonormal, so
the per-scale energies sum exactly to the signal energy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Daubechies (1988) 8-tap orthogonal scaling filter with 4 vanishing moments.
DB4_LOWPASS = np.array([
    0.23037781330885523,
    0.71484657055254153,
    0.63088076792959036,
    -0.02798376941698385,
    -0.18703481171888114,
    0.03084138183598697,
    0.03288301166698295,
    -0.01059740178499728,
])
# quadrature mirror: g[n] = (-1)^n h[L-1-n]
DB4_HIGHPASS = DB4_LOWPASS[::-1] * np.array([1, -1, 1, -1, 1, -1, 1, -1])

BOUNDARY = "periodic"


@dataclass
class WaveletDecomposition:
    detail_coeffs: list  # finest first: level 1 .. J
    approx_coeffs: np.ndarray
    levels: int
    boundary: str = BOUNDARY
    lengths: list = field(default_factory=list)  # input length at each level


@dataclass
class BandEnergies:
    energies: np.ndarray  # J details then the approximation
    labels: list
    bands_hz: list  # (lo, hi) per entry, or None when fs is unknown


def _periodic_index(n, length):
    k = np.arange((length + 1) // 2)[:, None]
    return (2 * k + np.arange(8)[None, :]) % n


def _even(x):
    # odd lengths are extended by repeating the last sample
    return np.append(x, x[-1]) if len(x) % 2 else x


def _step(x):
    x = _even(np.asarray(x, dtype=np.float64))
    idx = _periodic_index(len(x), len(x))
    seg = x[idx]
    return seg @ DB4_LOWPASS, seg @ DB4_HIGHPASS


def dwt_step_db4(signal):
    """One analysis level: returns ``(approx, detail)``, each half length."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or len(x) < 8:
        raise ValueError(f"db4 step needs a 1-D signal of >= 8 samples, got shape {x.shape}")
    return _step(x)


def idwt_step_db4(approx, detail, n=None):
    """Inverse of :func:`dwt_step_db4` (adjoint of the orthonormal analysis)."""
    a = np.asarray(approx, dtype=np.float64)
    d = np.asarray(detail, dtype=np.float64)
    if a.shape != d.shape:
        raise ValueError(f"approx/detail length mismatch: {a.shape} vs {d.shape}")
    m = 2 * len(a)
    idx = _periodic_index(m, m)
    out = np.zeros(m)
    contrib = a[:, None] * DB4_LOWPASS[None, :] + d[:, None] * DB4_HIGHPASS[None, :]
    np.add.at(out, idx.ravel(), contrib.ravel())
    return out if n is None else out[:n]


def wavedec(signal, levels):
    x = np.asarray(signal, dtype=np.float64)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if x.ndim != 1 or len(x) < 2 ** levels or len(x) < 8:
        raise ValueError(
            f"signal of length {len(x)} too short for {levels} db4 levels")
    details, lengths = [], []
    a = x
    for _ in range(levels):
        lengths.append(len(a))
        a, d = _step(a)
        details.append(d)
    return WaveletDecomposition(details, a, levels, BOUNDARY, lengths)


def waverec(dec):
    a = dec.approx_coeffs
    for level in range(dec.levels - 1, -1, -1):
        a = idwt_step_db4(a, dec.detail_coeffs[level], dec.lengths[level])
    return a


def band_energies(dec, fs=None):
    """Sum of squared coefficients per detail level plus the approximation.

    Detail level ``j`` of a signal sampled at ``fs`` nominally covers
    ``[fs / 2**(j+1), fs / 2**j]`` Hz; the approximation covers the rest
    down to DC.
    """
    e = [float(np.sum(d * d)) for d in dec.detail_coeffs]
    e.append(float(np.sum(dec.approx_coeffs ** 2)))
    labels = [f"D{j}" for j in range(1, dec.levels + 1)] + [f"A{dec.levels}"]
    if fs is None:
        bands = [None] * len(e)
    else:
        bands = [(fs / 2 ** (j + 1), fs / 2 ** j) for j in range(1, dec.levels + 1)]
        bands.append((0.0, fs / 2 ** (dec.levels + 1)))
    return BandEnergies(np.array(e), labels, bands)


def framed_band_energies(frames, levels=4, pad_to=64):
    """Band energies for each row of ``frames`` (zero-padded to ``pad_to``).

    Vectorised equivalent of ``band_energies(wavedec(frame, levels))`` per row.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n, width = frames.shape
    if width > pad_to:
        raise ValueError(f"frame width {width} exceeds pad length {pad_to}")
    if pad_to < 2 ** levels or pad_to % 2 ** levels:
        raise ValueError(f"pad length {pad_to} not divisible by 2**{levels}")
    a = np.zeros((n, pad_to))
    a[:, :width] = frames
    out = np.empty((n, levels + 1))
    for j in range(levels):
        m = a.shape[1]
        seg = a[:, _periodic_index(m, m)]
        d = seg @ DB4_HIGHPASS
        a = seg @ DB4_LOWPASS
        out[:, j] = np.sum(d * d, axis=1)
    out[:, levels] = np.sum(a * a, axis=1)
    return out
