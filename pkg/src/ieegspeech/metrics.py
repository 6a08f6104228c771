"""Objective evaluation: spectrogram correlation, cepstral distortion, HNR."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import fft as _fft
from scipy import signal as _sig

from .errors import UndefinedResultError
from .features import FrameGrid, estimate_f0_frames, frame_signal, normalized_autocorrelation
from .sigproc import StftGrid, Waveform

MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)
HNR_RANGE = (-20.0, 40.0)
VAR_EPS = 1e-20


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def _same_shape(a, b):
    a, b = _values(a), _values(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"spectrogram shapes differ or are not 2-D: {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True)
class PearsonResult:
    mean: float  # nan if every bin was excluded
    per_bin: np.ndarray  # nan at excluded bins
    n_excluded: int


def pearson_spectrogram(a, b, flatten=False):
    """Per-bin Pearson r over time, averaged over bins where it is defined.

    Bins with zero variance in either input are excluded and counted.  With
    ``flatten`` a single r over all time-frequency points is returned instead.
    """
    a, b = _same_shape(a, b)
    if a.shape[0] < 2:
        raise ValueError(f"need at least 2 frames, got {a.shape[0]}")
    if flatten:
        a, b = a.reshape(-1, 1), b.reshape(-1, 1)
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    sa = np.sum(da * da, axis=0)
    sb = np.sum(db * db, axis=0)
    ok = (sa > VAR_EPS * a.shape[0]) & (sb > VAR_EPS * a.shape[0])
    r = np.full(a.shape[1], np.nan)
    r[ok] = np.clip(np.sum(da * db, axis=0)[ok] / np.sqrt(sa[ok] * sb[ok]), -1.0, 1.0)
    mean = float(np.mean(r[ok])) if ok.any() else float("nan")
    return PearsonResult(mean, r, int(np.count_nonzero(~ok)))


def mel_cepstrum(logmel, n_coeffs=13):
    """Orthonormal DCT-II coefficients 1..n_coeffs of each log-mel frame."""
    c = _fft.dct(_values(logmel), type=2, norm="ortho", axis=1)
    if n_coeffs >= c.shape[1]:
        raise ValueError(f"n_coeffs={n_coeffs} needs more than {c.shape[1]} mel bins")
    return c[:, 1:n_coeffs + 1]


def mcd(a, b, n_coeffs=13):
    """Mel cepstral distortion in dB, averaged over frames."""
    a, b = _same_shape(a, b)
    if a.shape[0] == 0:
        raise ValueError("no frames to compare")
    d = mel_cepstrum(a, n_coeffs) - mel_cepstrum(b, n_coeffs)
    return float(MCD_CONST * np.mean(np.sqrt(np.sum(d * d, axis=1))))


def _r_at_lag(r, tau):
    """Peak of ``r`` near fractional lag ``tau`` (+-3 %), parabolically refined."""
    lo = max(int(np.floor(tau * 0.97)), 1)
    hi = min(int(np.ceil(tau * 1.03)), len(r) - 2)
    if hi < lo:
        return float(r[min(int(round(tau)), len(r) - 1)])
    k = lo + int(np.argmax(r[lo:hi + 1]))
    y0, y1, y2 = r[k - 1], r[k], r[k + 1]
    den = y0 - 2 * y1 + y2
    if den >= 0:
        return float(y1)
    p = 0.5 * (y0 - y2) / den
    if abs(p) > 1:
        return float(y1)
    return float(y1 - 0.25 * (y0 - y2) * p)


def hnr_frame(r):
    lo, hi = HNR_RANGE
    if r <= 0:
        return lo
    if r >= 1:
        return hi
    return float(np.clip(10.0 * np.log10(r / (1.0 - r)), lo, hi))


def hnr(w: Waveform, f0, grid=None):
    """Mean autocorrelation HNR in dB over voiced frames.

    ``f0`` holds one value per analysis frame (0 = unvoiced); ``grid`` defaults
    to 50 ms frames every 10 ms.
    """
    grid = grid or FrameGrid(w.fs)
    f0 = np.asarray(getattr(f0, "f0", f0), dtype=np.float64)
    frames = frame_signal(w, grid)
    n = min(len(f0), len(frames))
    voiced = np.flatnonzero(f0[:n] > 0)
    if len(voiced) == 0:
        raise UndefinedResultError("HNR is undefined without voiced frames")
    vals = []
    for t in voiced:
        tau = w.fs / f0[t]
        max_lag = min(int(np.ceil(tau * 1.03)) + 1, grid.win // 2)
        r = normalized_autocorrelation(frames[t], max_lag)[0]
        vals.append(hnr_frame(_r_at_lag(r, tau)))
    return float(np.mean(vals))


def waveform_f0(w: Waveform, grid=None):
    grid = grid or FrameGrid(w.fs)
    return estimate_f0_frames(frame_signal(w, grid), w.fs)


def aligned_snr(ref, hyp, max_lag=None):
    """SNR in dB after the best integer lag and least-squares gain.

    Returns ``(snr_db, gain, lag)``; positive lag means ``hyp`` is late.
    """
    x = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    y = np.asarray(getattr(hyp, "samples", hyp), dtype=np.float64)
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    if max_lag is None:
        max_lag = n - 1
    xc = _sig.correlate(y, x, mode="full", method="fft")  # index n-1 is lag 0
    ey = np.concatenate([[0.0], np.cumsum(y * y)])
    best = (-np.inf, 0.0, 0)
    for lag in range(-max_lag, max_lag + 1):
        # overlap: x[i] vs y[i + lag]
        if lag >= 0:
            yy = ey[n] - ey[lag]
            xs = x[:n - lag]
        else:
            yy = ey[n + lag]
            xs = x[-lag:]
        if yy <= 0:
            continue
        xy = xc[n - 1 + lag]
        xx = float(xs @ xs)
        if xx <= 0:
            continue
        err = xx - xy * xy / yy
        snr = np.inf if err <= 0 else 10.0 * np.log10(xx / err)
        if snr > best[0]:
            best = (float(snr), float(xy / yy), lag)
    return best


@dataclass
class EvalReport:
    pearson_mean: float
    pearson_per_bin: list
    mcd_db: float
    hnr_db: float
    n_frames_compared: int
    n_bins_excluded: int = 0
    notes: list = None

    def to_dict(self):
        d = asdict(self)
        d["notes"] = list(self.notes or [])
        for k in ("pearson_mean", "mcd_db", "hnr_db"):
            if d[k] is not None and not np.isfinite(d[k]):
                d[k] = None
        d["pearson_per_bin"] = [None if not np.isfinite(v) else float(v)
                                for v in self.pearson_per_bin]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        nan = float("nan")
        return cls(nan if d["pearson_mean"] is None else d["pearson_mean"],
                   [nan if v is None else v for v in d["pearson_per_bin"]],
                   nan if d["mcd_db"] is None else d["mcd_db"],
                   nan if d["hnr_db"] is None else d["hnr_db"],
                   d["n_frames_compared"], d.get("n_bins_excluded", 0), d.get("notes", []))


def evaluate(ref: Waveform, hyp: Waveform, grid=None, n_mels=80, max_length_ratio=0.10):
    """Compare two waveforms on log-mel correlation, MCD and the hypothesis HNR."""
    from .ihpr import waveform_log_mel

    if ref.fs != hyp.fs:
        raise ValueError(f"sample rates differ: {ref.fs} vs {hyp.fs}")
    la, lb = len(ref), len(hyp)
    if abs(la - lb) > max_length_ratio * max(la, lb):
        raise ValueError(f"lengths differ by more than {max_length_ratio:.0%}: {la} vs {lb}")
    n = min(la, lb)
    ref = Waveform(ref.samples[:n], ref.fs)
    hyp = Waveform(hyp.samples[:n], hyp.fs)
    grid = grid or StftGrid(fs=ref.fs)
    A = waveform_log_mel(ref, grid, n_mels)
    B = waveform_log_mel(hyp, grid, n_mels)
    pr = pearson_spectrogram(A, B)
    notes = []
    if pr.n_excluded:
        notes.append(f"{pr.n_excluded} zero-variance mel bins excluded from the correlation")
    try:
        h = hnr(hyp, waveform_f0(hyp))
    except UndefinedResultError as e:
        h = float("nan")
        notes.append(str(e))
    return EvalReport(pr.mean, pr.per_bin.tolist(), mcd(A, B), h, A.n_frames, pr.n_excluded, notes)
