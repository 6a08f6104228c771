"""Neural feature extraction on the 50 ms / 10 ms frame grid.

Per frame and channel: db4 band energies and theta-gamma phase-amplitude
coupling; per frame on a reference signal: five prosody proxies (f0, RMS
energy, shimmer, voiced-run duration, phase variability).  Columns are
z-scored with statistics that can be reapplied to held-out data.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as _sig

from .sigproc import Waveform, bandpass, hilbert_analytic, notch
from .wavelet import framed_band_energies

log = logging.getLogger(__name__)

CONSTANT_STD = 1e-12
PROSODY_NAMES = ("pros_f0", "pros_rms", "pros_shimmer", "pros_duration", "pros_phasevar")


@dataclass(frozen=True)
class FrameGrid:
    """Fixed-duration framing at an arbitrary sample rate.

    The hop may be fractional in samples (10 ms at 1024 Hz is 10.24 samples);
    frame ``t`` then starts at ``round(t * hop)`` so that grids at different
    rates stay aligned in time.
    """

    fs: float
    win_ms: float = 50.0
    hop_ms: float = 10.0

    @property
    def win(self):
        return int(round(self.win_ms * self.fs / 1000.0))

    @property
    def hop(self):
        return self.hop_ms * self.fs / 1000.0

    def n_frames(self, n_samples):
        if n_samples < self.win:
            return 0
        return int(np.floor((n_samples - self.win) / self.hop + 1e-9)) + 1

    def starts(self, n_frames):
        return np.floor(np.arange(n_frames) * self.hop + 0.5).astype(np.int64)

    def centers(self, n_frames):
        return self.starts(n_frames) + self.win / 2.0


@dataclass
class PacSeries:
    values: np.ndarray
    theta: tuple
    gamma: tuple
    mean_amplitude: np.ndarray  # per-frame mean gamma envelope over the same span


@dataclass
class ProsodyFrame:
    f0: float
    energy_rms: float
    shimmer: float
    duration: int
    phase_var: float


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool per column

    def to_json(self, names=None):
        return {
            "names": list(names) if names is not None else None,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant": self.constant.astype(bool).tolist(),
        }

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float),
                   np.asarray(d["constant"], bool))


@dataclass
class FeatureMatrix:
    values: np.ndarray  # n_frames x n_features
    names: list
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError(
                f"{self.values.shape} matrix does not match {len(self.names)} column names")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains NaN or Inf")

    @property
    def n_frames(self):
        return self.values.shape[0]


@dataclass
class FeatureConfig:
    theta: tuple = (4.0, 8.0)
    gamma: tuple = (70.0, 170.0)
    pac_context_ms: float = 500.0
    filter_order: int = 4
    wavelet_levels: int = 4
    wavelet_pad: int = 64
    reference_channel: int = 0
    prosody_source: str = "reference"  # or "mean"
    fmin: float = 60.0
    fmax: float = 400.0
    voicing_threshold: float = 0.5


# -- framing ---------------------------------------------------------------

def frame_signal(w, grid):
    """Rows are frames of ``grid.win`` samples starting at ``round(t * hop)``."""
    if grid.fs != w.fs:
        raise ValueError(f"grid rate {grid.fs} Hz does not match signal rate {w.fs} Hz")
    n = grid.n_frames(len(w))
    if n == 0:
        raise ValueError(f"signal of {len(w)} samples shorter than one {grid.win}-sample frame")
    idx = grid.starts(n)[:, None] + np.arange(grid.win)[None, :]
    return w.samples[idx]


# -- phase-amplitude coupling ----------------------------------------------

def _check_pac_bands(theta, gamma, fs):
    g_hi = min(gamma[1], 0.45 * fs)
    if not (0 < theta[0] < theta[1] < gamma[0] < g_hi < fs / 2):
        raise ValueError(
            f"need 0 < theta_lo < theta_hi < gamma_lo < gamma_hi < fs/2, got "
            f"theta={theta}, gamma=({gamma[0]}, {g_hi}) at fs={fs}")
    return (float(theta[0]), float(theta[1])), (float(gamma[0]), float(g_hi))


def pac_components(w, theta=(4.0, 8.0), gamma=(70.0, 170.0), order=4):
    """Theta phase and gamma amplitude envelope of ``w``."""
    theta, gamma = _check_pac_bands(theta, gamma, w.fs)
    phase = hilbert_analytic(bandpass(w, *theta, order=order)).phase()
    amp = hilbert_analytic(bandpass(w, *gamma, order=order)).amplitude()
    return phase, amp, theta, gamma


def _windowed_mean(z, grid, n_frames, context_ms):
    half = context_ms * grid.fs / 2000.0
    c = grid.centers(n_frames)
    lo = np.clip(np.floor(c - half + 0.5).astype(np.int64), 0, len(z))
    hi = np.clip(np.floor(c + half + 0.5).astype(np.int64), 0, len(z))
    cs = np.concatenate([[0], np.cumsum(z)])
    return (cs[hi] - cs[lo]) / np.maximum(hi - lo, 1)


def pac_from_components(phase, amp, grid, n_frames, context_ms=500.0):
    z = amp * np.exp(1j * phase)
    vals = np.abs(_windowed_mean(z, grid, n_frames, context_ms))
    bound = _windowed_mean(amp, grid, n_frames, context_ms)
    return vals, bound


def pac(w, theta=(4.0, 8.0), gamma=(70.0, 170.0), grid=None, context_ms=500.0, order=4):
    """Per-frame ``|E[A_gamma exp(j phi_theta)]|``.

    The expectation is the sample mean over a ``context_ms`` window centred on
    each frame; a single 50 ms frame holds less than one theta cycle.
    """
    grid = grid or FrameGrid(w.fs)
    if grid.fs != w.fs:
        raise ValueError(f"grid rate {grid.fs} Hz does not match signal rate {w.fs} Hz")
    n = grid.n_frames(len(w))
    if n == 0:
        raise ValueError("signal shorter than one frame")
    phase, amp, theta, gamma = pac_components(w, theta, gamma, order)
    vals, bound = pac_from_components(phase, amp, grid, n, context_ms)
    return PacSeries(vals, theta, gamma, bound)


def pac_surrogates(w, theta=(4.0, 8.0), gamma=(70.0, 170.0), grid=None,
                   context_ms=500.0, n_surrogates=200, seed=0, order=4):
    """Mean PAC of the observed signal and of ``n_surrogates`` phase shuffles.

    Each surrogate randomly permutes the theta phase samples against the
    gamma envelope, which keeps both marginals and destroys the coupling.
    """
    grid = grid or FrameGrid(w.fs)
    n = grid.n_frames(len(w))
    phase, amp, _, _ = pac_components(w, theta, gamma, order)
    observed = pac_from_components(phase, amp, grid, n, context_ms)[0].mean()
    rng = np.random.default_rng(seed)
    surr = np.empty(n_surrogates)
    for i in range(n_surrogates):
        surr[i] = pac_from_components(rng.permutation(phase), amp, grid, n, context_ms)[0].mean()
    return observed, surr


# -- prosody proxies -------------------------------------------------------

def normalized_autocorrelation(frames, max_lag):
    """``r[t, tau]`` for tau = 0..max_lag, normalised by the overlap energies."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    raw = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, :max_lag + 1]
    e = np.cumsum(frames ** 2, axis=1)
    total = e[:, -1:]
    lags = np.arange(max_lag + 1)
    head = np.where(lags == 0, total, e[:, np.maximum(n - 1 - lags, 0)])
    head[:, lags >= n] = 0
    prefix = np.concatenate([np.zeros((len(frames), 1)), e], axis=1)
    tail = total - prefix[:, np.minimum(lags, n)]
    den = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, raw / np.where(den > 0, den, 1), 0.0)
    return r


def _parabolic(r, i):
    a, b, c = r[i - 1], r[i], r[i + 1]
    den = a - 2 * b + c
    if den >= 0:
        return float(i), float(b)
    off = 0.5 * (a - c) / den
    return i + off, b - 0.25 * (a - c) * off


def estimate_f0_frames(frames, fs, fmin=60.0, fmax=400.0, threshold=0.5):
    """Normalised-autocorrelation pitch per frame; 0 marks unvoiced.

    Among local maxima of the autocorrelation in the lag range ``[fs/fmax,
    fs/fmin]`` the shortest lag within 90% of the best peak wins, which keeps
    multiples of the period from being chosen.  The lag is refined by
    parabolic interpolation.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = frames.shape[1]
    lag_lo = max(int(np.floor(fs / fmax)), 1)
    lag_hi = min(int(np.ceil(fs / fmin)), n // 2)
    out = np.zeros(len(frames))
    if lag_hi <= lag_lo:
        return out
    r = normalized_autocorrelation(frames, lag_hi + 1)
    for t in range(len(frames)):
        rt = r[t]
        seg = rt[lag_lo:lag_hi + 1]
        left = rt[lag_lo - 1:lag_hi]
        right = rt[lag_lo + 1:lag_hi + 2]
        peaks = np.nonzero((seg > left) & (seg >= right))[0] + lag_lo
        if len(peaks) == 0:
            continue
        best = rt[peaks].max()
        if best < threshold:
            continue
        lag = int(peaks[np.argmax(rt[peaks] >= 0.9 * best)])
        tau, _ = _parabolic(rt, lag)
        out[t] = float(np.clip(fs / tau, fmin, fmax))
    return out


def estimate_f0(frame, fs, fmin=60.0, fmax=400.0, threshold=0.5):
    return float(estimate_f0_frames(frame, fs, fmin, fmax, threshold)[0])


def rms_energy(frame):
    x = np.asarray(frame, dtype=np.float64)
    if x.size == 0:
        raise ValueError("RMS of an empty frame")
    return float(np.sqrt(np.mean(x * x)))


def shimmer(frame, fs, f0):
    """Mean absolute change of per-period peak amplitude over the mean peak."""
    if not f0 > 0:
        raise ValueError(f"shimmer needs a voiced frame (f0 > 0), got f0={f0}")
    x = np.asarray(frame, dtype=np.float64)
    period = fs / f0
    n_periods = int(np.floor(len(x) / period + 1e-9))
    if n_periods < 2:
        return 0.0
    edges = np.floor(np.arange(n_periods + 1) * period + 0.5).astype(int)
    peaks = np.array([x[edges[p]:edges[p + 1]].max() for p in range(n_periods)])
    m = peaks.mean()
    if m <= 0:
        return 0.0
    return float(np.mean(np.abs(np.diff(peaks))) / m)


def phase_variability(frame, edge_fraction=0.125):
    """Std of the instantaneous-frequency fluctuation (radians per sample).

    ``edge_fraction`` of the phase increments is dropped at each end, where
    the FFT-based analytic signal is distorted by the frame boundary.
    """
    x = np.asarray(frame, dtype=np.float64)
    if len(x) < 8:
        raise ValueError(f"phase variability needs >= 8 samples, got {len(x)}")
    a = _sig.hilbert(x)
    d = np.diff(np.unwrap(np.angle(a)))
    e = int(len(d) * edge_fraction)
    d = d[e:len(d) - e]
    return float(np.std(d - d.mean()))


def duration_feature(f0_track):
    """Length of the voiced or unvoiced run containing each frame."""
    v = np.asarray(f0_track) > 0
    out = np.zeros(len(v), dtype=np.int64)
    start = 0
    for i in range(1, len(v) + 1):
        if i == len(v) or v[i] != v[start]:
            out[start:i] = i - start
            start = i
    return out


def prosody_frames(frames, fs, cfg=None):
    """Five prosody proxies per frame (rows of an ``n x 5`` array)."""
    cfg = cfg or FeatureConfig()
    f0 = estimate_f0_frames(frames, fs, cfg.fmin, cfg.fmax, cfg.voicing_threshold)
    dur = duration_feature(f0)
    out = np.zeros((len(frames), 5))
    for t, fr in enumerate(frames):
        out[t, 0] = f0[t]
        out[t, 1] = rms_energy(fr)
        out[t, 2] = shimmer(fr, fs, f0[t]) if f0[t] > 0 else 0.0
        out[t, 3] = dur[t] if f0[t] > 0 else 0
        out[t, 4] = phase_variability(fr)
    return out


# -- normalisation ---------------------------------------------------------

def zscore_fit_transform(m):
    """Fit per-column mean / population std and normalise.

    Columns with std below 1e-12 become all-zero and are flagged constant.
    """
    if m.n_frames < 2:
        raise ValueError("z-scoring needs at least two frames")
    mu = m.values.mean(axis=0)
    sd = m.values.std(axis=0)
    const = sd < CONSTANT_STD
    stats = NormStats(mu, np.where(const, 1.0, sd), const)
    return zscore_transform(m, stats), stats


def zscore_transform(m, stats):
    if len(stats.mean) != m.values.shape[1]:
        raise ValueError(
            f"stats for {len(stats.mean)} columns applied to {m.values.shape[1]}")
    z = (m.values - stats.mean) / stats.std
    z[:, stats.constant] = 0.0
    return FeatureMatrix(z, list(m.names), stats)


# -- assembly --------------------------------------------------------------

def preprocess_recording(rec, band=(0.5, 170.0), order=4, line_hz=50.0, n_harmonics=3):
    """Bandpass then notch every channel (both zero-phase)."""
    out = np.empty_like(rec.channels)
    for i, ch in enumerate(rec.channels):
        w = bandpass(Waveform(ch, rec.fs), band[0], band[1], order=order)
        out[i] = notch(w, line_hz, n_harmonics).samples
    return dataclasses.replace(rec, channels=out)


def feature_names(n_channels, levels=4):
    names = []
    for c in range(n_channels):
        names += [f"ch{c}_dwtE{j}" for j in range(1, levels + 1)] + [f"ch{c}_dwtEa"]
    names += [f"ch{c}_pac" for c in range(n_channels)]
    return names + list(PROSODY_NAMES)


def assemble_features(rec, grid, cfg=None):
    """Raw (unnormalised) multi-modal feature matrix for a recording."""
    cfg = cfg or FeatureConfig()
    if grid.fs != rec.fs:
        raise ValueError(f"grid rate {grid.fs} Hz does not match recording rate {rec.fs} Hz")
    chans = np.asarray(rec.channels, dtype=np.float64)
    n_ch = chans.shape[0]
    n = grid.n_frames(chans.shape[1])
    if n == 0:
        raise ValueError("recording shorter than one frame")
    wav_cols, pac_cols = [], []
    for c in range(n_ch):
        w = Waveform(chans[c], rec.fs)
        fr = frame_signal(w, grid)
        wav_cols.append(framed_band_energies(fr, cfg.wavelet_levels, cfg.wavelet_pad))
        p = pac(w, cfg.theta, cfg.gamma, grid, cfg.pac_context_ms, cfg.filter_order)
        pac_cols.append(p.values[:, None])
    if cfg.prosody_source == "reference":
        if not 0 <= cfg.reference_channel < n_ch:
            raise ValueError(f"reference channel {cfg.reference_channel} out of range")
        ref = chans[cfg.reference_channel]
    elif cfg.prosody_source == "mean":
        ref = chans.mean(axis=0)
    else:
        raise ValueError(f"unknown prosody source {cfg.prosody_source!r}")
    pros = prosody_frames(frame_signal(Waveform(ref, rec.fs), grid), rec.fs, cfg)
    values = np.hstack(wav_cols + pac_cols + [pros])
    return FeatureMatrix(values, feature_names(n_ch, cfg.wavelet_levels))
