"""Iterative harmonic phase reconstruction.

The vocoder starts from a harmonic-consistent phase field, then alternates
STFT consistency projection with a small phase-smoothing step applied at
harmonic bins, stopping on a weighted spectral loss.  Griffin-Lim is kept as
the baseline.  Mel analysis and its pseudo-inverse live here too, since the
vocoder consumes mel frames predicted by the network.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .nn.rng import Xoshiro256pp
from .sigproc import (ComplexSpectrogram, MagnitudeSpectrogram, StftGrid, Waveform, istft,
                      stft)

MEL_FLOOR = 1e-5
F0_MIN, F0_MAX = 60.0, 400.0


def wrap(x):
    """Map angles to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)


# -- mel -------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FB_CACHE = {}


def mel_filterbank(n_mels=80, fft_size=1024, fs=16000.0):
    """Triangular filters spaced evenly in mel from 0 to fs/2, rows summing to 1."""
    key = (n_mels, fft_size, float(fs))
    if key in _FB_CACHE:
        return _FB_CACHE[key]
    n_bins = fft_size // 2 + 1
    if not 1 <= n_mels < n_bins:
        raise ValueError(f"need 1 <= n_mels < {n_bins}, got {n_mels}")
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(fs / 2.0), n_mels + 2))
    f = np.arange(n_bins) * fs / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    fb = np.maximum(0.0, np.minimum((f - lo) / (mid - lo), (hi - f) / (hi - mid)))
    sums = fb.sum(axis=1)
    if np.any(sums == 0):
        raise ValueError(f"{n_mels} mel bands are too narrow for fft_size={fft_size}")
    fb = fb / sums[:, None]
    fb.setflags(write=False)
    _FB_CACHE[key] = (fb, np.linalg.pinv(fb))
    return _FB_CACHE[key]


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # T x n_mels, natural-log magnitude mel
    grid: StftGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError(f"log-mel must be a finite 2-D array, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def n_mels(self):
        return self.values.shape[1]

    @property
    def n_frames(self):
        return self.values.shape[0]


def log_mel(mag: MagnitudeSpectrogram, n_mels=80):
    """``ln(fb @ M + floor)`` per frame."""
    fb, _ = mel_filterbank(n_mels, mag.grid.fft_size, mag.grid.fs)
    return MelSpectrogram(np.log(mag.values @ fb.T + MEL_FLOOR), mag.grid)


def waveform_log_mel(w: Waveform, grid=None, n_mels=80):
    grid = grid or StftGrid(fs=w.fs)
    return log_mel(stft(w, grid).magnitude(), n_mels)


def mel_to_linear(mel: MelSpectrogram):
    """Least-squares linear magnitudes whose mel projection matches ``mel``."""
    fb, pinv = mel_filterbank(mel.n_mels, mel.grid.fft_size, mel.grid.fs)
    lin = np.maximum(np.exp(mel.values) - MEL_FLOOR, 0.0)
    return MagnitudeSpectrogram(np.maximum(lin @ pinv.T, 0.0), mel.grid)


# -- pitch and harmonics ---------------------------------------------------

@dataclass(frozen=True)
class F0Track:
    f0: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64)
        v = np.asarray(self.voiced, dtype=bool)
        if f0.shape != v.shape or f0.ndim != 1:
            raise ValueError("f0 and voiced flags must be equal-length vectors")
        if np.any(f0[~v] != 0) or np.any((f0[v] < F0_MIN) | (f0[v] > F0_MAX)):
            raise ValueError(f"voiced f0 must lie in [{F0_MIN}, {F0_MAX}] Hz, unvoiced f0 must be 0")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "voiced", v)

    @classmethod
    def from_f0(cls, f0):
        f0 = np.asarray(f0, dtype=np.float64)
        v = f0 > 0
        return cls(np.where(v, np.clip(f0, F0_MIN, F0_MAX), 0.0), v)

    @classmethod
    def unvoiced(cls, n):
        return cls(np.zeros(n), np.zeros(n, dtype=bool))

    def __len__(self):
        return len(self.f0)


def f0_from_spectrogram(mag: MagnitudeSpectrogram, n_harm=5, ratio=1.5, medfilt=5):
    """Harmonic-sum pitch track on a 1 Hz grid over 60-400 Hz."""
    g = mag.grid
    cand = np.arange(F0_MIN, F0_MAX + 0.5, 1.0)
    h = np.arange(1, n_harm + 1)
    bins = np.rint(cand[:, None] * h[None, :] * g.fft_size / g.fs).astype(int)
    bins = np.minimum(bins, g.n_bins - 1)
    logm = np.log1p(mag.values)
    score = logm[:, bins].sum(axis=2)  # T x candidates
    best = score.max(axis=1)
    voiced = (best > 0) & (best >= ratio * np.median(score, axis=1))
    # centre of the first maximal plateau (coarse bins make the score piecewise constant)
    f0 = np.zeros(len(best))
    for t in np.flatnonzero(voiced):
        top = np.flatnonzero(score[t] == best[t])
        run_end = top[0]
        while run_end + 1 < len(cand) and score[t, run_end + 1] == best[t]:
            run_end += 1
        f0[t] = 0.5 * (cand[top[0]] + cand[run_end])
    if medfilt > 1 and len(f0):
        f0 = ndimage.median_filter(f0, size=medfilt, mode="nearest")
    return F0Track.from_f0(f0)


@dataclass(frozen=True)
class HarmonicSet:
    f0: float
    freqs: np.ndarray
    bins: np.ndarray
    weights: np.ndarray

    @property
    def H(self):
        return len(self.freqs)


def harmonic_set(f0, fs, fft_size, mag_frame, h_max=20):
    if f0 <= 0:
        empty = np.zeros(0)
        return HarmonicSet(0.0, empty, empty.astype(int), empty)
    H = int(min(h_max, np.floor((fs / 2.0 - f0) / f0)))
    freqs = f0 * np.arange(1, H + 1)
    bins = np.rint(freqs * fft_size / fs).astype(int)
    mags = np.asarray(mag_frame, dtype=np.float64)[bins]
    s = mags.sum()
    weights = mags / s if s > 0 else np.full(H, 1.0 / H)
    return HarmonicSet(float(f0), freqs, bins, weights)


@dataclass
class HarmonicIndex:
    """All harmonic bins of a spectrogram as flat (frame, bin) arrays."""

    frames: np.ndarray
    bins: np.ndarray
    freqs: np.ndarray
    weights: np.ndarray
    sets: list = field(default_factory=list)

    @classmethod
    def build(cls, mag, track, h_max=20):
        g = mag.grid
        sets = [harmonic_set(f, g.fs, g.fft_size, mag.values[t], h_max)
                for t, f in enumerate(track.f0)]
        def cat(attr, dtype=float):
            parts = [getattr(s, attr) for s in sets]
            return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)
        frames = np.concatenate([np.full(s.H, t) for t, s in enumerate(sets)]) if sets else np.zeros(0)
        return cls(frames.astype(int), cat("bins", int), cat("freqs"), cat("weights"), sets)

    def __len__(self):
        return len(self.bins)


# -- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class IhprConfig:
    max_iters: int = 100
    tol: float = 1e-4
    lam: float = 0.1
    gamma: float = 0.01
    refine_mode: str = "minimize"
    phase_advance_init: bool = True
    h_max: int = 20
    # (Hz, weight) breakpoints for w(f); None gives 1 up to 4 kHz then a linear
    # fall to 0.5 at Nyquist
    weight_table: tuple = None
    harmonic_gating: bool = True
    lobe_bins: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.lam < 0 or self.gamma < 0 or self.tol < 0:
            raise ValueError("lam, gamma and tol must be non-negative")
        if self.refine_mode not in ("minimize", "maximize"):
            raise ValueError(f"refine_mode must be 'minimize' or 'maximize', got {self.refine_mode!r}")
        if self.h_max < 1 or self.lobe_bins < 0:
            raise ValueError("h_max must be >= 1 and lobe_bins >= 0")


def frequency_weights(grid, table=None):
    f = grid.bin_freqs()
    if table is None:
        nyq = grid.fs / 2.0
        table = ((0.0, 1.0), (min(4000.0, nyq), 1.0), (nyq, 0.5))
    xs, ys = zip(*table)
    return np.interp(f, xs, ys)


def bin_weights(n_bins):
    """Two-sided energy weights of one-sided bins (DC and Nyquist count once)."""
    w = np.full(n_bins, 2.0)
    w[0] = w[-1] = 1.0
    return w


# -- building blocks -------------------------------------------------------

def _uniform_phase(rng, n):
    # pi - 2 pi u with u in [0, 1) lands in (-pi, pi]
    return np.pi - 2.0 * np.pi * rng.uniform(0.0, 1.0, n)


def ihpr_init_phase(mag: MagnitudeSpectrogram, track: F0Track, cfg: IhprConfig, harmonics=None):
    """Harmonic-consistent initial phase.

    Frame 0: harmonic bins get phase 0, all other bins a seeded uniform phase.
    Later frames copy the previous frame.  Harmonic bins either copy too
    (``phase_advance_init`` off) or follow the running phase of their harmonic,
    advanced by ``2 pi hop (f_h(t-1) + f_h(t)) / (2 fs)``; for constant f0 this
    is the previous bin phase plus ``2 pi f_h hop / fs``.  With
    ``lobe_bins = L`` the ``L`` neighbours on each side of a harmonic bin take
    the phase a centred analysis window gives a sinusoid at ``f_h``.
    """
    g = mag.grid
    T, F = mag.values.shape
    if harmonics is None:
        harmonics = HarmonicIndex.build(mag, track, cfg.h_max)
    phi = np.empty((T, F))
    if T == 0:
        return phi
    phi[0] = _uniform_phase(Xoshiro256pp(cfg.seed), F)
    k_c = 2.0 * np.pi * (g.win_len / 2.0) / g.fft_size  # bin k at the frame centre: + k k_c
    offs = np.arange(-cfg.lobe_bins, cfg.lobe_bins + 1)
    psi = None  # running phase of each harmonic at the frame centre
    prev_f = None
    for t in range(T):
        if t > 0:
            phi[t] = phi[t - 1]
        hs = harmonics.sets[t]
        if hs.H == 0:
            psi = prev_f = None
            continue
        if t > 0 and not cfg.phase_advance_init:
            continue
        if psi is None:
            # first voiced frame: harmonic bins keep (t = 0) or copy their phase
            base = np.zeros(hs.H) if t == 0 else phi[t - 1, hs.bins]
            psi = base + k_c * hs.bins
        else:
            n = min(len(psi), hs.H)
            f_prev = np.concatenate([prev_f[:n], hs.freqs[n:]])
            psi_prev = np.concatenate([psi[:n], phi[t - 1, hs.bins[n:]] + k_c * hs.bins[n:]])
            psi = psi_prev + np.pi * g.hop * (f_prev + hs.freqs) / g.fs
        prev_f = hs.freqs
        lobe = hs.bins[:, None] + offs[None, :]
        ok = (lobe >= 0) & (lobe < F)
        vals = psi[:, None] - k_c * lobe
        phi[t, lobe[ok]] = vals[ok]
        phi[t, hs.bins] = psi - k_c * hs.bins
    return wrap(phi)


def consistency_project(mag: MagnitudeSpectrogram, phi, out_len=None):
    """Return ``(S_hat, phi')`` with ``S_hat = stft(istft(M e^{j phi}))``."""
    g = mag.grid
    s = ComplexSpectrogram(mag.values * np.exp(1j * phi), g)
    n = out_len or g.signal_length(mag.n_frames)
    sh = stft(istft(s, n), g).values[:mag.n_frames]
    return sh, np.angle(sh)


def consistency_error(mag, s_hat, relative=False):
    """Two-sided Frobenius norm of ``M - |S_hat|``."""
    m = mag.values if hasattr(mag, "values") else mag
    wb = bin_weights(m.shape[1])
    err = float(np.sqrt(np.sum(wb * (m - np.abs(s_hat)) ** 2)))
    if relative:
        ref = float(np.sqrt(np.sum(wb * m * m)))
        return err / ref if ref > 0 else 0.0
    return err


def adaptive_phase_correction(phi, harmonics: HarmonicIndex, lam, center_offset=0.0,
                              fft_size=None):
    """Pull each harmonic bin's phase toward its lower neighbour.

    ``phi[t, b] -= lam * wrap(psi[t, b] - psi[t, b-1])`` at every harmonic bin,
    where ``psi`` is the phase referred to ``center_offset`` samples into the
    frame (0 means the frame start).  Bins outside ``harmonics`` are untouched.
    """
    out = np.array(phi, dtype=np.float64, copy=True)
    if lam == 0 or len(harmonics) == 0:
        return out
    t, b = harmonics.frames, harmonics.bins
    ok = b >= 1
    t, b = t[ok], b[ok]
    d = out[t, b] - out[t, b - 1]
    if center_offset:
        d = d + 2.0 * np.pi * center_offset / fft_size
    out[t, b] -= lam * wrap(d)
    return out


def perceptual_loss(m_target, m_recon, phi_k, phi_prev, harmonics: HarmonicIndex, gamma, wf):
    """Weighted spectral error plus ``gamma`` times squared harmonic phase steps."""
    mt = getattr(m_target, "values", m_target)
    mr = getattr(m_recon, "values", m_recon)
    spec = float(np.sum(wf[None, :] * (mt - mr) ** 2))
    if gamma == 0 or len(harmonics) == 0:
        return spec
    t, b = harmonics.frames, harmonics.bins
    d = wrap(phi_k[t, b] - phi_prev[t, b])
    return spec + gamma * float(np.sum(d * d))


def refine_objective(mag, s_hat, phi, harmonics: HarmonicIndex, mode):
    """Harmonic-bin objective named by ``mode`` (reported, not optimised separately)."""
    if len(harmonics) == 0:
        return 0.0
    t, b = harmonics.frames, harmonics.bins
    if mode == "minimize":
        r = mag.values[t, b] * np.exp(1j * phi[t, b]) - s_hat[t, b]
        return float(np.sum(harmonics.weights * np.abs(r) ** 2))
    return float(np.sum(np.cos(phi[t, b] - np.angle(s_hat[t, b]))))


# -- vocoders --------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    perceptual_loss: float
    consistency_error: float
    refine_objective: float


@dataclass
class VocodeResult:
    waveform: Waveform
    log: list
    phase: np.ndarray
    f0: F0Track
    converged: bool

    def write_log(self, path):
        write_iteration_log(path, self.log)


def write_iteration_log(path, log):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "perceptual_loss", "consistency_error"])
        for r in log:
            w.writerow([r.iteration, repr(float(r.perceptual_loss)), repr(float(r.consistency_error))])


def _as_magnitude(spec):
    if isinstance(spec, MelSpectrogram):
        return mel_to_linear(spec)
    if isinstance(spec, MagnitudeSpectrogram):
        return spec
    raise TypeError(f"expected MelSpectrogram or MagnitudeSpectrogram, got {type(spec).__name__}")


def ihpr_vocode(spec, track: F0Track = None, cfg: IhprConfig = IhprConfig(), init_phase=None):
    mag = _as_magnitude(spec)
    if mag.n_frames == 0:
        raise ValueError("cannot vocode an empty spectrogram")
    g = mag.grid
    if not cfg.harmonic_gating:
        track = F0Track.unvoiced(mag.n_frames)
    elif track is None:
        track = f0_from_spectrogram(mag)
    if len(track) != mag.n_frames:
        raise ValueError(f"f0 track has {len(track)} frames, spectrogram {mag.n_frames}")
    harm = HarmonicIndex.build(mag, track, cfg.h_max)
    wf = frequency_weights(g, cfg.weight_table)
    phi = ihpr_init_phase(mag, track, cfg, harm) if init_phase is None else np.array(init_phase)
    log, prev_loss, converged = [], None, False
    for k in range(1, cfg.max_iters + 1):
        s_hat, proj = consistency_project(mag, phi)
        new = adaptive_phase_correction(proj, harm, cfg.lam, g.win_len / 2.0, g.fft_size)
        loss = perceptual_loss(mag, np.abs(s_hat), new, phi, harm, cfg.gamma, wf)
        log.append(IterationRecord(k, loss, consistency_error(mag, s_hat, relative=True),
                                   refine_objective(mag, s_hat, new, harm, cfg.refine_mode)))
        phi = new
        if prev_loss is not None:
            change = abs(prev_loss - loss) / max(prev_loss, 1e-300)
            if change < cfg.tol:
                converged = True
                break
        prev_loss = loss
    out = istft(ComplexSpectrogram(mag.values * np.exp(1j * phi), g))
    return VocodeResult(out, log, phi, track, converged)


def random_phase(shape, seed=0):
    return np.random.default_rng(seed).uniform(-np.pi, np.pi, shape)


def griffin_lim(spec, iters=30, seed=0, init_phase=None, errors=None):
    """Classic Griffin-Lim.  ``errors``, if a list, receives the relative consistency
    error of each projection."""
    mag = _as_magnitude(spec)
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    phi = random_phase(mag.values.shape, seed) if init_phase is None else np.array(init_phase)
    for _ in range(iters):
        s_hat, phi = consistency_project(mag, phi)
        if errors is not None:
            errors.append(consistency_error(mag, s_hat, relative=True))
    return istft(ComplexSpectrogram(mag.values * np.exp(1j * phi), mag.grid))
