"""Deterministic synthetic speech/iEEG sessions.

The audio is a voiced source with a wandering f0 shaped by per-word formant
sets, plus aspiration noise, gated into word-like bursts.  Each neural channel
carries 1/f background, a ~6 Hz theta rhythm, 50 Hz line noise and a 70-170 Hz
gamma component whose amplitude follows one audio sub-band envelope and is
modulated by the theta phase.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as _sig

from .dataio import MultichannelRecording, Session, align_by_markers
from .features import FrameGrid
from .sigproc import StftGrid, Waveform, stft

START_MARKER = "start"
WORD_MARKER = "word"

# (F1, F2, F3) Hz of four vowel-like resonance sets
VOWELS = ((730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240), (530, 1840, 2480))


@dataclass(frozen=True)
class SyntheticConfig:
    duration: float = 20.0
    channels: int = 8
    fs_neural: float = 1024.0
    fs_audio: float = 16000.0
    pre_roll: float = 1.0
    post_roll: float = 0.5
    f0_range: tuple = (100.0, 250.0)
    line_hz: float = 50.0
    theta_hz: float = 6.0
    pac_depth: float = 0.8
    gamma_gain: float = 4.0

    def __post_init__(self):
        if self.duration <= 1.0 or self.channels < 1:
            raise ValueError("duration must exceed 1 s and channels must be >= 1")
        lo, hi = self.f0_range
        if not 60.0 <= lo < hi <= 400.0:
            raise ValueError(f"f0_range must lie inside [60, 400] Hz, got {self.f0_range}")
        if self.pre_roll * self.fs_neural != int(self.pre_roll * self.fs_neural):
            raise ValueError("pre_roll must be a whole number of neural samples")

    def to_dict(self):
        d = asdict(self)
        d["f0_range"] = list(self.f0_range)
        return d


@dataclass
class SyntheticSession:
    recording: MultichannelRecording  # unaligned, with pre/post roll
    audio: Waveform
    truth: dict

    def aligned(self):
        return align_by_markers(self.recording, self.audio, START_MARKER,
                                {"seed": self.truth["seed"], "subject": "synthetic"})


def _smooth_noise(rng, n, fs, cutoff):
    """Unit-variance lowpass noise."""
    x = rng.standard_normal(n)
    sos = _sig.butter(2, cutoff, fs=fs, output="sos")
    y = _sig.sosfiltfilt(sos, x)
    return y / (np.std(y) + 1e-12)


def _pink(rng, n):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    y = np.fft.irfft(spec / np.sqrt(f), n)
    return y / np.std(y)


def _words(rng, duration):
    """Word spans (start, end) in seconds."""
    spans, t = [], 0.15
    while True:
        length = rng.uniform(0.25, 0.6)
        if t + length > duration - 0.1:
            break
        spans.append((t, t + length))
        t += length + rng.uniform(0.1, 0.3)
    return spans


def _envelope(spans, amps, n, fs, ramp=0.03):
    t = np.arange(n) / fs
    env = np.zeros(n)
    for (a, b), g in zip(spans, amps):
        up = np.clip((t - a) / ramp, 0, 1)
        down = np.clip((b - t) / ramp, 0, 1)
        env = np.maximum(env, g * np.minimum(up, down))
    return env


def _resonator(x, freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    a = [1.0, -2.0 * r * np.cos(2 * np.pi * freq / fs), r * r]
    return _sig.lfilter([1.0 - r], a, x)


def _audio(cfg, rng, spans):
    fs = cfg.fs_audio
    n = int(round(cfg.duration * fs))
    t = np.arange(n) / fs
    lo, hi = cfg.f0_range
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    drift = _smooth_noise(rng, n, fs, 0.8)
    f0 = np.clip(mid + half * (0.6 * np.sin(2 * np.pi * 0.23 * t + rng.uniform(0, 6.3))
                               + 0.35 * drift), lo, hi)
    phase = 2 * np.pi * np.cumsum(f0) / fs
    n_harm = int(7000 // lo)
    source = np.zeros(n)
    for h in range(1, n_harm + 1):
        source += np.where(h * f0 < 7000.0, np.cos(h * phase), 0.0) / h

    amps = rng.uniform(0.5, 1.0, len(spans))
    vowel = rng.integers(0, len(VOWELS), len(spans))
    env = _envelope(spans, amps, n, fs)
    voiced = np.zeros(n)
    for v, formants in enumerate(VOWELS):
        sel = [s for s, k in zip(spans, vowel) if k == v]
        gate = _envelope(sel, np.ones(len(sel)), n, fs)
        if not gate.any():
            continue
        shaped = sum(_resonator(source, f, 80.0 + 0.05 * f, fs) * g
                     for f, g in zip(formants, (1.0, 0.6, 0.3)))
        voiced += gate * shaped
    voiced /= np.max(np.abs(voiced)) + 1e-12
    breath = _resonator(rng.standard_normal(n), 3500.0, 2000.0, fs)
    breath /= np.std(breath)
    y = env * (voiced + 0.03 * breath)
    y = 0.8 * y / (np.max(np.abs(y)) + 1e-12)
    y += 1e-3 * rng.standard_normal(n)  # -60 dB floor
    return Waveform(y, fs), f0, env, vowel, amps


def subband_envelopes(audio, n_bands, out_fs, n_out):
    """Log-compressed audio energy in ``n_bands`` mel-spaced groups, resampled
    to ``n_out`` samples at ``out_fs`` and scaled to [0, 1]."""
    from .ihpr import log_mel

    grid = StftGrid(fs=audio.fs)
    L = log_mel(stft(audio, grid).magnitude()).values
    groups = np.array_split(np.arange(L.shape[1]), n_bands)
    e = np.stack([np.log(np.mean(np.exp(L[:, g]), axis=1) + 1e-4) for g in groups])
    e = (e - e.min(axis=1, keepdims=True)) / (np.ptp(e, axis=1, keepdims=True) + 1e-12)
    centres = (np.arange(L.shape[0]) * grid.hop + grid.win_len / 2) / audio.fs
    t_out = np.arange(n_out) / out_fs
    return np.stack([np.interp(t_out, centres, row) for row in e])


def _neural(cfg, rng, audio):
    fs = cfg.fs_neural
    C = cfg.channels
    n_pre = int(round(cfg.pre_roll * fs))
    n_core = int(round(cfg.duration * fs))
    n = n_pre + n_core + int(round(cfg.post_roll * fs))
    t = np.arange(n) / fs
    env = np.zeros((C, n))
    env[:, n_pre:n_pre + n_core] = subband_envelopes(audio, C, fs, n_core)
    sos_g = _sig.butter(4, (70.0, 170.0), btype="bandpass", fs=fs, output="sos")
    x = np.empty((C, n))
    for c in range(C):
        inst = cfg.theta_hz + 0.5 * _smooth_noise(rng, n, fs, 0.5)
        theta_phase = 2 * np.pi * np.cumsum(inst) / fs + rng.uniform(0, 2 * np.pi)
        gamma = _sig.sosfiltfilt(sos_g, rng.standard_normal(n))
        gamma /= np.std(gamma)
        amp = (0.3 + cfg.gamma_gain * env[c]) * (1.0 + cfg.pac_depth * np.cos(theta_phase))
        line = sum(a * np.sin(2 * np.pi * cfg.line_hz * k * t + rng.uniform(0, 6.3))
                   for k, a in ((1, 0.5), (2, 0.2), (3, 0.1)))
        x[c] = _pink(rng, n) + 0.8 * np.cos(theta_phase) + amp * gamma + line
    return x, n_pre


def generate_synthetic_session(cfg: SyntheticConfig = SyntheticConfig(), seed=0):
    rng = np.random.default_rng(seed)
    spans = _words(rng, cfg.duration)
    audio, f0, env, vowel, amps = _audio(cfg, rng, spans)
    x, n_pre = _neural(cfg, rng, audio)
    markers = [(n_pre, START_MARKER)]
    markers += [(n_pre + int(round(a * cfg.fs_neural)), WORD_MARKER) for a, _ in spans]
    rec = MultichannelRecording(x, cfg.fs_neural, [f"ch{c}" for c in range(cfg.channels)], markers)

    grid = FrameGrid(cfg.fs_audio)
    n_frames = grid.n_frames(len(audio))
    centres = (grid.starts(n_frames) + grid.win // 2).astype(int)
    frame_env = env[centres]
    truth = {
        "seed": int(seed),
        "config": cfg.to_dict(),
        "frame_hop_s": grid.hop / cfg.fs_audio,
        "f0": np.where(frame_env > 0.05, f0[centres], 0.0).round(6).tolist(),
        "words": [{"start": round(a, 6), "end": round(b, 6), "vowel": int(v), "gain": round(g, 6)}
                  for (a, b), v, g in zip(spans, vowel, amps)],
        "start_marker_sample": n_pre,
    }
    return SyntheticSession(rec, audio, truth)
