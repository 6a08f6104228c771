import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ieegspeech.ihpr import (
    F0Track, HarmonicIndex, IhprConfig, MagnitudeSpectrogram, MelSpectrogram,
    adaptive_phase_correction, bin_weights, consistency_error, consistency_project,
    f0_from_spectrogram, frequency_weights, griffin_lim, harmonic_set, hz_to_mel,
    ihpr_init_phase, ihpr_vocode, log_mel, mel_filterbank, mel_to_linear, perceptual_loss, wrap,
    write_iteration_log,
)
from ieegspeech.metrics import aligned_snr
from ieegspeech.sigproc import StftGrid, Waveform, stft

FS = 16000.0
G = StftGrid()


def harmonic_wave(f0=150.0, n_harm=5, seconds=1.0, phases=0.3):
    t = np.arange(int(seconds * FS)) / FS
    return Waveform(0.2 * sum(np.cos(2 * np.pi * f0 * h * t + phases * h) / h
                              for h in range(1, n_harm + 1)), FS)


def glide_wave(seed=0):
    t = np.arange(16000) / FS
    ph = 2 * np.pi * np.cumsum(150 + 30 * np.sin(2 * np.pi * 1.5 * t)) / FS
    rng = np.random.default_rng(seed)
    return Waveform(0.2 * sum(np.cos(h * ph) / h for h in range(1, 9))
                    + 0.01 * rng.standard_normal(16000), FS)


def mag_of(w):
    return stft(w, G).magnitude()


def rel_consistency(M, w):
    return consistency_error(M, stft(w, G).values[:M.n_frames], relative=True)


# -- mel -------------------------------------------------------------------

def test_mel_formula():
    assert hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2), abs=1e-12)
    assert hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)


def test_filterbank_rows_and_coverage():
    fb, _ = mel_filterbank(80, 1024, FS)
    assert fb.shape == (80, 513)
    assert np.max(np.abs(fb.sum(axis=1) - 1)) < 1e-9
    # every bin strictly inside (0, fs/2) receives weight
    assert np.all(fb[:, 1:-1].sum(axis=0) > 0)
    with pytest.raises(ValueError):
        mel_filterbank(513, 1024, FS)


def test_mel_round_trip_smooth_spectrogram():
    M = mag_of(harmonic_wave(n_harm=12))
    L = log_mel(M)
    back = log_mel(mel_to_linear(L))
    a, b = np.exp(L.values), np.exp(back.values)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 0.05


def test_mel_to_linear_zero_and_nonnegative():
    zero = log_mel(MagnitudeSpectrogram(np.zeros((4, 513)), G))
    assert np.max(mel_to_linear(zero).values) < 1e-15
    rnd = MelSpectrogram(np.random.default_rng(0).normal(-3, 2, (6, 80)), G)
    assert np.all(mel_to_linear(rnd).values >= 0)


# -- pitch and harmonics ---------------------------------------------------

def test_f0_from_harmonic_spectrogram():
    tr = f0_from_spectrogram(mag_of(harmonic_wave(150.0, 8)))
    assert tr.voiced.mean() >= 0.95
    assert np.mean(np.abs(tr.f0[tr.voiced] - 150.0) <= 2.0) >= 0.95


def test_f0_flat_and_zero_spectrogram():
    rng = np.random.default_rng(0)
    flat = MagnitudeSpectrogram(np.abs(1 + 0.1 * rng.standard_normal((100, 513))), G)
    assert np.mean(~f0_from_spectrogram(flat).voiced) >= 0.8
    zero = MagnitudeSpectrogram(np.zeros((10, 513)), G)
    assert not f0_from_spectrogram(zero).voiced.any()


def test_f0_track_invariants():
    with pytest.raises(ValueError):
        F0Track(np.array([50.0]), np.array([True]))
    with pytest.raises(ValueError):
        F0Track(np.array([100.0]), np.array([False]))


def test_harmonic_set_counts_and_weights():
    assert harmonic_set(200.0, FS, 1024, np.ones(513), 20).H == 20
    assert harmonic_set(1000.0, FS, 1024, np.ones(513), 20).H == 7
    hs = harmonic_set(200.0, FS, 1024, np.ones(513), 20)
    np.testing.assert_allclose(hs.weights, np.full(20, 1 / 20))
    assert harmonic_set(200.0, FS, 1024, np.zeros(513), 20).weights.sum() == pytest.approx(1)
    assert harmonic_set(0.0, FS, 1024, np.ones(513)).H == 0
    m = np.zeros(513)
    m[[13, 26]] = [3.0, 1.0]
    hs = harmonic_set(200.0, FS, 1024, m, 2)
    np.testing.assert_allclose(hs.weights, [0.75, 0.25])
    assert hs.freqs[-1] < FS / 2


# -- initialisation --------------------------------------------------------

def test_init_copy_without_advance():
    M = mag_of(harmonic_wave())
    tr = f0_from_spectrogram(M)
    cfg = IhprConfig(phase_advance_init=False, lobe_bins=0)
    phi = ihpr_init_phase(M, tr, cfg)
    np.testing.assert_array_equal(phi[1:], phi[:-1])
    hs = HarmonicIndex.build(M, tr).sets[0]
    assert not phi[0, hs.bins].any()
    assert np.all((phi > -np.pi) & (phi <= np.pi))


def test_init_single_frame():
    M = MagnitudeSpectrogram(mag_of(harmonic_wave()).values[:1], G)
    tr = F0Track.from_f0([150.0])
    phi = ihpr_init_phase(M, tr, IhprConfig())
    hs = harmonic_set(150.0, FS, 1024, M.values[0])
    assert not phi[0, hs.bins].any()


def test_init_advance_matches_stationary_stft():
    # for a steady harmonic series the advanced phase equals the true STFT phase
    w = harmonic_wave(phases=0.0)
    S = stft(w, G).values
    M = MagnitudeSpectrogram(np.abs(S), G)
    tr = F0Track.from_f0(np.full(M.n_frames, 150.0))
    phi = ihpr_init_phase(M, tr, IhprConfig())
    b = harmonic_set(150.0, FS, 1024, M.values[0]).bins[:5]
    d = wrap(phi[:, b] - np.angle(S[:, b]))
    d = wrap(d - d[0])
    assert np.max(np.abs(d)) < 0.05


def test_init_bin_centred_harmonic_is_phase_coherent():
    # 125 Hz sits on bin 8 and has an integer period of 128 samples
    x = np.cos(2 * np.pi * 125 * np.arange(16000) / FS)
    M = mag_of(Waveform(x, FS))
    Mc = MagnitudeSpectrogram(np.tile(M.values[50], (M.n_frames, 1)), G)
    tr = F0Track.from_f0(np.full(M.n_frames, 125.0))
    y = ihpr_vocode(Mc, tr, IhprConfig(max_iters=0)).waveform.samples[800:-800]
    assert (y[:-128] @ y[128:]) / (y @ y) >= 0.95


# -- projection ------------------------------------------------------------

def test_projection_fixed_point():
    x = np.random.default_rng(0).standard_normal(8000)
    S = stft(Waveform(x, FS), G).values
    M = MagnitudeSpectrogram(np.abs(S), G)
    _, phi2 = consistency_project(M, np.angle(S))
    inner = slice(5, -5)
    assert np.max(np.abs(wrap(phi2[inner] - np.angle(S)[inner]))) < 1e-6


def test_projection_of_zero():
    M = MagnitudeSpectrogram(np.zeros((10, 513)), G)
    sh, phi = consistency_project(M, np.random.default_rng(0).uniform(-3, 3, (10, 513)))
    assert not sh.any() and not phi.any()


def test_consistency_non_increasing_without_correction():
    M = mag_of(glide_wave())
    res = ihpr_vocode(M, None, IhprConfig(lam=0.0, max_iters=30, tol=0.0))
    err = [r.consistency_error for r in res.log]
    assert len(err) == 30
    assert all(b <= a + 1e-10 for a, b in zip(err, err[1:]))


def test_griffin_lim_monotone_zero_iters_and_seeded():
    M = mag_of(glide_wave())
    errs = []
    y = griffin_lim(M, 30, seed=3, errors=errs)
    assert all(b <= a + 1e-10 for a, b in zip(errs, errs[1:]))
    y0 = griffin_lim(M, 0, seed=3)
    assert np.all(np.isfinite(y0.samples)) and len(y0) == G.signal_length(M.n_frames)
    np.testing.assert_array_equal(griffin_lim(M, 5, seed=3).samples,
                                  griffin_lim(M, 5, seed=3).samples)


def test_consistency_norm_weights():
    np.testing.assert_array_equal(bin_weights(4), [1, 2, 2, 1])


# -- correction ------------------------------------------------------------

def _harm(frames, bins):
    n = len(bins)
    return HarmonicIndex(np.asarray(frames), np.asarray(bins), np.zeros(n), np.full(n, 1 / n))


def test_correction_identity_and_untouched_bins():
    phi = np.random.default_rng(0).uniform(-np.pi, np.pi, (3, 64))
    h = _harm([0, 1, 1], [10, 20, 30])
    np.testing.assert_array_equal(adaptive_phase_correction(phi, h, 0.0), phi)
    out = adaptive_phase_correction(phi, h, 0.1)
    mask = np.zeros_like(phi, dtype=bool)
    mask[[0, 1, 1], [10, 20, 30]] = True
    np.testing.assert_array_equal(out[~mask], phi[~mask])
    assert np.all(out[mask] != phi[mask])


def test_correction_on_linear_ramp():
    alpha, lam = 0.37, 0.1
    phi = np.tile(alpha * np.arange(64.0), (2, 1))
    h = _harm([0, 1], [10, 40])
    out = adaptive_phase_correction(phi, h, lam)
    np.testing.assert_allclose(out[[0, 1], [10, 40]], phi[[0, 1], [10, 40]] - lam * alpha,
                               atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), lam=st.floats(0.0, 1.0))
def test_correction_does_not_increase_total_variation(seed, lam):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-np.pi, np.pi, (4, 200))
    frames = np.repeat(np.arange(4), 15)
    bins = np.tile(np.arange(10, 190, 12), 4)
    h = _harm(frames, bins)

    def tv(p):
        return (np.abs(wrap(p[frames, bins] - p[frames, bins - 1])).sum()
                + np.abs(wrap(p[frames, bins + 1] - p[frames, bins])).sum())

    assert tv(adaptive_phase_correction(phi, h, lam)) <= tv(phi) + 1e-9


# -- perceptual loss -------------------------------------------------------

def test_perceptual_loss_terms():
    rng = np.random.default_rng(1)
    M = np.abs(rng.standard_normal((5, 513)))
    phi = rng.uniform(-3, 3, (5, 513))
    h = _harm([0, 2], [10, 30])
    wf = frequency_weights(G)
    assert perceptual_loss(M, M, phi, phi, h, 0.5, wf) == 0.0
    R = M + 0.1 * rng.standard_normal(M.shape)
    assert perceptual_loss(M, R, phi, phi + 1, h, 0.0, wf) == pytest.approx(
        np.sum(wf * (M - R) ** 2), rel=1e-12)
    assert perceptual_loss(M, M, phi, phi + 0.5, h, 2.0, wf) == pytest.approx(2.0 * 2 * 0.25)


def test_frequency_weights_shape():
    wf = frequency_weights(G)
    f = G.bin_freqs()
    assert np.all(wf[f <= 4000] == 1.0)
    assert wf[-1] == pytest.approx(0.5)
    assert np.all(np.diff(wf) <= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), gamma=st.floats(0, 10))
def test_perceptual_loss_non_negative(seed, gamma):
    rng = np.random.default_rng(seed)
    a, b = np.abs(rng.standard_normal((2, 3, 513)))
    p, q = rng.uniform(-4, 4, (2, 3, 513))
    assert perceptual_loss(a, b, p, q, _harm([0, 1], [5, 9]), gamma, frequency_weights(G)) >= 0


# -- vocoder ---------------------------------------------------------------

def test_ihpr_beats_griffin_lim_on_harmonic_benchmark():
    w = harmonic_wave()
    M = mag_of(w)
    y_i = ihpr_vocode(M, None, IhprConfig(max_iters=30, tol=0.0)).waveform
    y_g = griffin_lim(M, 30, seed=0)
    snr_i = aligned_snr(w, y_i, max_lag=400)[0]
    snr_g = aligned_snr(w, y_g, max_lag=400)[0]
    assert snr_i >= snr_g


@pytest.mark.parametrize("make", [harmonic_wave, glide_wave])
def test_ihpr_consistency_on_self_consistent_input(make):
    M = mag_of(make())
    res = ihpr_vocode(M, None, IhprConfig(max_iters=100))
    assert len(res.log) <= 100
    assert rel_consistency(M, res.waveform) < 0.05


def test_ihpr_loop_contract(tmp_path):
    M = mag_of(harmonic_wave())
    cfg = IhprConfig(max_iters=100, tol=1e-3)
    res = ihpr_vocode(M, None, cfg)
    assert 1 <= len(res.log) <= cfg.max_iters
    if res.converged:
        a, b = res.log[-2].perceptual_loss, res.log[-1].perceptual_loss
        assert abs(a - b) / a < cfg.tol
    assert res.log[-1].perceptual_loss <= res.log[0].perceptual_loss
    assert np.all(np.isfinite(res.waveform.samples))
    write_iteration_log(tmp_path / "log.csv", res.log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iteration,perceptual_loss,consistency_error"
    assert len(lines) == len(res.log) + 1


def test_ihpr_empty_and_mel_input():
    with pytest.raises(ValueError):
        ihpr_vocode(MagnitudeSpectrogram(np.zeros((0, 513)), G))
    mel = log_mel(mag_of(harmonic_wave()))
    res = ihpr_vocode(mel, None, IhprConfig(max_iters=5))
    assert len(res.waveform) == G.signal_length(mel.n_frames)
    assert len(res.log) <= 5


def test_refine_modes_share_the_update():
    M = mag_of(glide_wave())
    a = ihpr_vocode(M, None, IhprConfig(max_iters=8, tol=0.0, refine_mode="minimize"))
    b = ihpr_vocode(M, None, IhprConfig(max_iters=8, tol=0.0, refine_mode="maximize"))
    assert a.phase.tobytes() == b.phase.tobytes()
    assert a.waveform.samples.tobytes() == b.waveform.samples.tobytes()
    assert [r.refine_objective for r in a.log] != [r.refine_objective for r in b.log]


def test_degenerate_ihpr_is_griffin_lim():
    M = mag_of(glide_wave())
    cfg = IhprConfig(lam=0.0, gamma=0.0, phase_advance_init=False, harmonic_gating=False,
                     max_iters=30, tol=0.0, seed=5)
    res = ihpr_vocode(M, None, cfg)
    init = ihpr_init_phase(M, F0Track.unvoiced(M.n_frames), cfg)
    gl = griffin_lim(M, len(res.log), init_phase=init)
    assert np.max(np.abs(res.waveform.samples - gl.samples)) <= 1e-9


def test_vocoder_deterministic():
    M = mag_of(glide_wave())
    a = ihpr_vocode(M, None, IhprConfig(max_iters=5, seed=2)).waveform.samples
    b = ihpr_vocode(M, None, IhprConfig(max_iters=5, seed=2)).waveform.samples
    assert a.tobytes() == b.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        IhprConfig(max_iters=-1)
    with pytest.raises(ValueError):
        IhprConfig(lam=-0.1)
    with pytest.raises(ValueError):
        IhprConfig(refine_mode="other")
