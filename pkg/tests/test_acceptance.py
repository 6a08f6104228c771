"""Acceptance criteria 1-9: property checks and closed-loop synthetic experiments.

Each test prints one ``criterion N: PASS|FAIL`` line with the measured values;
the lines are repeated in the pytest terminal summary.  Run on its own with

    pytest tests/test_acceptance.py -v
"""
import hashlib
import json
import math
import time

import numpy as np
import pytest

from _gradcheck import check_module
from ieegspeech.cli import main
from ieegspeech.features import (FrameGrid, frame_signal, pac_surrogates,
                                 preprocess_recording)
from ieegspeech.ihpr import (F0Track, IhprConfig, consistency_error, griffin_lim,
                             ihpr_init_phase, ihpr_vocode)
from ieegspeech.metrics import MCD_CONST, aligned_snr, hnr, mcd, pearson_spectrogram
from ieegspeech.nn import (Autoencoder, AutoencoderConfig, Dense, EncoderBlock, FeedForward,
                           LayerNorm, MultiHeadSelfAttention, ReLU, SpectrogramTransformer,
                           TrainConfig, TransformerConfig, Xoshiro256pp, save_checkpoint,
                           transformer_train)
from ieegspeech.sigproc import StftGrid, Waveform, hann_window, hilbert_analytic, istft, stft
from ieegspeech.synthetic import SyntheticConfig, generate_synthetic_session
from ieegspeech.wavelet import band_energies, dwt_step_db4, wavedec

pytestmark = pytest.mark.slow

FS = 16000.0
G = StftGrid()


def _fmt(x, spec=".4g"):
    return format(x, spec)


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- 1. DSP invariants -----------------------------------------------------

def test_criterion_1_dsp_invariants(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    x = rng.standard_normal(G.signal_length(200))
    y = istft(stft(Waveform(x, FS), G), len(x)).samples
    # samples whose summed squared window is below the ISTFT floor are zeroed by contract
    win2 = hann_window(G.win_len) ** 2
    den = np.zeros(len(x))
    for t in range(G.n_frames(len(x))):
        den[t * G.hop:t * G.hop + G.win_len] += win2
    ok = den >= 1e-8
    snr = 10 * np.log10(np.sum(x[ok] ** 2) / np.sum((x[ok] - y[ok]) ** 2))

    energy_err = 0.0
    for n, levels in ((512, 4), (1000, 3), (4096, 6), (96, 5)):
        s = rng.standard_normal(n)
        e = band_energies(wavedec(s, levels)).energies
        energy_err = max(energy_err, abs(e.sum() - s @ s) / (s @ s))

    t = np.linspace(0, 1, 512)
    cubic = 0.5 - 1.5 * t + 2.0 * t ** 2 - 3.0 * t ** 3
    _, d = dwt_step_db4(cubic)
    moment = float(np.max(np.abs(d[:-3])) / np.linalg.norm(cubic))  # last taps wrap around

    h = rng.standard_normal(3001)
    hil = float(np.max(np.abs(hilbert_analytic(Waveform(h, FS)).values.real - h)))
    dt = time.perf_counter() - t0
    ok = report_criterion(1, [
        ("stft_round_trip_snr_db", _fmt(snr), snr > 60),
        ("db4_energy_rel_err", _fmt(energy_err), energy_err < 1e-9),
        ("db4_cubic_detail_rel", _fmt(moment), moment < 1e-8),
        ("hilbert_real_err", _fmt(hil), hil <= 1e-9),
        ("runtime_s", _fmt(dt, ".1f"), dt < 10),
    ], dt)
    assert ok


# -- 2. PAC closed loop ----------------------------------------------------

def test_criterion_2_pac_closed_loop(report_criterion):
    t0 = time.perf_counter()
    syn = generate_synthetic_session(SyntheticConfig(), seed=42)
    rec = preprocess_recording(syn.aligned().recording)
    ratios, above = [], []
    for c in range(rec.channels.shape[0]):
        obs, surr = pac_surrogates(Waveform(rec.channels[c], rec.fs), grid=FrameGrid(rec.fs),
                                   n_surrogates=200, seed=c)
        ratios.append(obs / surr.mean())
        above.append(obs > np.percentile(surr, 95))
    dt = time.perf_counter() - t0
    ok = report_criterion(2, [
        ("min_pac_over_surrogate_mean", _fmt(min(ratios)), min(ratios) >= 5),
        ("channels_above_p95", f"{sum(above)}/{len(above)}", all(above)),
        ("runtime_s", _fmt(dt, ".1f"), dt < 30),
    ], dt)
    assert ok


# -- 3. gradients ----------------------------------------------------------

def _x(*shape, seed=1):
    return np.random.default_rng(seed).standard_normal(shape)


def test_criterion_3_gradients(report_criterion):
    t0 = time.perf_counter()
    ln = LayerNorm(6)
    ln.params["g"][:] = _x(6, seed=2)
    ln.params["b"][:] = _x(6, seed=3)
    layers = {
        "dense": (Dense(8, 8, Xoshiro256pp(0)), _x(8, 8)),
        "relu": (ReLU(), _x(6, 5)),
        "layernorm": (ln, _x(4, 6)),
        "attention": (MultiHeadSelfAttention(8, 2, Xoshiro256pp(1)), _x(2, 4, 8)),
        "feedforward": (FeedForward(6, 10, Xoshiro256pp(2)), _x(3, 6)),
        "encoder_block": (EncoderBlock(8, 2, 16, Xoshiro256pp(3)), _x(4, 8)),
        "autoencoder": (Autoencoder(AutoencoderConfig(6, 10, 3), seed=5), _x(5, 6)),
    }
    layer_err = {k: max(check_module(m, x).values()) for k, (m, x) in layers.items()}
    tiny = SpectrogramTransformer(TransformerConfig(latent=5, d_model=8, n_heads=2, n_layers=2,
                                                    d_ff=16, n_mels=6), seed=4)
    tf_err = max(check_module(tiny, _x(4, 5)).values())
    worst = max(layer_err, key=layer_err.get)
    dt = time.perf_counter() - t0
    ok = report_criterion(3, [
        (f"max_layer_rel_err({worst})", _fmt(layer_err[worst]), layer_err[worst] < 1e-6),
        ("tiny_transformer_rel_err", _fmt(tf_err), tf_err < 1e-4),
        ("runtime_s", _fmt(dt, ".1f"), dt < 60),
    ], dt)
    assert ok


# -- 4. training sanity ----------------------------------------------------

def linear_task(seed=42, latent=32, mels=80, T=50, n_train=64, n_test=8):
    """mel = z @ W + small noise for a fixed random W."""
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((latent, mels)) / np.sqrt(latent)

    def pairs(n):
        out = []
        for _ in range(n):
            z = rng.standard_normal((T, latent))
            out.append((z, z @ W + 0.05 * rng.standard_normal((T, mels))))
        return out
    return pairs(n_train), pairs(n_test)


def train_linear(seed=42):
    train, test = linear_task(seed)
    res = transformer_train(train, TrainConfig(seed=seed, max_epochs=300))
    pred = np.concatenate([res.model.forward(z) for z, _ in test])
    target = np.concatenate([m for _, m in test])
    return res, pearson_spectrogram(pred, target).mean


@pytest.fixture(scope="module")
def linear_run(tmp_path_factory):
    t0 = time.perf_counter()
    res, r = train_linear()
    dt = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("linear") / "transformer.bin"
    save_checkpoint(path, res.model)
    return res, r, dt, path


def test_criterion_4_training_sanity(linear_run, report_criterion):
    res, r, dt, _ = linear_run
    ok = report_criterion(4, [
        ("heldout_pearson", _fmt(r), r >= 0.95),
        ("epochs", str(res.epochs), res.epochs <= 300),
        ("loss_decreased", _fmt(res.train_loss[-1] / res.train_loss[0]),
         res.train_loss[-1] < res.train_loss[0]),
        ("runtime_s", _fmt(dt, ".1f"), dt < 300),
    ], dt)
    assert ok


# -- 5. vocoder quality ----------------------------------------------------

def harmonic_benchmark(f0=150.0, n_harm=5, seconds=1.0):
    t = np.arange(int(seconds * FS)) / FS
    return Waveform(0.2 * sum(np.cos(2 * np.pi * f0 * h * t + 0.3 * h) / h
                              for h in range(1, n_harm + 1)), FS)


def test_criterion_5_vocoder_quality(report_criterion):
    t0 = time.perf_counter()
    w = harmonic_benchmark()
    M = stft(w, G).magnitude()
    y_i = ihpr_vocode(M, None, IhprConfig(max_iters=30, tol=0.0)).waveform
    y_g = griffin_lim(M, 30, seed=0)
    snr_i = aligned_snr(w, y_i, max_lag=400)[0]
    snr_g = aligned_snr(w, y_g, max_lag=400)[0]
    res = ihpr_vocode(M, None, IhprConfig(max_iters=100))
    cons = consistency_error(M, stft(res.waveform, G).values[:M.n_frames], relative=True)
    dt = time.perf_counter() - t0
    ok = report_criterion(5, [
        ("ihpr30_snr_db", _fmt(snr_i), snr_i >= snr_g),
        ("griffinlim30_snr_db", _fmt(snr_g), True),
        ("consistency_err", _fmt(cons), cons < 0.05),
        ("iterations", str(len(res.log)), len(res.log) <= 100),
        ("runtime_s", _fmt(dt, ".1f"), dt < 60),
    ], dt)
    assert ok


# -- 6. IHPR degeneracy ----------------------------------------------------

def test_criterion_6_ihpr_degenerates_to_griffin_lim(report_criterion):
    t0 = time.perf_counter()
    M = stft(harmonic_benchmark(), G).magnitude()
    cfg = IhprConfig(lam=0.0, gamma=0.0, phase_advance_init=False, harmonic_gating=False,
                     max_iters=30, tol=0.0, seed=11)
    res = ihpr_vocode(M, None, cfg)
    init = ihpr_init_phase(M, F0Track.unvoiced(M.n_frames), cfg)
    gl = griffin_lim(M, len(res.log), init_phase=init)
    err = float(np.max(np.abs(res.waveform.samples - gl.samples)))
    dt = time.perf_counter() - t0
    ok = report_criterion(6, [
        ("max_abs_diff", _fmt(err), err <= 1e-9),
        ("iterations", str(len(res.log)), len(res.log) == 30),
        ("runtime_s", _fmt(dt, ".1f"), dt < 30),
    ], dt)
    assert ok


# -- 7. end to end ---------------------------------------------------------

def run_pipeline(root, seed=42):
    """gen-synthetic -> extract-features -> train -> synth (both vocoders) -> eval."""
    s, r = root / "session", root / "run"
    steps = [
        ["gen-synthetic", "--out", s, "--seed", seed],
        ["extract-features", "--session", s, "--out", r / "features.f32", "--seed", seed],
        ["train", "--features", r / "features.f32", "--audio", r / "audio.wav",
         "--out", r / "model", "--seed", seed],
        ["synth", "--features", r / "features.f32", "--model", r / "model",
         "--out", r / "synth.wav", "--vocoder", "ihpr", "--seed", seed],
        ["synth", "--features", r / "features.f32", "--model", r / "model",
         "--out", r / "griffinlim/synth.wav", "--vocoder", "griffinlim", "--seed", seed],
        ["eval", "--ref", r / "audio.wav", "--hyp", r / "synth.wav",
         "--report", r / "report.json"],
        ["eval", "--ref", r / "audio.wav", "--hyp", r / "griffinlim/synth.wav",
         "--report", r / "griffinlim/report.json"],
    ]
    for argv in steps:
        code = main([str(a) for a in argv])
        assert code == 0, f"{argv[0]} exited with {code}"
    return r


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    t0 = time.perf_counter()
    r = run_pipeline(tmp_path_factory.mktemp("e2e"))
    return r, time.perf_counter() - t0


def test_criterion_7_end_to_end(e2e, report_criterion):
    r, dt = e2e
    metrics = json.loads((r / "model/metrics.json").read_text())
    rep_i = json.loads((r / "report.json").read_text())
    rep_g = json.loads((r / "griffinlim/report.json").read_text())
    pc = metrics["heldout_pearson_mean"]
    mcd_i = rep_i["mcd_db"]
    h_i, h_g = rep_i["hnr_db"], rep_g["hnr_db"]
    hnr_ok = h_i is not None and h_g is not None and h_i >= h_g
    ok = report_criterion(7, [
        ("heldout_pearson", _fmt(pc), pc >= 0.80),
        ("mcd_db", _fmt(mcd_i) if mcd_i is not None else "null",
         mcd_i is not None and math.isfinite(mcd_i)),
        ("hnr_ihpr_db", _fmt(h_i) if h_i is not None else "null", hnr_ok),
        ("hnr_griffinlim_db", _fmt(h_g) if h_g is not None else "null", True),
        ("full_signal_pearson_ihpr", _fmt(rep_i["pearson_mean"]), True),
        ("runtime_s", _fmt(dt, ".1f"), dt < 900),
    ], dt)
    assert ok


# -- 8. metric self-tests --------------------------------------------------

def _pearson_oracle(A, B):
    rs = []
    for j in range(A.shape[1]):
        a, b = list(A[:, j]), list(B[:, j])
        ma, mb = math.fsum(a) / len(a), math.fsum(b) / len(b)
        num = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
        den = math.sqrt(math.fsum((x - ma) ** 2 for x in a) * math.fsum((y - mb) ** 2 for y in b))
        rs.append(num / den)
    return math.fsum(rs) / len(rs)


def _mcd_oracle(A, B, n_coeffs=13):
    K = A.shape[1]
    k = np.arange(K)
    # orthonormal DCT-II basis written out explicitly
    C = np.sqrt(2.0 / K) * np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * K))
    C[0] /= np.sqrt(2.0)
    d = (A - B) @ C.T
    d = d[:, 1:n_coeffs + 1]
    return MCD_CONST * float(np.mean(np.sqrt(np.sum(d * d, axis=1))))


def _hnr_oracle(w, f0):
    grid = FrameGrid(w.fs)
    frames = frame_signal(w, grid)
    vals = []
    for t in np.flatnonzero(f0[:len(frames)] > 0):
        x = frames[t]
        n = len(x)
        tau = w.fs / f0[t]
        max_lag = min(math.ceil(tau * 1.03) + 1, grid.win // 2)
        r = [float(np.dot(x[:n - L], x[L:]) / math.sqrt(np.dot(x[:n - L], x[:n - L])
                                                       * np.dot(x[L:], x[L:])))
             for L in range(max_lag + 1)]
        lo = max(math.floor(tau * 0.97), 1)
        hi = min(math.ceil(tau * 1.03), len(r) - 2)
        k = max(range(lo, hi + 1), key=lambda i: (r[i], -i))
        y0, y1, y2 = r[k - 1], r[k], r[k + 1]
        den = y0 - 2 * y1 + y2
        peak = y1
        if den < 0 and abs(0.5 * (y0 - y2) / den) <= 1:
            p = 0.5 * (y0 - y2) / den
            peak = y1 - 0.25 * (y0 - y2) * p
        h = -20.0 if peak <= 0 else 40.0 if peak >= 1 else 10 * math.log10(peak / (1 - peak))
        vals.append(min(max(h, -20.0), 40.0))
    return math.fsum(vals) / len(vals)


def test_criterion_8_metric_self_tests(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    A, B = rng.standard_normal((40, 80)), rng.standard_normal((40, 80))
    p_self = pearson_spectrogram(A, A).mean
    m_self = mcd(A, A)
    sweep = []
    t = np.arange(32000) / FS
    for snr in (30, 20, 10, 5, 0, -5):
        x = np.sin(2 * np.pi * 200 * t) + np.sqrt(0.5 * 10 ** (-snr / 10)) * rng.standard_normal(len(t))
        w = Waveform(x, FS)
        sweep.append(hnr(w, np.full(FrameGrid(FS).n_frames(len(w)), 200.0)))
    monotone = all(b < a for a, b in zip(sweep, sweep[1:]))

    w = Waveform(np.sin(2 * np.pi * 173.0 * t[:8000]) + 0.4 * rng.standard_normal(8000), FS)
    f0 = np.where(np.arange(FrameGrid(FS).n_frames(8000)) % 3 == 0, 0.0, 173.0)
    oracle = {
        "pearson": abs(pearson_spectrogram(A, B).mean - _pearson_oracle(A, B)),
        "mcd": abs(mcd(A, B) - _mcd_oracle(A, B)),
        "hnr": abs(hnr(w, f0) - _hnr_oracle(w, f0)),
    }
    worst = max(oracle, key=oracle.get)
    dt = time.perf_counter() - t0
    ok = report_criterion(8, [
        ("pearson_self", repr(p_self), abs(p_self - 1.0) <= 1e-12),
        ("mcd_self", repr(m_self), m_self == 0.0),
        ("hnr_sweep_db", "/".join(f"{v:.1f}" for v in sweep), monotone),
        (f"max_oracle_diff({worst})", _fmt(oracle[worst]), oracle[worst] <= 1e-10),
        ("runtime_s", _fmt(dt, ".1f"), dt < 10),
    ], dt)
    assert ok


# -- 9. determinism --------------------------------------------------------

def test_criterion_9_determinism(linear_run, e2e, tmp_path, report_criterion):
    t0 = time.perf_counter()
    _, _, _, ckpt_a = linear_run
    res_b, _ = train_linear()
    save_checkpoint(tmp_path / "transformer.bin", res_b.model)
    linear_same = _sha(tmp_path / "transformer.bin") == _sha(ckpt_a)

    r_a, _ = e2e
    r_b = run_pipeline(tmp_path / "again")
    files = ["session/audio.wav", "session/recording.f32", "run/features.f32",
             "run/model/autoencoder.bin", "run/model/transformer.bin",
             "run/synth.wav", "run/griffinlim/synth.wav", "run/report.json"]
    differ = [f for f in files
              if _sha(r_a.parent / f) != _sha(r_b.parent / f)]
    dt = time.perf_counter() - t0
    ok = report_criterion(9, [
        ("criterion4_checkpoint_identical", str(linear_same), linear_same),
        ("criterion7_files_identical", f"{len(files) - len(differ)}/{len(files)}", not differ),
    ], dt)
    assert ok, differ
