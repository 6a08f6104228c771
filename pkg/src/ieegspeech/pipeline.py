"""File-to-file pipeline stages behind the command-line interface.

Stages only communicate through the artifacts they write, so any stage can be
replaced by an external implementation that honours the same formats.
"""
from __future__ import annotations

import csv
import json
import logging
import os

import numpy as np

from . import dataio
from .config import PipelineConfig
from .errors import AlignmentError, FormatError
from .features import FeatureMatrix, FrameGrid, NormStats, assemble_features, preprocess_recording
from .features import zscore_fit_transform
from .ihpr import (MelSpectrogram, griffin_lim, ihpr_vocode, waveform_log_mel,
                   write_iteration_log)
from .metrics import evaluate, pearson_spectrogram
from .nn import (AutoencoderConfig, TransformerConfig, Xoshiro256pp, autoencoder_train,
                 encode_latent, kfold_split, load_checkpoint, predict_sequence, save_checkpoint,
                 transformer_train)
from .sigproc import StftGrid
from .synthetic import generate_synthetic_session

log = logging.getLogger(__name__)

SESSION_FILES = ("recording.f32", "recording.f32.json", "markers.json", "audio.wav")
CONFIG_ECHO = "config.json"


def _echo(cfg: PipelineConfig, directory):
    os.makedirs(directory or ".", exist_ok=True)
    cfg.write(os.path.join(directory or ".", CONFIG_ECHO))


def stft_grid(cfg: PipelineConfig, fs):
    s = cfg.data["stft"]
    return StftGrid(s["fft_size"], s["hop"], s["win_len"], fs)


def frame_grid(cfg: PipelineConfig, fs):
    f = cfg.data["frames"]
    return FrameGrid(fs, f["win_ms"], f["hop_ms"])


# -- gen-synthetic ---------------------------------------------------------

def write_synthetic(out_dir, cfg: PipelineConfig):
    syn = generate_synthetic_session(cfg.synthetic_config(), cfg.seed)
    os.makedirs(out_dir, exist_ok=True)
    dataio.write_recording(out_dir, syn.recording)
    clipped = dataio.write_wav(os.path.join(out_dir, "audio.wav"), syn.audio)
    with open(os.path.join(out_dir, "truth.json"), "w") as f:
        json.dump(syn.truth, f, indent=1, sort_keys=True)
    _echo(cfg, out_dir)
    return syn, clipped


# -- extract-features ------------------------------------------------------

def load_session(session_dir, marker="start"):
    missing = [os.path.join(session_dir, p) for p in SESSION_FILES
               if not os.path.exists(os.path.join(session_dir, p))]
    if missing:
        raise FileNotFoundError("missing session files: " + ", ".join(missing))
    rec = dataio.read_recording(session_dir)
    audio = dataio.read_wav(os.path.join(session_dir, "audio.wav"))
    return dataio.align_by_markers(rec, audio, marker, {"session": os.fspath(session_dir)})


def extract_features(session_dir, cfg: PipelineConfig):
    ses = load_session(session_dir, cfg.data["paths"]["marker"])
    p = cfg.data["preprocess"]
    rec = preprocess_recording(ses.recording, tuple(p["band"]), p["order"], p["line_hz"],
                               p["n_harmonics"])
    raw = assemble_features(rec, frame_grid(cfg, rec.fs), cfg.feature_config())
    z, stats = zscore_fit_transform(raw)
    return z, stats, ses


def write_features(out_path, z: FeatureMatrix, stats: NormStats, ses, cfg: PipelineConfig):
    d = os.path.dirname(os.fspath(out_path)) or "."
    os.makedirs(d, exist_ok=True)
    dataio.write_matrix(out_path, z.values, fs=1000.0 / cfg.data["frames"]["hop_ms"],
                        labels=z.names, extra={"offset_samples": ses.offset,
                                               "recording_fs": ses.recording.fs})
    with open(os.path.join(d, "stats.json"), "w") as f:
        json.dump(stats.to_json(z.names), f, indent=1, sort_keys=True)
    # audio cropped to the same span, so training targets line up frame for frame
    dataio.write_wav(os.path.join(d, "audio.wav"), ses.audio)
    _echo(cfg, d)


# -- train -----------------------------------------------------------------

def target_mel(audio_path, cfg: PipelineConfig):
    audio = dataio.read_wav(audio_path)
    return waveform_log_mel(audio, stft_grid(cfg, audio.fs), cfg.data["stft"]["n_mels"])


def segment_bounds(n_frames, seg):
    n = n_frames // seg
    if n < 2:
        raise ValueError(f"{n_frames} frames give fewer than 2 segments of {seg}")
    return [(i * seg, (i + 1) * seg) for i in range(n)]


def split_segments(n_segments, test_fraction, seed):
    order = Xoshiro256pp(seed ^ 0x5EED).permutation(n_segments)
    n_test = min(max(1, int(round(test_fraction * n_segments))), n_segments - 1)
    return sorted(order[n_test:].tolist()), sorted(order[:n_test].tolist())


def _rows(bounds, idx):
    return np.concatenate([np.arange(*bounds[i]) for i in idx])


def _fit(X, Y, bounds, train_idx, cfg: PipelineConfig):
    """Autoencoder then transformer on the segments ``train_idx``."""
    tcfg = cfg.train_config()
    a = cfg.data["autoencoder"]
    ae = autoencoder_train(X[_rows(bounds, train_idx)], tcfg, a["hidden"], a["latent"])
    Z = encode_latent(ae.model, X)
    y_rows = _rows(bounds, train_idx)
    mu, sd = Y[y_rows].mean(axis=0), Y[y_rows].std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    Yn = (Y - mu) / sd
    t = cfg.data["transformer"]
    tr_cfg = TransformerConfig(a["latent"], t["d_model"], t["n_heads"], t["n_layers"], t["d_ff"],
                               Y.shape[1], t["use_pe"])
    pairs = [(Z[slice(*bounds[i])], Yn[slice(*bounds[i])]) for i in train_idx]
    tf = transformer_train(pairs, tcfg, tr_cfg)
    return ae, tf, mu, sd


def predict_mel(ae_model, tf_model, mu, sd, X, seg):
    Z = encode_latent(ae_model, X)
    return predict_sequence(tf_model, Z, chunk=seg, overlap=seg // 8) * sd + mu


def heldout_pearson(ae, tf, mu, sd, X, Y, bounds, idx):
    """Mean per-bin Pearson over the concatenated held-out segments."""
    pred = np.concatenate([tf.forward(encode_latent(ae, X[slice(*bounds[i])])) * sd + mu
                           for i in idx])
    return pearson_spectrogram(pred, Y[_rows(bounds, idx)])


def _write_loss_csv(path, ae_res, tf_res):
    cols = [ae_res.train_loss, ae_res.val_loss, tf_res.train_loss, tf_res.val_loss]
    n = max(len(c) for c in cols)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "ae_train", "ae_val", "tf_train", "tf_val"])
        for e in range(n):
            w.writerow([e + 1] + [repr(c[e]) if e < len(c) else "" for c in cols])


def train(features_path, audio_path, model_dir, cfg: PipelineConfig, kfold=False):
    X, header = dataio.read_matrix(features_path)
    mel = target_mel(audio_path, cfg)
    Y = mel.values
    if X.shape[0] != Y.shape[0]:
        raise AlignmentError(f"feature frames ({X.shape[0]}) and mel frames ({Y.shape[0]}) differ")
    seg = cfg.data["train"]["segment_frames"]
    bounds = segment_bounds(X.shape[0], seg)
    tr_idx, te_idx = split_segments(len(bounds), cfg.data["train"]["test_fraction"], cfg.seed)

    ae, tf, mu, sd = _fit(X, Y, bounds, tr_idx, cfg)
    pr = heldout_pearson(ae.model, tf.model, mu, sd, X, Y, bounds, te_idx)
    metrics = {"heldout_pearson_mean": pr.mean, "heldout_bins_excluded": pr.n_excluded,
               "train_segments": tr_idx, "test_segments": te_idx, "segment_frames": seg,
               "ae_epochs": ae.epochs, "tf_epochs": tf.epochs,
               "ae_best_epoch": ae.best_epoch + 1, "tf_best_epoch": tf.best_epoch + 1,
               "warnings": ae.warnings + tf.warnings}

    if kfold:
        folds = kfold_split(len(bounds), cfg.train_config().k_folds, cfg.seed)
        per_fold = []
        for k, test in enumerate(folds):
            train_k = sorted(set(range(len(bounds))) - set(test.tolist()))
            a_k, t_k, m_k, s_k = _fit(X, Y, bounds, train_k, cfg)
            r = heldout_pearson(a_k.model, t_k.model, m_k, s_k, X, Y, bounds, test.tolist())
            per_fold.append({"fold": k, "test_segments": test.tolist(), "pearson_mean": r.mean})
        metrics["kfold"] = per_fold
        metrics["kfold_pearson_mean"] = float(np.mean([f["pearson_mean"] for f in per_fold]))

    os.makedirs(model_dir, exist_ok=True)
    save_checkpoint(os.path.join(model_dir, "autoencoder.bin"), ae.model)
    save_checkpoint(os.path.join(model_dir, "transformer.bin"), tf.model)
    with open(os.path.join(model_dir, "mel_norm.json"), "w") as f:
        json.dump({"mean": mu.tolist(), "std": sd.tolist(), "segment_frames": seg,
                   "feature_names": header.get("labels")}, f, indent=1)
    with open(os.path.join(model_dir, "metrics.json"), "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    _echo(cfg, model_dir)
    run_dir = os.path.dirname(os.path.abspath(model_dir))
    _write_loss_csv(os.path.join(run_dir, "loss.csv"), ae, tf)
    from .plotting import plot_loss
    plot_loss({"autoencoder train": ae.train_loss, "autoencoder val": ae.val_loss,
               "transformer train": tf.train_loss, "transformer val": tf.val_loss},
              os.path.join(run_dir, "loss.png"))
    return metrics


# -- synth -----------------------------------------------------------------

def load_model(model_dir):
    paths = [os.path.join(model_dir, p) for p in ("autoencoder.bin", "transformer.bin", "mel_norm.json")]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError("missing model files: " + ", ".join(missing))
    ae, _ = load_checkpoint(paths[0])
    tf, _ = load_checkpoint(paths[1])
    with open(paths[2]) as f:
        norm = json.load(f)
    if ae.cfg.latent != tf.cfg.latent:
        raise FormatError(f"autoencoder latent {ae.cfg.latent} != transformer input {tf.cfg.latent}")
    return ae, tf, np.array(norm["mean"]), np.array(norm["std"]), int(norm["segment_frames"])


def synthesize_mel(features_path, model_dir, cfg: PipelineConfig, fs_audio=16000.0):
    X, _ = dataio.read_matrix(features_path)
    ae, tf, mu, sd, seg = load_model(model_dir)
    if X.shape[1] != ae.cfg.in_dim:
        raise ValueError(f"features have {X.shape[1]} columns, model expects {ae.cfg.in_dim}")
    return MelSpectrogram(predict_mel(ae, tf, mu, sd, X, seg), stft_grid(cfg, fs_audio))


def vocode(mel: MelSpectrogram, cfg: PipelineConfig, vocoder="ihpr", iters=None):
    icfg = cfg.ihpr_config()
    if vocoder == "ihpr":
        if iters is not None:
            icfg = type(icfg)(**{**icfg.__dict__, "max_iters": iters})
        res = ihpr_vocode(mel, None, icfg)
        return res.waveform, res.log
    if vocoder == "griffinlim":
        n = icfg.max_iters if iters is None else iters
        return griffin_lim(mel, n, seed=cfg.seed), None
    raise ValueError(f"unknown vocoder {vocoder!r}")


def synth(features_path, model_dir, out_wav, cfg: PipelineConfig, vocoder="ihpr", iters=None):
    mel = synthesize_mel(features_path, model_dir, cfg)
    w, ilog = vocode(mel, cfg, vocoder, iters)
    d = os.path.dirname(os.path.abspath(out_wav))
    os.makedirs(d, exist_ok=True)
    clipped = dataio.write_wav(out_wav, w)
    if ilog is not None:
        write_iteration_log(os.path.join(d, "ihpr_log.csv"), ilog)
        if ilog:
            from .plotting import plot_iteration_log
            plot_iteration_log(ilog, os.path.join(d, "ihpr_log.png"))
    _echo(cfg, d)
    return w, ilog, clipped


# -- eval ------------------------------------------------------------------

def evaluate_files(ref_wav, hyp_wav, report_path, cfg: PipelineConfig):
    ref = dataio.read_wav(ref_wav)
    hyp = dataio.read_wav(hyp_wav)
    grid = stft_grid(cfg, ref.fs)
    rep = evaluate(ref, hyp, grid, cfg.data["stft"]["n_mels"])
    d = os.path.dirname(os.path.abspath(report_path))
    os.makedirs(d, exist_ok=True)
    with open(report_path, "w") as f:
        f.write(rep.to_json() + "\n")
    n = min(len(ref), len(hyp))
    from .plotting import plot_mel_pair
    from .sigproc import Waveform
    plot_mel_pair(waveform_log_mel(Waveform(ref.samples[:n], ref.fs), grid).values,
                  waveform_log_mel(Waveform(hyp.samples[:n], hyp.fs), grid).values,
                  os.path.splitext(report_path)[0] + "_mel.png", grid.hop / grid.fs)
    return rep
