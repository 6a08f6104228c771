"""Figures written next to the CSV/JSON artifacts (Agg backend, no display)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {"figure.dpi": 100, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_loss(curves, path):
    """``curves`` maps a label to a loss list; log-scaled epochs on x."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for label, ys in curves.items():
            if len(ys):
                ax.plot(np.arange(1, len(ys) + 1), ys, label=label)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE")
        ax.legend()
        _save(fig, path)


def plot_iteration_log(log, path):
    with plt.rc_context(RC):
        fig, ax1 = plt.subplots(figsize=(6, 3.5))
        it = [r.iteration for r in log]
        ax1.plot(it, [r.perceptual_loss for r in log], color="C0")
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("perceptual loss", color="C0")
        ax2 = ax1.twinx()
        ax2.plot(it, [r.consistency_error for r in log], color="C1")
        ax2.set_ylabel("consistency error", color="C1")
        ax2.grid(False)
        _save(fig, path)


def plot_mel_pair(ref, hyp, path, hop_s=0.01, titles=("reference", "hypothesis")):
    ref, hyp = np.asarray(ref), np.asarray(hyp)
    lo = min(ref.min(), hyp.min())
    hi = max(ref.max(), hyp.max())
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        for ax, m, title in zip(axes, (ref, hyp), titles):
            ax.imshow(m.T, origin="lower", aspect="auto", vmin=lo, vmax=hi, cmap="magma",
                      extent=(0, m.shape[0] * hop_s, 0, m.shape[1]))
            ax.set_ylabel("mel bin")
            ax.set_title(title)
            ax.grid(False)
        axes[-1].set_xlabel("time (s)")
        _save(fig, path)
