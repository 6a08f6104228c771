"""Adam, MSE, early stopping and the two training loops."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .models import Autoencoder, AutoencoderConfig, SpectrogramTransformer, TransformerConfig
from .rng import Xoshiro256pp

log = logging.getLogger(__name__)

CHUNK_FRAMES = 512
CHUNK_OVERLAP = 64


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch: int = 32
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0
    val_fraction: float = 0.1
    k_folds: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch, patience and max_epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.k_folds < 2:
            raise ValueError(f"k_folds must be >= 2, got {self.k_folds}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: object
    train_loss: list
    val_loss: list
    best_epoch: int  # 0-based index into the loss lists
    warnings: list = field(default_factory=list)

    @property
    def epochs(self):
        return len(self.train_loss)


class Adam:
    def __init__(self, model, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.refs = model.parameter_refs()
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(o.params[k]) for o, k in self.refs]
        self.v = [np.zeros_like(o.params[k]) for o, k in self.refs]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for (owner, key), m, v in zip(self.refs, self.m, self.v):
            g = owner.grads[key]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            owner.params[key] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mse(pred, target):
    """Return ``(loss, dloss/dpred)``."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def snapshot(model):
    return [v.copy() for _, v in model.named_parameters()]


def restore(model, values):
    for (_, v), saved in zip(model.named_parameters(), values):
        v[...] = saved


def _split(n, val_fraction, rng):
    order = rng.permutation(n)
    n_val = int(round(n * val_fraction)) if val_fraction > 0 else 0
    n_val = min(max(n_val, 1 if val_fraction > 0 else 0), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


class _EarlyStop:
    def __init__(self, model, patience):
        self.model, self.patience = model, patience
        self.best = np.inf
        self.best_epoch = -1
        self.best_params = None

    def update(self, epoch, loss):
        """Record ``loss``; return True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch = loss, epoch
            self.best_params = snapshot(self.model)
        return epoch - self.best_epoch >= self.patience

    def finish(self):
        if self.best_params is not None:
            restore(self.model, self.best_params)
        return max(self.best_epoch, 0)


# -- autoencoder -----------------------------------------------------------

def autoencoder_train(features, cfg: TrainConfig, hidden=128, latent=32):
    """Fit an autoencoder to the rows of ``features`` (frames x dims)."""
    x = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n < cfg.batch:
        raise ValueError(f"{n} frames is fewer than the batch size {cfg.batch}")
    warnings = []
    if np.all(x.std(axis=0) < 1e-12):
        warnings.append("zero-variance input: every feature column is constant")
        log.warning(warnings[-1])

    rng = Xoshiro256pp(cfg.seed)
    model = Autoencoder(AutoencoderConfig(d, hidden, latent), seed=cfg.seed)
    opt = Adam(model, cfg.lr)
    tr, va = _split(n, cfg.val_fraction, rng)
    xt, xv = x[tr], x[va]
    stopper = _EarlyStop(model, cfg.patience)
    train_hist, val_hist = [], []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(tr))
        for s in range(0, len(order), cfg.batch):
            xb = xt[order[s:s + cfg.batch]]
            model.zero_grad()
            _, g = mse(model.forward(xb), xb)
            model.backward(g)
            opt.step()
        train_hist.append(mse(model.forward(xt), xt)[0])
        val_hist.append(mse(model.forward(xv), xv)[0] if len(va) else train_hist[-1])
        if not np.isfinite(train_hist[-1]):
            raise FloatingPointError(f"autoencoder loss diverged at epoch {epoch}")
        if stopper.update(epoch, val_hist[-1]):
            break
    best = stopper.finish()
    return TrainResult(model, train_hist, val_hist, best, warnings)


def encode_latent(model: Autoencoder, features):
    x = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    return model.encode(x)


# -- transformer -----------------------------------------------------------

def transformer_forward(model: SpectrogramTransformer, latent_seq):
    return model.forward(latent_seq)


def _check_pairs(pairs):
    out = []
    for i, (z, m) in enumerate(pairs):
        z, m = np.asarray(z, dtype=np.float64), np.asarray(m, dtype=np.float64)
        if z.ndim != 2 or m.ndim != 2 or z.shape[0] != m.shape[0]:
            raise ValueError(f"pair {i}: latent {z.shape} and target {m.shape} are not frame-aligned")
        out.append((z, m))
    return out


def _sequence_batches(items, lengths, batch, rng):
    """Batches of equal-length sequences, in seeded random order."""
    batches = []
    for L in sorted(set(lengths)):
        group = [items[i] for i in range(len(items)) if lengths[i] == L]
        order = rng.permutation(len(group))
        for s in range(0, len(group), batch):
            batches.append([group[j] for j in order[s:s + batch]])
    return [batches[i] for i in rng.permutation(len(batches))]


def sequence_loss(model, pairs):
    """Frame-weighted MSE over a list of pairs."""
    if not pairs:
        return float("nan")
    total = sum(float(np.sum((model.forward(z) - m) ** 2)) for z, m in pairs)
    return total / sum(m.size for _, m in pairs)


def transformer_train(pairs, cfg: TrainConfig, tcfg: TransformerConfig = None, val_pairs=None,
                      model=None):
    """Train on ``(latent_seq, mel_target)`` pairs.

    Without ``val_pairs`` a seeded ``val_fraction`` of the pairs is held out
    for early stopping.
    """
    pairs = _check_pairs(pairs)
    if not pairs:
        raise ValueError("no training pairs")
    rng = Xoshiro256pp(cfg.seed)
    if val_pairs is None:
        if len(pairs) >= 2 and cfg.val_fraction > 0:
            tr, va = _split(len(pairs), cfg.val_fraction, rng)
            val_pairs = [pairs[i] for i in va]
            pairs = [pairs[i] for i in tr]
        else:
            val_pairs = []
    else:
        val_pairs = _check_pairs(val_pairs)
    if tcfg is None:
        tcfg = TransformerConfig(latent=pairs[0][0].shape[1], n_mels=pairs[0][1].shape[1])
    for z, m in pairs + val_pairs:
        if z.shape[1] != tcfg.latent or m.shape[1] != tcfg.n_mels:
            raise ValueError(f"pair dims ({z.shape[1]}, {m.shape[1]}) do not match model "
                             f"({tcfg.latent}, {tcfg.n_mels})")
    if model is None:
        model = SpectrogramTransformer(tcfg, seed=cfg.seed)
    opt = Adam(model, cfg.lr)
    lengths = [z.shape[0] for z, _ in pairs]
    stopper = _EarlyStop(model, cfg.patience)
    train_hist, val_hist = [], []
    for epoch in range(cfg.max_epochs):
        for group in _sequence_batches(pairs, lengths, cfg.batch, rng):
            zb = np.stack([z for z, _ in group])
            mb = np.stack([m for _, m in group])
            model.zero_grad()
            _, g = mse(model.forward(zb), mb)
            model.backward(g)
            opt.step()
        train_hist.append(sequence_loss(model, pairs))
        val_hist.append(sequence_loss(model, val_pairs) if val_pairs else train_hist[-1])
        if not np.isfinite(train_hist[-1]):
            raise FloatingPointError(f"transformer loss diverged at epoch {epoch}")
        if stopper.update(epoch, val_hist[-1]):
            break
    best = stopper.finish()
    return TrainResult(model, train_hist, val_hist, best, [])


def predict_sequence(model: SpectrogramTransformer, latent_seq, chunk=CHUNK_FRAMES,
                     overlap=CHUNK_OVERLAP):
    """Run the transformer over an arbitrarily long sequence.

    Sequences longer than ``chunk`` are split into overlapping windows whose
    predictions are cross-faded with linear ramps over the overlap.
    """
    z = np.asarray(latent_seq, dtype=np.float64)
    T = z.shape[0]
    if T <= chunk:
        return model.forward(z)
    if not 0 <= overlap < chunk:
        raise ValueError(f"overlap {overlap} must lie in [0, {chunk})")
    step = chunk - overlap
    starts = list(range(0, T - chunk, step)) + [T - chunk]
    out = np.zeros((T, model.cfg.n_mels))
    wsum = np.zeros(T)
    ramp = (np.arange(overlap) + 1.0) / (overlap + 1.0)
    for i, s in enumerate(starts):
        w = np.ones(chunk)
        if overlap and i > 0:
            w[:overlap] = ramp
        if overlap and i < len(starts) - 1:
            w[chunk - overlap:] = np.minimum(w[chunk - overlap:], ramp[::-1])
        out[s:s + chunk] += w[:, None] * model.forward(z[s:s + chunk])
        wsum[s:s + chunk] += w
    return out / wsum[:, None]


def kfold_split(n_items, k=10, seed=0):
    """Seeded partition of ``range(n_items)`` into ``k`` folds of near-equal size."""
    if k < 2 or n_items < k:
        raise ValueError(f"cannot split {n_items} items into {k} folds")
    order = Xoshiro256pp(seed).permutation(n_items)
    sizes = np.full(k, n_items // k)
    sizes[:n_items % k] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [np.sort(order[bounds[i]:bounds[i + 1]]) for i in range(k)]
