"""Feature autoencoder and latent-to-mel transformer."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import Dense, EncoderBlock, Module, ReLU, positional_encoding
from .rng import Xoshiro256pp


@dataclass(frozen=True)
class AutoencoderConfig:
    in_dim: int
    hidden: int = 128
    latent: int = 32

    def __post_init__(self):
        if min(self.in_dim, self.hidden, self.latent) < 1:
            raise ValueError(f"autoencoder dims must be positive: {self}")

    def to_dict(self):
        return asdict(self)


class Autoencoder(Module):
    """``in -> hidden (ReLU) -> latent`` and back.

    The bottleneck itself is linear so the network can represent the
    identity when ``latent == in_dim``.
    """

    kind = "autoencoder"

    def __init__(self, cfg: AutoencoderConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = Xoshiro256pp(seed)
        self.add_child("enc1", Dense(cfg.in_dim, cfg.hidden, rng))
        self.add_child("enc_act", ReLU())
        self.add_child("enc2", Dense(cfg.hidden, cfg.latent, rng))
        self.add_child("dec1", Dense(cfg.latent, cfg.hidden, rng))
        self.add_child("dec_act", ReLU())
        self.add_child("dec2", Dense(cfg.hidden, cfg.in_dim, rng))

    def _check(self, x, dim, what):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != dim:
            raise ValueError(f"{what} has {x.shape[-1]} columns, model expects {dim}")
        return x

    def encode(self, x):
        x = self._check(x, self.cfg.in_dim, "input")
        return self.enc2.forward(self.enc_act.forward(self.enc1.forward(x)))

    def decode(self, z):
        z = self._check(z, self.cfg.latent, "latent")
        return self.dec2.forward(self.dec_act.forward(self.dec1.forward(z)))

    def forward(self, x):
        return self.decode(self.encode(x))

    def backward(self, dy):
        dz = self.dec1.backward(self.dec_act.backward(self.dec2.backward(dy)))
        return self.enc1.backward(self.enc_act.backward(self.enc2.backward(dz)))


@dataclass(frozen=True)
class TransformerConfig:
    latent: int = 32
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    n_mels: int = 80
    use_pe: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if min(self.latent, self.d_model, self.n_heads, self.d_ff, self.n_mels) < 1 or self.n_layers < 0:
            raise ValueError(f"transformer sizes must be positive: {self}")

    def to_dict(self):
        return asdict(self)


class SpectrogramTransformer(Module):
    """Input projection, sinusoidal position code, pre-norm encoder, output projection."""

    kind = "transformer"

    def __init__(self, cfg: TransformerConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = Xoshiro256pp(seed)
        self.add_child("inp", Dense(cfg.latent, cfg.d_model, rng))
        self.blocks = []
        for i in range(cfg.n_layers):
            self.blocks.append(self.add_child(
                f"block{i}", EncoderBlock(cfg.d_model, cfg.n_heads, cfg.d_ff, rng)))
        self.add_child("out", Dense(cfg.d_model, cfg.n_mels, rng))

    def forward(self, x):
        """``x`` is ``(T, latent)`` or ``(B, T, latent)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (2, 3) or x.shape[-1] != self.cfg.latent or x.shape[-2] < 1:
            raise ValueError(f"transformer input {x.shape}, expected (..., T>=1, {self.cfg.latent})")
        h = self.inp.forward(x)
        if self.cfg.use_pe:
            h = h + positional_encoding(x.shape[-2], self.cfg.d_model)
        for blk in self.blocks:
            h = blk.forward(h)
        return self.out.forward(h)

    def backward(self, dy):
        dh = self.out.backward(dy)
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        return self.inp.backward(dh)
