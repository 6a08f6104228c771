"""Layers with explicit forward/backward passes on float64 numpy arrays.

Leading axes are batch axes; the last axis is the feature axis.  Each module
keeps the cache of its most recent forward call, so ``backward`` must follow
the matching ``forward``.  Gradients accumulate into ``grads`` until
``zero_grad``.
"""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-8


def glorot_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


# -- functional cores ------------------------------------------------------

def dense_forward(W, b, x):
    """``y = W x + b`` applied along the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(
            f"dense shapes incompatible: W {W.shape}, b {b.shape}, x {x.shape}")
    return x @ W.T + b


def dense_backward(W, x, dy):
    """Return ``(dW, db, dx)`` for ``y = W x + b`` given ``dL/dy``."""
    x2 = x.reshape(-1, W.shape[1])
    dy2 = dy.reshape(-1, W.shape[0])
    return dy2.T @ x2, dy2.sum(axis=0), dy @ W


def softmax(s, axis=-1):
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def positional_encoding(length, d_model):
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, :d_model // 2])
    return pe


# -- modules ---------------------------------------------------------------

class Module:
    """Ordered parameters plus child modules."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.children = []

    def add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def add_child(self, name, module):
        self.children.append((name, module))
        setattr(self, name, module)
        return module

    def named_parameters(self, prefix=""):
        for k, v in self.params.items():
            yield prefix + k, v
        for name, child in self.children:
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_grads(self, prefix=""):
        for k, v in self.grads.items():
            yield prefix + k, v
        for name, child in self.children:
            yield from child.named_grads(f"{prefix}{name}.")

    def parameter_refs(self):
        """``(owner, key)`` pairs in declaration order, for in-place updates."""
        out = [(self, k) for k in self.params]
        for _, child in self.children:
            out.extend(child.parameter_refs())
        return out

    def zero_grad(self):
        for k in self.grads:
            self.grads[k][...] = 0.0
        for _, child in self.children:
            child.zero_grad()

    def n_parameters(self):
        return sum(v.size for _, v in self.named_parameters())


class Dense(Module):
    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        if rng is None:
            W = np.zeros((n_out, n_in))
        else:
            a = glorot_bound(n_in, n_out)
            W = rng.uniform(-a, a, (n_out, n_in))
        self.add_param("W", W)
        self.add_param("b", np.zeros(n_out))

    def forward(self, x):
        self._x = x
        return dense_forward(self.params["W"], self.params["b"], x)

    def backward(self, dy):
        dW, db, dx = dense_backward(self.params["W"], self._x, dy)
        self.grads["W"] += dW
        self.grads["b"] += db
        return dx


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class LayerNorm(Module):
    def __init__(self, d, eps=LN_EPS):
        super().__init__()
        self.eps = eps
        self.add_param("g", np.ones(d))
        self.add_param("b", np.zeros(d))

    def normalize(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + self.eps), var

    def forward(self, x):
        xhat, var = self.normalize(x)
        self._xhat = xhat
        self._inv = 1.0 / np.sqrt(var + self.eps)
        return xhat * self.params["g"] + self.params["b"]

    def backward(self, dy):
        xhat = self._xhat
        lead = tuple(range(dy.ndim - 1))
        self.grads["g"] += np.sum(dy * xhat, axis=lead)
        self.grads["b"] += np.sum(dy, axis=lead)
        dxhat = dy * self.params["g"]
        return self._inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                            - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))


class MultiHeadSelfAttention(Module):
    """Non-causal scaled dot-product attention over the sequence axis."""

    def __init__(self, d_model, n_heads, rng=None):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d_model, self.n_heads = d_model, n_heads
        self.d_head = d_model // n_heads
        for name in ("q", "k", "v", "o"):
            self.add_child(name, Dense(d_model, d_model, rng))

    def _split(self, x):
        B, T, _ = x.shape
        return x.reshape(B, T, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, _, T, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, self.d_model)

    def forward(self, x):
        """``x`` is ``(B, T, d_model)`` or ``(T, d_model)``."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise ValueError(f"attention input {x.shape} does not end in d_model={self.d_model}")
        Q = self._split(self.q.forward(x))
        K = self._split(self.k.forward(x))
        V = self._split(self.v.forward(x))
        scale = 1.0 / np.sqrt(self.d_head)
        A = softmax(Q @ K.transpose(0, 1, 3, 2) * scale)
        O = A @ V
        y = self.o.forward(self._merge(O))
        self._cache = (Q, K, V, A, scale, squeeze)
        self.attention = A
        return y[0] if squeeze else y

    def backward(self, dy):
        Q, K, V, A, scale, squeeze = self._cache
        if squeeze:
            dy = dy[None]
        dO = self._split(self.o.backward(dy))
        dA = dO @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dO
        dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q
        dx = (self.q.backward(self._merge(dQ)) + self.k.backward(self._merge(dK))
              + self.v.backward(self._merge(dV)))
        return dx[0] if squeeze else dx


class FeedForward(Module):
    def __init__(self, d_model, d_ff, rng=None):
        super().__init__()
        self.add_child("fc1", Dense(d_model, d_ff, rng))
        self.add_child("act", ReLU())
        self.add_child("fc2", Dense(d_ff, d_model, rng))

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))


class EncoderBlock(Module):
    """Pre-norm block: ``h = x + attn(ln1(x)); y = h + ffn(ln2(h))``."""

    def __init__(self, d_model, n_heads, d_ff, rng=None):
        super().__init__()
        self.add_child("ln1", LayerNorm(d_model))
        self.add_child("attn", MultiHeadSelfAttention(d_model, n_heads, rng))
        self.add_child("ln2", LayerNorm(d_model))
        self.add_child("ffn", FeedForward(d_model, d_ff, rng))

    def forward(self, x):
        h = x + self.attn.forward(self.ln1.forward(x))
        return h + self.ffn.forward(self.ln2.forward(h))

    def backward(self, dy):
        dh = dy + self.ln2.backward(self.ffn.backward(dy))
        return dh + self.ln1.backward(self.attn.backward(dh))
