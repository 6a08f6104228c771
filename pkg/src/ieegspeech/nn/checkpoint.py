"""Binary model checkpoints.

Layout (little-endian)::

    b"IESP"  u32 version  u32 config_len  config JSON (utf-8)  f64 arrays...

The config JSON carries ``kind``, the model config and a ``params`` list of
``[name, shape]`` in declaration order; the arrays follow in that order.  A
``<path>.json`` sidecar repeats the config for human inspection.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import FormatError, UnsupportedFormatError
from .models import Autoencoder, AutoencoderConfig, SpectrogramTransformer, TransformerConfig

MAGIC = b"IESP"
VERSION = 1
_KINDS = {
    "autoencoder": (Autoencoder, AutoencoderConfig),
    "transformer": (SpectrogramTransformer, TransformerConfig),
}


def save_checkpoint(path, model, extra=None):
    header = {
        "kind": model.kind,
        "config": model.cfg.to_dict(),
        "params": [[name, list(v.shape)] for name, v in model.named_parameters()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, v in model.named_parameters():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    with open(os.fspath(path) + ".json", "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, clen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise UnsupportedFormatError(f"{path}: checkpoint version {version}, expected {VERSION}")
    try:
        header = json.loads(data[12:12 + clen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: invalid config block ({e})") from e
    if header.get("kind") not in _KINDS:
        raise UnsupportedFormatError(f"{path}: unknown model kind {header.get('kind')!r}")
    cls, cfg_cls = _KINDS[header["kind"]]
    model = cls(cfg_cls(**header["config"]))
    expected = [[n, list(v.shape)] for n, v in model.named_parameters()]
    if header["params"] != expected:
        raise FormatError(f"{path}: parameter list does not match a {header['kind']} of this config")
    pos = 12 + clen
    need = pos + 8 * sum(int(np.prod(s)) for _, s in expected)
    if len(data) != need:
        raise FormatError(f"{path}: {len(data)} bytes, expected {need}")
    for _, v in model.named_parameters():
        k = v.size
        v[...] = np.frombuffer(data, dtype="<f8", count=k, offset=pos).reshape(v.shape)
        pos += 8 * k
    return model, header
