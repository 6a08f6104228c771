"""One JSON document configuring every pipeline stage.

Each section maps onto a module config; unknown sections or keys are errors
and every value is type-checked against its default before a stage runs.
"""
from __future__ import annotations

import copy
import json
from dataclasses import fields

from .errors import ConfigError
from .features import FeatureConfig
from .ihpr import IhprConfig
from .nn.training import TrainConfig
from .synthetic import SyntheticConfig


def _defaults_of(cls, skip=()):
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        v = f.default
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def default_config():
    return {
        "seed": 42,
        "frames": {"win_ms": 50.0, "hop_ms": 10.0},
        "preprocess": {"band": [0.5, 170.0], "order": 4, "line_hz": 50.0, "n_harmonics": 3},
        "features": _defaults_of(FeatureConfig),
        "stft": {"fft_size": 1024, "hop": 160, "win_len": 800, "n_mels": 80},
        "autoencoder": {"hidden": 128, "latent": 32},
        "transformer": {"d_model": 64, "n_heads": 4, "n_layers": 2, "d_ff": 256, "use_pe": True},
        "train": {**_defaults_of(TrainConfig, skip=("seed",)),
                  "segment_frames": 100, "test_fraction": 0.2},
        "ihpr": {**_defaults_of(IhprConfig, skip=("seed",)), "weight_table": None},
        "synthetic": _defaults_of(SyntheticConfig),
        "paths": {"marker": "start"},
    }


# keys whose default is None and so carry no type information
_NULLABLE = {("ihpr", "weight_table")}


def _check_type(path, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list) and len(value) == len(default)
        if ok:
            for i, (v, d) in enumerate(zip(value, default)):
                _check_type(f"{path}[{i}]", v, d)
    else:
        ok = True
    if not ok:
        raise ConfigError(path, f"expected {type(default).__name__} like {default!r}, got {value!r}")


def merge(base, override, path=""):
    out = copy.deepcopy(base)
    if not isinstance(override, dict):
        raise ConfigError(path or "<root>", "expected a JSON object")
    for k, v in override.items():
        key = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict):
            out[k] = merge(base[k], v, key)
        elif tuple(key.split(".")) in _NULLABLE:
            out[k] = v
        else:
            _check_type(key, v, base[k])
            out[k] = float(v) if isinstance(base[k], float) else v
    return out


class PipelineConfig:
    """Validated configuration; build module configs with the ``*_config`` helpers."""

    def __init__(self, data=None):
        self.data = merge(default_config(), data or {})
        self._validate()

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(str(path), f"invalid JSON ({e.msg} at line {e.lineno})") from e
        return cls(data)

    def override(self, **flat):
        """Apply ``section__key=value`` overrides (CLI flags); None values are skipped."""
        upd = {}
        for k, v in flat.items():
            if v is None:
                continue
            parts = k.split("__")
            d = upd
            for p in parts[:-1]:
                d = d.setdefault(p, {})
            d[parts[-1]] = v
        return PipelineConfig(merge(self.data, upd))

    def _section(self, name, builder):
        try:
            return builder()
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(name, str(e)) from e

    def _validate(self):
        self.feature_config()
        self.train_config()
        self.ihpr_config()
        self.synthetic_config()
        t = self.data["train"]
        if t["segment_frames"] < 2:
            raise ConfigError("train.segment_frames", "must be >= 2")
        if not 0.0 < t["test_fraction"] < 1.0:
            raise ConfigError("train.test_fraction", "must lie in (0, 1)")
        tr = self.data["transformer"]
        if tr["d_model"] % tr["n_heads"]:
            raise ConfigError("transformer.n_heads", "must divide transformer.d_model")
        st, fr = self.data["stft"], self.data["frames"]
        fs = self.data["synthetic"]["fs_audio"]
        if abs(st["win_len"] - fr["win_ms"] * fs / 1000) > 0.5 or abs(st["hop"] - fr["hop_ms"] * fs / 1000) > 1e-9:
            raise ConfigError("stft", "win_len/hop must equal frames.win_ms/hop_ms at the audio rate")
        lo, hi = self.data["preprocess"]["band"]
        if not 0 < lo < hi:
            raise ConfigError("preprocess.band", f"need 0 < low < high, got {[lo, hi]}")

    @property
    def seed(self):
        return self.data["seed"]

    def feature_config(self):
        d = dict(self.data["features"])
        d["theta"], d["gamma"] = tuple(d["theta"]), tuple(d["gamma"])
        return self._section("features", lambda: FeatureConfig(**d))

    def train_config(self):
        d = {k: v for k, v in self.data["train"].items()
             if k not in ("segment_frames", "test_fraction")}
        return self._section("train", lambda: TrainConfig(seed=self.seed, **d))

    def ihpr_config(self):
        d = dict(self.data["ihpr"])
        if d["weight_table"] is not None:
            d["weight_table"] = tuple(tuple(p) for p in d["weight_table"])
        return self._section("ihpr", lambda: IhprConfig(seed=self.seed, **d))

    def synthetic_config(self):
        d = dict(self.data["synthetic"])
        d["f0_range"] = tuple(d["f0_range"])
        return self._section("synthetic", lambda: SyntheticConfig(**d))

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True)

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")
