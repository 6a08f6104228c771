"""Session container, on-disk formats and marker alignment.

Matrix files are a raw little-endian float32 body (row-major) next to a JSON
sidecar ``<path>.json`` holding ``{rows, cols, fs, labels, dtype}``.  Audio is
16-bit PCM mono RIFF/WAVE.
"""
from __future__ import annotations

import json
import os
import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, FormatError, UnsupportedFormatError
from .sigproc import Waveform

MATRIX_DTYPE = "f32le"
PCM_SCALE = 32768.0


@dataclass
class MultichannelRecording:
    channels: np.ndarray  # C x N
    fs: float
    labels: list
    markers: list = field(default_factory=list)  # (sample index, label), sorted

    def __post_init__(self):
        self.channels = np.atleast_2d(np.asarray(self.channels, dtype=np.float64))
        if len(self.labels) != self.channels.shape[0]:
            raise ValueError(
                f"{len(self.labels)} labels for {self.channels.shape[0]} channels")
        if not self.fs > 0:
            raise ValueError(f"sample rate must be positive, got {self.fs}")
        self.markers = sorted((int(s), str(lab)) for s, lab in self.markers)

    @property
    def n_samples(self):
        return self.channels.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.fs


@dataclass
class Session:
    recording: MultichannelRecording
    audio: Waveform
    offset: int  # recording samples dropped before the alignment marker
    metadata: dict = field(default_factory=dict)


# -- matrices --------------------------------------------------------------

def sidecar_path(path):
    return os.fspath(path) + ".json"


def write_matrix(path, matrix, fs=None, labels=None, extra=None):
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        m = m.reshape(0, 0) if m.size == 0 else np.atleast_2d(m)
    header = {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "fs": fs,
              "labels": list(labels) if labels is not None else None,
              "dtype": MATRIX_DTYPE}
    if extra:
        header.update(extra)
    with open(path, "wb") as f:
        f.write(m.astype("<f4").tobytes(order="C"))
    with open(sidecar_path(path), "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)
    return header


def read_matrix(path):
    """Return ``(matrix, header)``; the matrix is float64."""
    try:
        with open(sidecar_path(path)) as f:
            header = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{sidecar_path(path)}: invalid JSON header ({e})") from e
    for key in ("rows", "cols", "dtype"):
        if key not in header:
            raise FormatError(f"{sidecar_path(path)}: header lacks '{key}'")
    if header["dtype"] != MATRIX_DTYPE:
        raise UnsupportedFormatError(f"{path}: dtype {header['dtype']!r}, expected {MATRIX_DTYPE}")
    rows, cols = int(header["rows"]), int(header["cols"])
    with open(path, "rb") as f:
        body = f.read()
    expected = rows * cols * 4
    if len(body) != expected:
        raise FormatError(
            f"{path}: body is {len(body)} bytes, header {rows}x{cols} f32 needs {expected}")
    m = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols)
    return m, header


# -- audio -----------------------------------------------------------------

def write_wav(path, w):
    """Write 16-bit PCM mono; returns the number of saturated samples."""
    q = np.round(w.samples * PCM_SCALE)
    clipped = int(np.count_nonzero((q > 32767) | (q < -32768)))
    pcm = np.clip(q, -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(round(w.fs)))
        f.writeframes(pcm.tobytes())
    return clipped


def read_wav(path):
    try:
        with wave.open(os.fspath(path), "rb") as f:
            nch, width, fs = f.getnchannels(), f.getsampwidth(), f.getframerate()
            if nch != 1 or width != 2:
                raise UnsupportedFormatError(
                    f"{path}: {nch} channel(s), {8 * width}-bit; only 16-bit PCM mono is read")
            raw = f.readframes(f.getnframes())
    except wave.Error as e:
        raise UnsupportedFormatError(f"{path}: {e}") from e
    except EOFError as e:
        raise FormatError(f"{path}: truncated WAV file") from e
    if len(raw) % 2:
        raise FormatError(f"{path}: odd number of PCM bytes ({len(raw)})")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    return Waveform(x, float(fs))


def wav_header(path):
    with wave.open(os.fspath(path), "rb") as f:
        return {"fs": f.getframerate(), "bits": 8 * f.getsampwidth(),
                "channels": f.getnchannels(), "frames": f.getnframes()}


# -- recordings ------------------------------------------------------------

def write_recording(directory, rec):
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "recording.f32"), rec.channels, rec.fs, rec.labels)
    with open(os.path.join(directory, "markers.json"), "w") as f:
        json.dump([{"sample": s, "label": lab} for s, lab in rec.markers], f, indent=2)


def read_recording(directory):
    m, header = read_matrix(os.path.join(directory, "recording.f32"))
    with open(os.path.join(directory, "markers.json")) as f:
        markers = [(d["sample"], d["label"]) for d in json.load(f)]
    labels = header.get("labels") or [f"ch{i}" for i in range(m.shape[0])]
    if header.get("fs") is None:
        raise FormatError(f"{directory}: recording header has no sample rate")
    return MultichannelRecording(m, float(header["fs"]), labels, markers)


def align_by_markers(rec, audio, marker_label, metadata=None):
    """Crop recording and audio to their common span after the first marker.

    The audio is taken to start at the marker; recording sample ``m`` maps to
    audio sample 0.
    """
    hits = [s for s, lab in rec.markers if lab == marker_label]
    if not hits:
        raise AlignmentError(f"no marker labelled {marker_label!r}")
    m = hits[0]
    if not 0 <= m < rec.n_samples:
        raise AlignmentError(f"marker at sample {m} lies outside the recording ({rec.n_samples})")
    span = min((rec.n_samples - m) / rec.fs, audio.duration)
    n_rec = int(round(span * rec.fs))
    n_aud = int(round(span * audio.fs))
    markers = [(s - m, lab) for s, lab in rec.markers if m <= s < m + n_rec]
    cropped = MultichannelRecording(rec.channels[:, m:m + n_rec], rec.fs, rec.labels, markers)
    return Session(cropped, Waveform(audio.samples[:n_aud], audio.fs), m, dict(metadata or {}))
