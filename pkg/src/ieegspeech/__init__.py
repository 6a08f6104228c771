"""iEEG-to-speech synthesis at desk scale.

Submodules: ``sigproc`` (STFT, filters, Hilbert), ``wavelet`` (db4 DWT),
``features`` (PAC, prosody proxies, feature assembly), ``nn`` (numpy
autoencoder and transformer), ``ihpr`` (harmonic phase-reconstruction
vocoder), ``metrics``, ``dataio``, ``synthetic``, ``pipeline`` and ``cli``.
"""
from .errors import (AlignmentError, ConfigError, FormatError, UndefinedResultError,
                     UnsupportedFormatError)
from .sigproc import StftGrid, Waveform, istft, stft
from .features import FeatureConfig, FeatureMatrix, FrameGrid, assemble_features
from .ihpr import F0Track, IhprConfig, MelSpectrogram, griffin_lim, ihpr_vocode, log_mel
from .metrics import EvalReport, evaluate, hnr, mcd, pearson_spectrogram
from .dataio import MultichannelRecording, Session, align_by_markers
from .config import PipelineConfig

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "ConfigError", "FormatError", "UndefinedResultError",
    "UnsupportedFormatError", "StftGrid", "Waveform", "istft", "stft", "FeatureConfig",
    "FeatureMatrix", "FrameGrid", "assemble_features", "F0Track", "IhprConfig",
    "MelSpectrogram", "griffin_lim", "ihpr_vocode", "log_mel", "EvalReport", "evaluate", "hnr",
    "mcd", "pearson_spectrogram", "MultichannelRecording", "Session", "align_by_markers",
    "PipelineConfig",
]
