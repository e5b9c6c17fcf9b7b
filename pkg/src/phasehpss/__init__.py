"""Harmonic/percussive source separation with sinusoidal-model phase recovery."""

from .errors import (
    ConfigError,
    DataError,
    HpssError,
    InvalidArgumentError,
    NumericError,
    TrainingError,
)
from .spectral import (
    ComplexSpectrogram,
    MagSpectrogram,
    Setting,
    StftConfig,
    Waveform,
    istft,
    magnitude,
    make_setting,
    phase,
    polar,
    stft,
)

__version__ = "0.1.0"

__all__ = [
    "ComplexSpectrogram",
    "ConfigError",
    "DataError",
    "HpssError",
    "InvalidArgumentError",
    "MagSpectrogram",
    "NumericError",
    "Setting",
    "StftConfig",
    "TrainingError",
    "Waveform",
    "istft",
    "magnitude",
    "make_setting",
    "phase",
    "polar",
    "stft",
]
