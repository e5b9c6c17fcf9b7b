"""WAV input and output (PCM 16/24-bit and 32-bit float, mono or stereo)."""

from __future__ import annotations

import logging
import wave
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from .errors import DataError, InvalidArgumentError
from .spectral import Waveform

__all__ = ["read_wav", "write_wav", "to_mono", "WAV_FORMATS"]

log = logging.getLogger(__name__)

WAV_FORMATS = ("pcm16", "pcm24", "float32")


def to_mono(data: np.ndarray) -> np.ndarray:
    """Average the channels of a (n, channels) array; 1-D input is returned as is."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        return data
    if data.ndim != 2:
        raise InvalidArgumentError(f"audio must be 1-D or (n, channels), got {data.shape}")
    return data.mean(axis=1)


def _to_float(data: np.ndarray, path) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        # scipy returns 24-bit PCM left-justified in int32
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise DataError(f"{path}: unsupported sample type {data.dtype}")


def read_wav(path) -> Waveform:
    """Decode a WAV file to float64 samples in [-1, 1); stereo is down-mixed by (L+R)/2."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"audio file {path} not found")
    try:
        rate, data = scipy.io.wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise DataError(f"{path}: cannot decode WAV ({exc})") from exc
    samples = _to_float(data, path)
    if samples.ndim == 2 and samples.shape[1] > 2:
        raise DataError(f"{path}: {samples.shape[1]} channels; only mono or stereo is supported")
    try:
        return Waveform(to_mono(samples), int(rate))
    except InvalidArgumentError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_wav(path, wav: Waveform, fmt: str = "float32") -> None:
    """Write a mono waveform; integer formats are clipped to full scale."""
    if fmt not in WAV_FORMATS:
        raise InvalidArgumentError(f"format must be one of {WAV_FORMATS}, got {fmt!r}")
    x = np.asarray(wav.samples, dtype=np.float64)
    if fmt == "float32":
        scipy.io.wavfile.write(path, wav.sample_rate, x.astype(np.float32))
        return
    bits = 16 if fmt == "pcm16" else 24
    full = float(2 ** (bits - 1))
    clipped = np.clip(np.round(x * full), -full, full - 1)
    n_clipped = int(np.count_nonzero(np.abs(x * full) > full))
    if n_clipped:
        log.warning("%d samples clipped while writing %s", n_clipped, path)
    ints = clipped.astype(np.int32)
    if bits == 16:
        scipy.io.wavfile.write(path, wav.sample_rate, ints.astype(np.int16))
        return
    # 24-bit little-endian: low three bytes of each int32
    raw = ints.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(3)
        fh.setframerate(wav.sample_rate)
        fh.writeframes(raw)
