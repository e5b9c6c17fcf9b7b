"""STFT analysis/synthesis and the spectrogram data model.

Spectrograms are stored as ``F x T`` arrays (frequency bins by time frames)
in Fortran order, so that one time frame is a contiguous column. All
containers are frozen and their arrays are marked read-only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .errors import InvalidArgumentError, NumericError

__all__ = [
    "Setting",
    "StftConfig",
    "Waveform",
    "ComplexSpectrogram",
    "MagSpectrogram",
    "make_setting",
    "analysis_window",
    "stft",
    "istft",
    "magnitude",
    "phase",
    "polar",
    "wrap_phase",
]


class Setting(enum.Enum):
    """The two STFT configurations used for evaluation.

    ``SETTING1``: 46 ms Hamming window, FFT zero-padded by a factor of 2,
    9 ms hop. ``SETTING2``: 92 ms Hamming window, no zero-padding, 23 ms hop.
    """

    SETTING1 = "setting1"
    SETTING2 = "setting2"

    @classmethod
    def parse(cls, value) -> "Setting":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace(" ", "").replace("_", "")
        aliases = {"1": cls.SETTING1, "setting1": cls.SETTING1,
                   "2": cls.SETTING2, "setting2": cls.SETTING2}
        try:
            return aliases[text]
        except KeyError:
            raise InvalidArgumentError(f"unknown setting {value!r}") from None


# (window seconds, hop seconds, zero-padding factor)
_SETTING_DURATIONS = {
    Setting.SETTING1: (0.046, 0.009, 2),
    Setting.SETTING2: (0.092, 0.023, 1),
}

WINDOW_KINDS = ("hamming", "hann", "blackman", "boxcar")


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


@dataclass(frozen=True)
class StftConfig:
    window_length: int
    hop_length: int
    fft_length: int
    window_kind: str = "hamming"
    center_pad: bool = True

    def __post_init__(self):
        for name in ("window_length", "hop_length", "fft_length"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not 0 < self.hop_length <= self.window_length <= self.fft_length:
            raise InvalidArgumentError(
                "need 0 < hop_length <= window_length <= fft_length, got "
                f"hop={self.hop_length} window={self.window_length} fft={self.fft_length}"
            )
        if not _is_pow2(self.fft_length):
            raise InvalidArgumentError(f"fft_length must be a power of two, got {self.fft_length}")
        if self.window_kind not in WINDOW_KINDS:
            raise InvalidArgumentError(f"unsupported window kind {self.window_kind!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_length // 2 + 1

    def as_dict(self) -> dict:
        return {
            "window_length": self.window_length,
            "hop_length": self.hop_length,
            "fft_length": self.fft_length,
            "window_kind": self.window_kind,
            "center_pad": self.center_pad,
        }


def make_setting(setting, sample_rate: int, window_rule: str = "even") -> StftConfig:
    """Build the STFT configuration of an evaluation setting at a given rate.

    Window durations are converted to samples with ``window_rule``:

    ``"even"``
        ``window = 2 * round(duration * fs / 2)``, FFT size the next power of
        two at or above the window (doubled for Setting 1).
    ``"pow2"``
        window rounded up to the next power of two, so that Setting 1 has an
        FFT of exactly twice the window and Setting 2 none at all.

    The hop is ``round(hop_duration * fs)`` under both rules.
    """
    setting = Setting.parse(setting)
    if isinstance(sample_rate, bool) or int(sample_rate) != sample_rate or sample_rate <= 0:
        raise InvalidArgumentError(f"sample_rate must be a positive integer, got {sample_rate!r}")
    win_s, hop_s, pad_factor = _SETTING_DURATIONS[setting]
    even = 2 * int(round(win_s * sample_rate / 2))
    even = max(even, 2)
    if window_rule == "even":
        window = even
    elif window_rule == "pow2":
        window = next_pow2(even)
    else:
        raise InvalidArgumentError(f"unknown window_rule {window_rule!r}")
    fft = pad_factor * next_pow2(window)
    hop = max(1, int(round(hop_s * sample_rate)))
    return StftConfig(window_length=window, hop_length=hop, fft_length=fft)


def analysis_window(cfg: StftConfig) -> np.ndarray:
    """Periodic (DFT-even) analysis window of length ``cfg.window_length``."""
    return get_window(cfg.window_kind, cfg.window_length, fftbins=True).astype(np.float64)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True)
        if x.ndim != 1:
            raise InvalidArgumentError(f"waveform must be one-dimensional, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("waveform contains non-finite samples")
        if isinstance(self.sample_rate, bool) or int(self.sample_rate) != self.sample_rate \
                or self.sample_rate <= 0:
            raise InvalidArgumentError(f"sample_rate must be positive, got {self.sample_rate!r}")
        object.__setattr__(self, "samples", _readonly(x))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class _Spectrogram:
    bins: np.ndarray
    config: StftConfig
    sample_rate: int
    # Number of time samples the spectrogram was computed from; istft trims to it.
    length: int | None = field(default=None)

    _dtype = np.float64

    def __post_init__(self):
        b = np.asfortranarray(np.array(self.bins, dtype=self._dtype, copy=True))
        if b.ndim != 2:
            raise InvalidArgumentError(f"spectrogram must be F x T, got shape {b.shape}")
        if b.shape[0] != self.config.n_bins:
            raise InvalidArgumentError(
                f"expected {self.config.n_bins} bins for fft_length {self.config.fft_length}, "
                f"got {b.shape[0]}"
            )
        if not np.all(np.isfinite(b)):
            raise InvalidArgumentError("spectrogram contains non-finite entries")
        self._check(b)
        object.__setattr__(self, "bins", _readonly(b))

    def _check(self, b):
        pass

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]


@dataclass(frozen=True)
class ComplexSpectrogram(_Spectrogram):
    _dtype = np.complex128

    def with_bins(self, bins) -> "ComplexSpectrogram":
        return ComplexSpectrogram(bins, self.config, self.sample_rate, self.length)


@dataclass(frozen=True)
class MagSpectrogram(_Spectrogram):
    def _check(self, b):
        if np.any(b < 0):
            raise InvalidArgumentError("magnitude spectrogram has negative entries")

    def with_bins(self, bins) -> "MagSpectrogram":
        return MagSpectrogram(bins, self.config, self.sample_rate, self.length)


def _frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if cfg.center_pad:
        half = cfg.window_length // 2
        x = np.pad(x, half, mode="reflect") if x.size > 1 else np.pad(x, half)
    if x.size < cfg.window_length:
        raise InvalidArgumentError(
            f"signal of {x.size} samples is shorter than one window ({cfg.window_length})"
        )
    return sliding_window_view(x, cfg.window_length)[:: cfg.hop_length]


def stft(x: Waveform, cfg: StftConfig) -> ComplexSpectrogram:
    """One-sided STFT. Frame ``t`` starts at sample ``t * hop`` of the
    (optionally reflect-padded) signal; the window is applied before the
    frame is zero-padded at its end to ``fft_length``."""
    samples = np.asarray(x.samples, dtype=np.float64)
    if samples.size == 0:
        raise InvalidArgumentError("cannot analyse an empty waveform")
    frames = _frames(samples, cfg) * analysis_window(cfg)
    spec = np.fft.rfft(frames, n=cfg.fft_length, axis=1).T
    return ComplexSpectrogram(spec, cfg, x.sample_rate, samples.size)


def _window_power(cfg: StftConfig, n_frames: int) -> np.ndarray:
    w2 = analysis_window(cfg) ** 2
    total = (n_frames - 1) * cfg.hop_length + cfg.window_length
    acc = np.zeros(total)
    for t in range(n_frames):
        acc[t * cfg.hop_length: t * cfg.hop_length + cfg.window_length] += w2
    return acc


def istft(S: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Least-squares inverse STFT.

    Each frame is inverse-transformed, truncated to the window length,
    multiplied by the synthesis (= analysis) window and overlap-added; the
    sum is divided by the overlap-added squared window. The result is
    trimmed to ``length`` (default: the analysed signal length).
    """
    cfg = S.config
    win = analysis_window(cfg)
    n_frames = S.n_frames
    frames = np.fft.irfft(np.ascontiguousarray(S.bins.T), n=cfg.fft_length, axis=1)
    frames = frames[:, : cfg.window_length] * win
    total = (n_frames - 1) * cfg.hop_length + cfg.window_length
    out = np.zeros(total)
    for t in range(n_frames):
        out[t * cfg.hop_length: t * cfg.hop_length + cfg.window_length] += frames[t]
    power = _window_power(cfg, n_frames)

    start = cfg.window_length // 2 if cfg.center_pad else 0
    if length is None:
        length = S.length if S.length is not None else total - 2 * start
    stop = start + length
    covered = min(stop, total)
    if np.any(power[start:covered] < 1e-10):
        raise NumericError("zero window power inside the synthesis range")
    y = np.zeros(length)
    y[: covered - start] = out[start:covered] / power[start:covered]
    return Waveform(y, S.sample_rate)


def wrap_phase(phi):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phi, dtype=np.float64), 2 * np.pi)


def magnitude(S: ComplexSpectrogram) -> MagSpectrogram:
    return MagSpectrogram(np.abs(S.bins), S.config, S.sample_rate, S.length)


def phase(S: ComplexSpectrogram) -> np.ndarray:
    """Elementwise argument in (-pi, pi]; zero entries have phase 0."""
    return wrap_phase(np.angle(S.bins))


def polar(V: MagSpectrogram, phi) -> ComplexSpectrogram:
    if not isinstance(V, MagSpectrogram):
        raise InvalidArgumentError("polar needs a MagSpectrogram to carry the STFT configuration")
    values = V.bins
    phi = np.asarray(phi, dtype=np.float64)
    if values.shape != phi.shape:
        raise InvalidArgumentError(f"shape mismatch {values.shape} vs {phi.shape}")
    return ComplexSpectrogram(values * np.exp(1j * phi), V.config, V.sample_rate, V.length)


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    pad = 2 * (cfg.window_length // 2) if cfg.center_pad else 0
    return (n_samples + pad - cfg.window_length) // cfg.hop_length + 1

