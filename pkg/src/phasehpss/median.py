"""Median-filter harmonic/percussive separation on magnitude spectrograms.

Harmonic energy is enhanced by a median along time (horizontal lines),
percussive energy by a median along frequency (vertical lines); a soft or
binary mask built from the two filtered spectrograms splits the mixture.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError
from .spectral import MagSpectrogram

__all__ = [
    "MaskKind",
    "MedianFilterParams",
    "shrinking_median",
    "median_filter_hpss",
    "percussive_mask",
    "complement_magnitude",
]


class MaskKind(enum.Enum):
    BINARY = "binary"
    WIENER_P2 = "wiener"


@dataclass(frozen=True)
class MedianFilterParams:
    time_kernel: int = 17
    freq_kernel: int = 17
    mask_kind: MaskKind = MaskKind.WIENER_P2

    def __post_init__(self):
        for name in ("time_kernel", "freq_kernel"):
            k = getattr(self, name)
            if int(k) != k or k < 3 or k % 2 == 0:
                raise InvalidArgumentError(f"{name} must be odd and >= 3, got {k!r}")
        object.__setattr__(self, "mask_kind", MaskKind(self.mask_kind))


# rows per chunk when materialising sorted windows
_CHUNK_ELEMS = 1 << 22


def shrinking_median(a: np.ndarray, kernel: int, axis: int) -> np.ndarray:
    """Running median of odd width ``kernel`` along ``axis``.

    Windows are truncated at the array edges instead of padded; an even number
    of surviving values takes the lower of the two middle order statistics.
    """
    a = np.asarray(a, dtype=np.float64)
    moved = np.moveaxis(a, axis, -1)
    n = moved.shape[-1]
    half = kernel // 2
    padded = np.pad(moved, [(0, 0)] * (moved.ndim - 1) + [(half, half)],
                    constant_values=np.nan)
    idx = np.arange(n)
    valid = np.minimum(idx + half, n - 1) - np.maximum(idx - half, 0) + 1
    pick = (valid - 1) // 2

    lead = moved.reshape(-1, n)
    padded = padded.reshape(-1, n + 2 * half)
    out = np.empty_like(lead)
    step = max(1, _CHUNK_ELEMS // max(1, n * kernel))
    for start in range(0, lead.shape[0], step):
        win = np.sort(sliding_window_view(padded[start:start + step], kernel, axis=1), axis=-1)
        out[start:start + step] = np.take_along_axis(
            win, np.broadcast_to(pick[None, :, None], (win.shape[0], n, 1)), axis=-1
        )[..., 0]
    return np.moveaxis(out.reshape(moved.shape), -1, axis)


def percussive_mask(P: np.ndarray, H: np.ndarray, kind: MaskKind) -> np.ndarray:
    kind = MaskKind(kind)
    if kind is MaskKind.BINARY:
        return (P >= H).astype(np.float64)
    p2, h2 = P ** 2, H ** 2
    denom = p2 + h2
    mask = np.full_like(denom, 0.5)
    np.divide(p2, denom, out=mask, where=denom > 0)
    return mask


def median_filter_hpss(Vx: MagSpectrogram, params: MedianFilterParams | None = None):
    """Split ``Vx`` into (percussive, harmonic) magnitude estimates."""
    params = params or MedianFilterParams()
    V = Vx.bins
    harmonic_enh = shrinking_median(V, params.time_kernel, axis=1)
    percussive_enh = shrinking_median(V, params.freq_kernel, axis=0)
    mask = percussive_mask(percussive_enh, harmonic_enh, params.mask_kind)
    V1 = mask * V
    V2 = V - V1
    return Vx.with_bins(V1), Vx.with_bins(np.maximum(V2, 0.0))


def complement_magnitude(Vx: MagSpectrogram, V1: MagSpectrogram, return_count: bool = False):
    """Harmonic magnitude as the clamped difference ``max(Vx - V1, 0)``.

    With ``return_count`` the number of clamped entries is returned too.
    """
    if Vx.shape != V1.shape:
        raise InvalidArgumentError(f"shape mismatch {Vx.shape} vs {V1.shape}")
    diff = Vx.bins - V1.bins
    clamped = int(np.count_nonzero(diff < 0))
    V2 = Vx.with_bins(np.maximum(diff, 0.0))
    return (V2, clamped) if return_count else V2
