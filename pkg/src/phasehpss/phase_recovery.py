"""Phase recovery from magnitude estimates.

Two reconstructions are provided for the harmonic/percussive pair:

* :func:`mixture_phase_reconstruct` gives both sources the mixture phase.
* :func:`pu_hpss` initialises the percussive phase from the mixture and the
  harmonic phase from a sinusoidal model (phase advanced by ``2*pi*hop*nu``
  from the previous frame), then redistributes the mixing error
  ``x - s1 - s2`` with Wiener-like gains while enforcing the target
  magnitudes. Frames are processed left to right since the harmonic
  initialisation depends on the previous frame's result.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .spectral import ComplexSpectrogram, MagSpectrogram, wrap_phase

__all__ = [
    "AssignRule",
    "PuHpssConfig",
    "GainField",
    "FrequencyField",
    "PuHpssResult",
    "mixture_phase_reconstruct",
    "wiener_gains",
    "find_peaks",
    "qifft_offset",
    "estimate_frequencies",
    "unwrap_phase_step",
    "pu_hpss",
    "mixing_error",
]

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class AssignRule(enum.Enum):
    NEAREST_PEAK = "nearest"
    LOBE_SPLIT = "lobe"


@dataclass(frozen=True)
class PuHpssConfig:
    max_iter: int = 50
    peak_neighborhood: int = 1
    assign_rule: AssignRule = AssignRule.NEAREST_PEAK

    def __post_init__(self):
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise InvalidArgumentError(f"max_iter must be a non-negative integer, got {self.max_iter!r}")
        if int(self.peak_neighborhood) != self.peak_neighborhood or self.peak_neighborhood < 1:
            raise InvalidArgumentError("peak_neighborhood must be a positive integer")
        object.__setattr__(self, "max_iter", int(self.max_iter))
        object.__setattr__(self, "assign_rule", AssignRule(self.assign_rule))


@dataclass(frozen=True)
class GainField:
    percussive: np.ndarray
    harmonic: np.ndarray


@dataclass(frozen=True)
class FrequencyField:
    """Normalized frequencies (cycles per sample) per channel and frame."""

    nu: np.ndarray
    n_peaks: np.ndarray


@dataclass
class PuHpssResult:
    percussive: ComplexSpectrogram
    harmonic: ComplexSpectrogram
    # mixing error per frame (rows) after 0..max_iter inner iterations (columns)
    mixing_error: np.ndarray
    frequencies: FrequencyField


def _check_shapes(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"shape mismatch: {sorted(shapes)}")


def mixture_phase_reconstruct(V1: MagSpectrogram, V2: MagSpectrogram, X: ComplexSpectrogram):
    """Attach the mixture phase to both magnitude estimates."""
    _check_shapes(V1, V2, X)
    unit = np.exp(1j * np.angle(X.bins))
    return X.with_bins(V1.bins * unit), X.with_bins(V2.bins * unit)


def wiener_gains(V1, V2) -> GainField:
    """Squared-magnitude ratios ``Vj^2 / (V1^2 + V2^2)``; 0/0 gives 0.5 each."""
    a = np.asarray(getattr(V1, "bins", V1), dtype=np.float64)
    b = np.asarray(getattr(V2, "bins", V2), dtype=np.float64)
    _check_shapes(a, b)
    p1, p2 = a * a, b * b
    denom = p1 + p2
    g1 = np.full_like(denom, 0.5)
    np.divide(p1, denom, out=g1, where=denom > 0)
    g2 = np.full_like(denom, 0.5)
    np.divide(p2, denom, out=g2, where=denom > 0)
    return GainField(g1, g2)


def find_peaks(frame: np.ndarray, neighborhood: int = 1, floor: float = LOG_FLOOR) -> np.ndarray:
    """Indices of strict local maxima over ``+-neighborhood`` bins.

    The first and last bins are never peaks (interpolation needs both
    neighbours); values at or below ``floor`` are ignored.
    """
    v = np.asarray(frame, dtype=np.float64)
    n = v.size
    if n < 3:
        return np.zeros(0, dtype=int)
    cand = np.zeros(n, dtype=bool)
    cand[1:-1] = v[1:-1] > floor
    for j in range(1, neighborhood + 1):
        left = np.full(n, -np.inf)
        left[j:] = v[:-j]
        right = np.full(n, -np.inf)
        right[:-j] = v[j:]
        cand &= (v > left) & (v > right)
    return np.flatnonzero(cand)


def qifft_offset(alpha, beta, gamma):
    """Vertex of the parabola through (-1, alpha), (0, beta), (1, gamma).

    Arguments are log-magnitudes. Non-concave triples yield 0; the result is
    clamped to [-0.5, 0.5].
    """
    alpha, beta, gamma = (np.asarray(v, dtype=np.float64) for v in (alpha, beta, gamma))
    curv = alpha - 2.0 * beta + gamma
    delta = np.zeros(np.broadcast(alpha, beta, gamma).shape)
    ok = curv < 0
    np.divide(0.5 * (alpha - gamma), curv, out=delta, where=ok)
    return np.clip(delta, -0.5, 0.5)


def _assign(n_bins, peaks, values, rule):
    """Map every channel to the index (into ``peaks``) of its peak."""
    if rule is AssignRule.NEAREST_PEAK:
        f = np.arange(n_bins)
        right = np.clip(np.searchsorted(peaks, f), 0, len(peaks) - 1)
        left = np.clip(right - 1, 0, len(peaks) - 1)
        # ties go to the lower peak
        use_left = np.abs(f - peaks[left]) <= np.abs(peaks[right] - f)
        return np.where(use_left, left, right)
    owner = np.empty(n_bins, dtype=int)
    start = 0
    for i in range(len(peaks) - 1):
        lo, hi = peaks[i], peaks[i + 1]
        boundary = lo + int(np.argmin(values[lo:hi + 1]))
        owner[start:boundary + 1] = i
        start = boundary + 1
    owner[start:] = len(peaks) - 1
    return owner


def estimate_frequencies(V2: MagSpectrogram, cfg: PuHpssConfig | None = None) -> FrequencyField:
    """Per-frame sinusoid frequencies by quadratic interpolation on log-spectra.

    Peaks are picked in every frame of ``V2``; channels take the frequency of
    the peak they are assigned to. Frames without a peak fall back to the
    channel centre frequency ``f / fft_length``.
    """
    cfg = cfg or PuHpssConfig()
    V = V2.bins
    n_bins, n_frames = V.shape
    N = V2.config.fft_length
    logv = np.log(np.maximum(V, LOG_FLOOR))
    centres = np.arange(n_bins) / N
    nu = np.empty((n_bins, n_frames))
    counts = np.zeros(n_frames, dtype=int)
    for t in range(n_frames):
        col = V[:, t]
        peaks = find_peaks(col, cfg.peak_neighborhood)
        counts[t] = peaks.size
        if peaks.size == 0:
            nu[:, t] = centres
            continue
        lv = logv[:, t]
        delta = qifft_offset(lv[peaks - 1], lv[peaks], lv[peaks + 1])
        peak_nu = (peaks + delta) / N
        nu[:, t] = peak_nu[_assign(n_bins, peaks, col, cfg.assign_rule)]
    np.clip(nu, 0.0, 0.5, out=nu)
    return FrequencyField(nu, counts)


def unwrap_phase_step(phi_prev, hop, nu):
    """Advance a phase by one hop of a sinusoid at normalized frequency ``nu``."""
    return wrap_phase(np.asarray(phi_prev, dtype=np.float64) + 2.0 * np.pi * hop * np.asarray(nu))


def mixing_error(X, S1, S2) -> float:
    return float(np.sum(np.abs(X - S1 - S2) ** 2))


def _project(v, y, fallback):
    mag = np.abs(y)
    unit = fallback.copy()
    nz = mag > 0
    unit[nz] = y[nz] / mag[nz]
    return v * unit, unit


def pu_hpss(X: ComplexSpectrogram, V1: MagSpectrogram, V2: MagSpectrogram,
            cfg: PuHpssConfig | None = None, frequencies: FrequencyField | None = None) -> PuHpssResult:
    """Sinusoidal-model phase recovery for a percussive/harmonic pair.

    Frame 0 takes the mixture phase for both sources. For ``t >= 1`` the
    percussive phase starts at the mixture phase and the harmonic phase at
    the previous harmonic phase advanced by ``2*pi*hop*nu``; then
    ``cfg.max_iter`` updates ``y_j = s_j + g_j (x - s_1 - s_2)``,
    ``s_j = v_j y_j / |y_j|`` follow. Where ``|y_j| == 0`` the previous phase
    of that entry is kept.

    Returns both complex estimates, the per-frame mixing error after each
    inner iteration and the frequency field used.
    """
    cfg = cfg or PuHpssConfig()
    _check_shapes(X, V1, V2)
    x = X.bins
    v1, v2 = V1.bins, V2.bins
    gains = wiener_gains(v1, v2)
    g1, g2 = gains.percussive, gains.harmonic
    freqs = frequencies if frequencies is not None else estimate_frequencies(V2, cfg)
    if freqs.nu.shape != x.shape:
        raise InvalidArgumentError("frequency field does not match the spectrogram shape")
    hop = X.config.hop_length
    n_bins, n_frames = x.shape

    S1 = np.empty_like(x)
    S2 = np.empty_like(x)
    trace = np.empty((n_frames, cfg.max_iter + 1))
    if n_frames == 0:
        return PuHpssResult(X.with_bins(S1), X.with_bins(S2), trace, freqs)

    mix_unit = np.exp(1j * np.angle(x))
    log.debug("frame 0: both sources initialised with the mixture phase")
    S1[:, 0] = v1[:, 0] * mix_unit[:, 0]
    S2[:, 0] = v2[:, 0] * mix_unit[:, 0]
    trace[0, :] = np.sum(np.abs(x[:, 0] - S1[:, 0] - S2[:, 0]) ** 2)
    u2 = mix_unit[:, 0].copy()

    for t in range(1, n_frames):
        xt = x[:, t]
        u1 = mix_unit[:, t].copy()
        u2 = np.exp(1j * unwrap_phase_step(np.angle(u2), hop, freqs.nu[:, t]))
        s1 = v1[:, t] * u1
        s2 = v2[:, t] * u2
        g1t, g2t = g1[:, t], g2[:, t]
        err = xt - s1 - s2
        trace[t, 0] = np.vdot(err, err).real
        for it in range(1, cfg.max_iter + 1):
            s1, u1 = _project(v1[:, t], s1 + g1t * err, u1)
            s2, u2 = _project(v2[:, t], s2 + g2t * err, u2)
            err = xt - s1 - s2
            trace[t, it] = np.vdot(err, err).real
        S1[:, t] = s1
        S2[:, t] = s2

    return PuHpssResult(X.with_bins(S1), X.with_bins(S2), trace, freqs)
