"""SDR / SIR / SAR source-separation scores.

Each estimate is decomposed by least-squares projection onto time-delayed
copies (``proj_filter_len`` taps) of the references::

    estimate = s_target + e_interf + e_artif

``s_target`` is the projection on the delays of the matching reference,
``s_target + e_interf`` the projection on the delays of all references and
``e_artif`` the residual. Tracks are scored on sliding windows and summarised
by per-source medians.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

from .errors import InvalidArgumentError

__all__ = [
    "EvalProtocol",
    "WindowScores",
    "EvalReport",
    "decompose",
    "bss_eval_window",
    "window_starts",
    "evaluate_track",
    "REPORT_SCHEMA_VERSION",
]

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
SILENCE_ENERGY = 1e-12
RIDGE = 1e-10
METRICS = ("SDR", "SIR", "SAR")


@dataclass(frozen=True)
class EvalProtocol:
    window_seconds: float = 30.0
    overlap_seconds: float = 15.0
    proj_filter_len: int = 512
    sdr_cap: float = 100.0

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise InvalidArgumentError("window_seconds must be positive")
        if not 0 <= self.overlap_seconds < self.window_seconds:
            raise InvalidArgumentError("need 0 <= overlap_seconds < window_seconds")
        if int(self.proj_filter_len) != self.proj_filter_len or self.proj_filter_len < 1:
            raise InvalidArgumentError("proj_filter_len must be a positive integer")
        if self.sdr_cap <= 0:
            raise InvalidArgumentError("sdr_cap must be positive")
        object.__setattr__(self, "proj_filter_len", int(self.proj_filter_len))

    def as_dict(self) -> dict:
        return {
            "window_seconds": self.window_seconds,
            "overlap_seconds": self.overlap_seconds,
            "proj_filter_len": self.proj_filter_len,
            "sdr_cap": self.sdr_cap,
        }


def _xcorr(a_f, b_f, nfft):
    # c[tau] = sum_t a[t] b[t + tau], indices modulo nfft
    return np.fft.irfft(np.conj(a_f) * b_f, n=nfft)


def _project(refs: np.ndarray, est: np.ndarray, flen: int):
    """Least-squares projection of ``est`` on ``flen`` delays of each row of ``refs``.

    Returns the projection (length ``n + flen - 1``) and whether the ridge
    fallback was needed.
    """
    n_src, n = refs.shape
    nfft = 1 << int(np.ceil(np.log2(n + flen - 1)))
    ref_f = np.fft.rfft(refs, n=nfft, axis=1)
    est_f = np.fft.rfft(est, n=nfft)
    lags = np.arange(flen)
    gram = np.empty((n_src * flen, n_src * flen))
    for i in range(n_src):
        for k in range(i, n_src):
            c = _xcorr(ref_f[i], ref_f[k], nfft)
            # block (i, k): entry (a, b) = c_ik[a - b]
            block = c[(lags[:, None] - lags[None, :]) % nfft]
            gram[i * flen:(i + 1) * flen, k * flen:(k + 1) * flen] = block
            gram[k * flen:(k + 1) * flen, i * flen:(i + 1) * flen] = block.T
    rhs = np.concatenate([_xcorr(ref_f[i], est_f, nfft)[:flen] for i in range(n_src)])

    ridged = False
    try:
        coef = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), rhs)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError("non-finite projection coefficients")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        ridged = True
        scale = max(np.max(np.diag(gram)), np.finfo(float).tiny)
        reg = gram + RIDGE * scale * np.eye(gram.shape[0])
        coef = scipy.linalg.solve(reg, rhs, assume_a="sym")
    coef = coef.reshape(n_src, flen)
    proj = np.zeros(n + flen - 1)
    for i in range(n_src):
        proj += fftconvolve(refs[i], coef[i])[: n + flen - 1]
    return proj, ridged


def decompose(estimate, references, index: int, flen: int):
    """Split one estimate into (s_target, e_interf, e_artif, ridged)."""
    references = np.atleast_2d(np.asarray(references, dtype=np.float64))
    estimate = np.asarray(estimate, dtype=np.float64)
    n = estimate.shape[0]
    own, ridge_own = _project(references[index:index + 1], estimate, flen)
    both, ridge_all = _project(references, estimate, flen)
    padded = np.zeros(n + flen - 1)
    padded[:n] = estimate
    return own, both - own, padded - both, ridge_own or ridge_all


def _db(num, den, cap):
    if den <= 0:
        return cap if num > 0 else 0.0
    if num <= 0:
        return -cap
    return float(np.clip(10.0 * np.log10(num / den), -cap, cap))


@dataclass
class WindowScores:
    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    ridged: bool = False


def bss_eval_window(estimates, references, proto: EvalProtocol | None = None) -> WindowScores:
    """Score ``J`` estimates against ``J`` references (rows of equal length)."""
    proto = proto or EvalProtocol()
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if est.shape != ref.shape:
        raise InvalidArgumentError(f"estimates {est.shape} and references {ref.shape} differ")
    n_src = ref.shape[0]
    sdr, sir, sar = np.empty(n_src), np.empty(n_src), np.empty(n_src)
    ridged = False
    cap = proto.sdr_cap
    for j in range(n_src):
        s_t, e_i, e_a, r = decompose(est[j], ref, j, proto.proj_filter_len)
        ridged |= r
        st2 = float(np.dot(s_t, s_t))
        sdr[j] = _db(st2, float(np.sum((e_i + e_a) ** 2)), cap)
        sir[j] = _db(st2, float(np.dot(e_i, e_i)), cap)
        sar[j] = _db(float(np.sum((s_t + e_i) ** 2)), float(np.dot(e_a, e_a)), cap)
    if ridged:
        log.warning("rank-deficient projection; used ridge-regularised least squares")
    return WindowScores(sdr, sir, sar, ridged)


def window_starts(n_samples: int, sample_rate: int, proto: EvalProtocol):
    """Start samples and the common length of the scoring windows.

    A track shorter than one window is scored as a single window.
    """
    win = int(round(proto.window_seconds * sample_rate))
    hop = win - int(round(proto.overlap_seconds * sample_rate))
    if n_samples <= win:
        return [0], n_samples
    return list(range(0, n_samples - win + 1, hop)), win


@dataclass
class EvalReport:
    sources: list
    protocol: EvalProtocol
    sample_rate: int
    # rows: (source, window_start_s, SDR, SIR, SAR)
    windows: list = field(default_factory=list)
    skipped_windows: int = 0
    ridged_windows: int = 0

    def scores(self, source: str, metric: str) -> np.ndarray:
        col = 2 + METRICS.index(metric)
        return np.array([row[col] for row in self.windows if row[0] == source])

    def median(self, source: str, metric: str) -> float:
        values = np.sort(self.scores(source, metric))
        return float(np.median(values)) if values.size else float("nan")

    @property
    def medians(self) -> dict:
        return {s: {m: self.median(s, m) for m in METRICS} for s in self.sources}

    @property
    def average(self) -> dict:
        med = self.medians
        return {m: float(np.mean([med[s][m] for s in self.sources])) for m in METRICS}

    def to_json(self) -> str:
        payload = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "protocol": self.protocol.as_dict(),
            "sample_rate": self.sample_rate,
            "silent_window_policy": "skip windows where any reference has energy < 1e-12",
            "skipped_windows": self.skipped_windows,
            "ridged_windows": self.ridged_windows,
            "median": self.medians,
            "average": self.average,
            "n_windows": {s: int(self.scores(s, "SDR").size) for s in self.sources},
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["source", "window_start_s", *METRICS])
        for row in self.windows:
            writer.writerow([row[0], f"{row[1]:.3f}", *(repr(float(v)) for v in row[2:])])
        return buf.getvalue()


def evaluate_track(estimates, references, sample_rate: int, proto: EvalProtocol | None = None,
                   sources=("percussive", "harmonic")) -> EvalReport:
    """Windowed scoring of a track; ``estimates[j]`` is compared with ``references[j]``."""
    proto = proto or EvalProtocol()
    est = np.atleast_2d(np.asarray([getattr(e, "samples", e) for e in estimates], dtype=np.float64))
    ref = np.atleast_2d(np.asarray([getattr(r, "samples", r) for r in references], dtype=np.float64))
    if est.shape != ref.shape:
        raise InvalidArgumentError(f"estimates {est.shape} and references {ref.shape} differ")
    if len(sources) != ref.shape[0]:
        raise InvalidArgumentError("one source name per reference is required")
    report = EvalReport(list(sources), proto, sample_rate)
    starts, length = window_starts(ref.shape[1], sample_rate, proto)
    for start in starts:
        sl = slice(start, start + length)
        if np.any(np.sum(ref[:, sl] ** 2, axis=1) < SILENCE_ENERGY):
            report.skipped_windows += 1
            continue
        scores = bss_eval_window(est[:, sl], ref[:, sl], proto)
        report.ridged_windows += int(scores.ridged)
        for j, name in enumerate(sources):
            report.windows.append(
                (name, start / sample_rate, float(scores.sdr[j]), float(scores.sir[j]), float(scores.sar[j]))
            )
    return report
