"""Mixture -> magnitude estimates -> phase recovery -> waveforms."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bss_eval import EvalProtocol
from .data import TrackBundle
from .errors import ConfigError, HpssError, InvalidArgumentError
from .median import MedianFilterParams, complement_magnitude, median_filter_hpss
from .phase_recovery import PuHpssConfig, mixture_phase_reconstruct, pu_hpss
from .spectral import Setting, istft, magnitude, make_setting, stft

__all__ = [
    "Estimator",
    "PhaseMethod",
    "RunConfig",
    "SeparationResult",
    "StageError",
    "estimate_magnitudes",
    "run_separation",
    "method_label",
]

log = logging.getLogger(__name__)


class Estimator(enum.Enum):
    MEDIAN = "median"
    MADTWINNET = "madtwinnet"
    ORACLE = "oracle"                        # true magnitudes of both sources
    ORACLE_PERCUSSIVE = "oracle-percussive"  # true percussive magnitude, harmonic by complement


class PhaseMethod(enum.Enum):
    MIXTURE = "mixture"
    PUHPSS = "puhpss"


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).lower())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"unknown {cls.__name__.lower()} {value!r}; choose from {choices}") from None


@dataclass(frozen=True)
class RunConfig:
    setting: Setting = Setting.SETTING1
    estimator: Estimator = Estimator.MEDIAN
    phase: PhaseMethod = PhaseMethod.PUHPSS
    checkpoint: str | None = None
    median: MedianFilterParams = field(default_factory=MedianFilterParams)
    puhpss: PuHpssConfig = field(default_factory=PuHpssConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)
    window_rule: str = "even"
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "setting", Setting.parse(self.setting))
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "estimator", _enum(Estimator, self.estimator))
        object.__setattr__(self, "phase", _enum(PhaseMethod, self.phase))
        if self.estimator is Estimator.MADTWINNET and not self.checkpoint:
            raise ConfigError("the madtwinnet estimator needs a checkpoint path")
        if self.window_rule not in ("even", "pow2"):
            raise ConfigError(f"window_rule must be 'even' or 'pow2', got {self.window_rule!r}")

    def with_phase(self, phase) -> "RunConfig":
        return replace(self, phase=_enum(PhaseMethod, phase))

    def describe(self) -> dict:
        return {
            "setting": self.setting.value,
            "estimator": self.estimator.value,
            "phase": self.phase.value,
            "checkpoint": self.checkpoint,
            "max_iter": self.puhpss.max_iter,
            "window_rule": self.window_rule,
            "seed": self.seed,
        }


_ESTIMATOR_LABELS = {
    Estimator.MEDIAN: "KAM (median filter)",
    Estimator.MADTWINNET: "MaD TwinNet",
    Estimator.ORACLE: "Oracle magnitudes",
    Estimator.ORACLE_PERCUSSIVE: "Oracle percussive",
}


def method_label(cfg: RunConfig) -> str:
    """Row label such as ``"MaD TwinNet + PU-HPSS"``."""
    suffix = "PU-HPSS" if cfg.phase is PhaseMethod.PUHPSS else "mixture phase"
    return f"{_ESTIMATOR_LABELS[cfg.estimator]} + {suffix}"


class StageError(HpssError):
    """Wraps a component failure with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: HpssError):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code


@dataclass
class SeparationResult:
    percussive: object  # Waveform
    harmonic: object
    diagnostics: dict


def _stage(name):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, typ, exc, tb):
            if exc is not None and isinstance(exc, HpssError) and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


_MODEL_CACHE: dict = {}


def _load_model(path):
    from .madtwinnet import load_checkpoint

    key = str(Path(path).resolve())
    if key not in _MODEL_CACHE:
        _MODEL_CACHE[key] = load_checkpoint(path)
    return _MODEL_CACHE[key]


def estimate_magnitudes(bundle: TrackBundle, X, cfg: RunConfig):
    """Return ``(V1, V2, clamp_count)`` for the configured estimator."""
    Vx = magnitude(X)
    if cfg.estimator is Estimator.MEDIAN:
        V1, V2 = median_filter_hpss(Vx, cfg.median)
        return V1, V2, 0
    if cfg.estimator is Estimator.ORACLE:
        V1 = magnitude(stft(bundle.percussive, X.config))
        V2 = magnitude(stft(bundle.harmonic, X.config))
        return V1, V2, 0
    if cfg.estimator is Estimator.ORACLE_PERCUSSIVE:
        V1 = magnitude(stft(bundle.percussive, X.config))
    else:
        from .madtwinnet import predict_percussive

        params, mcfg = _load_model(cfg.checkpoint)
        if mcfg.n_bins != Vx.shape[0]:
            raise ConfigError(f"checkpoint expects {mcfg.n_bins} frequency bins, "
                              f"the STFT has {Vx.shape[0]}")
        V1 = predict_percussive(Vx, params, mcfg)
    V2, clamped = complement_magnitude(Vx, V1, return_count=True)
    return V1, V2, clamped


def run_separation(bundle: TrackBundle, cfg: RunConfig) -> SeparationResult:
    """Separate one track; outputs have exactly the mixture length.

    The diagnostics record the STFT configuration, the complement clamp count
    and, for PU-HPSS, the per-frame mixing-error trace (frames x iterations+1).
    """
    n = len(bundle.mixture)
    with _stage("stft"):
        scfg = make_setting(cfg.setting, bundle.sample_rate, cfg.window_rule)
        X = stft(bundle.mixture, scfg)
    with _stage("magnitude"):
        V1, V2, clamped = estimate_magnitudes(bundle, X, cfg)
    diagnostics = {
        "track_id": bundle.track_id,
        "config": cfg.describe(),
        "stft": scfg.as_dict(),
        "sample_rate": bundle.sample_rate,
        "n_frames": X.n_frames,
        "clamp_count": clamped,
    }
    with _stage("phase"):
        if cfg.phase is PhaseMethod.MIXTURE:
            S1, S2 = mixture_phase_reconstruct(V1, V2, X)
        else:
            res = pu_hpss(X, V1, V2, cfg.puhpss)
            S1, S2 = res.percussive, res.harmonic
            diagnostics["mixing_error"] = res.mixing_error
    with _stage("istft"):
        s1, s2 = istft(S1, n), istft(S2, n)
    covered = (X.n_frames - 1) * scfg.hop_length + scfg.window_length - 2 * (scfg.window_length // 2)
    if covered < n:
        log.info("%s: %d trailing samples beyond the last frame were zero-padded",
                 bundle.track_id, n - covered)
    diagnostics["padded_samples"] = max(0, n - covered)
    return SeparationResult(s1, s2, diagnostics)
