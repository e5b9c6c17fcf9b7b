"""Plain-text ``key = value`` configuration files.

A file may hold bare ``key = value`` lines or group them under any
``[section]`` headers; sections are only for readability and all keys
share one namespace. Comments start with ``#`` or ``;``.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .bss_eval import EvalProtocol
from .errors import ConfigError
from .median import MedianFilterParams
from .phase_recovery import PuHpssConfig
from .pipeline import RunConfig

__all__ = ["RUN_KEYS", "KNOWN_KEYS", "read_config", "run_config_from"]

RUN_KEYS = {
    "setting", "estimator", "phase", "checkpoint", "window_rule", "seed",
    "max_iter", "peak_neighborhood", "assign_rule",
    "time_kernel", "freq_kernel", "mask_kind",
    "window_seconds", "overlap_seconds", "proj_filter_len", "sdr_cap",
}
SYNTH_KEYS = {
    "n_tracks", "duration_s", "sample_rate", "burst_rate", "burst_decay_s",
    "min_partials", "max_partials", "percussive_to_harmonic_db",
}
TRAIN_KEYS = {
    "n_steps", "learning_rate", "final_learning_rate", "batch_size", "clip_norm",
    "seq_length", "context", "rnn_hidden", "fnn_hidden", "lambda_masker",
    "lambda_denoiser", "lambda_twin", "twin_stop_gradient",
}
BENCH_KEYS = {"methods", "settings"}
KNOWN_KEYS = RUN_KEYS | SYNTH_KEYS | TRAIN_KEYS | BENCH_KEYS


def read_config(path) -> dict:
    """Return the ``key -> value`` strings of a config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[__top__]\n" + path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        for key, value in parser[section].items():
            key = key.replace("-", "_")
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{path}: unknown key {key!r}")
            values[key] = value
    return values


def _convert(key, value, kind):
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key}: {value!r}") from exc


def run_config_from(values: dict) -> RunConfig:
    """Build a :class:`RunConfig` from string (or typed) values; missing keys keep defaults."""
    v = {k: val for k, val in values.items() if k in RUN_KEYS and val is not None}
    try:
        median = MedianFilterParams(
            time_kernel=_convert("time_kernel", v.get("time_kernel", 17), int),
            freq_kernel=_convert("freq_kernel", v.get("freq_kernel", 17), int),
            mask_kind=v.get("mask_kind", "wiener"),
        )
        pu = PuHpssConfig(
            max_iter=_convert("max_iter", v.get("max_iter", 50), int),
            peak_neighborhood=_convert("peak_neighborhood", v.get("peak_neighborhood", 1), int),
            assign_rule=v.get("assign_rule", "nearest"),
        )
        proto = EvalProtocol(
            window_seconds=_convert("window_seconds", v.get("window_seconds", 30.0), float),
            overlap_seconds=_convert("overlap_seconds", v.get("overlap_seconds", 15.0), float),
            proj_filter_len=_convert("proj_filter_len", v.get("proj_filter_len", 512), int),
            sdr_cap=_convert("sdr_cap", v.get("sdr_cap", 100.0), float),
        )
        return RunConfig(
            setting=v.get("setting", "1"),
            estimator=v.get("estimator", "median"),
            phase=v.get("phase", "puhpss"),
            checkpoint=v.get("checkpoint"),
            median=median,
            puhpss=pu,
            eval=proto,
            window_rule=v.get("window_rule", "even"),
            seed=_convert("seed", v.get("seed", 0), int),
        )
    except ConfigError:
        raise
    except ValueError as exc:  # includes InvalidArgumentError
        raise ConfigError(str(exc)) from exc
