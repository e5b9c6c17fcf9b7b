"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Values come from built-in defaults, then ``--config`` (``key = value`` file),
then explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import read_wav, write_wav
from .bench import bench
from .bss_eval import evaluate_track
from .config import SYNTH_KEYS, TRAIN_KEYS, read_config, run_config_from
from .data import SynthSpec, TrackBundle, find_tracks, load_stems, synth_dataset
from .errors import ConfigError, DataError, HpssError
from .phase_recovery import mixture_phase_reconstruct, pu_hpss
from .pipeline import run_separation
from .spectral import Waveform, istft, magnitude, make_setting, stft

log = logging.getLogger("phasehpss")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_trace_csv(path, trace: np.ndarray) -> None:
    """Mixing error per (frame, iteration) as long-form CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame_index", "iteration", "C"])
        for t in range(trace.shape[0]):
            for it in range(trace.shape[1]):
                writer.writerow([t, it, repr(float(trace[t, it]))])


def _values(args, keys) -> dict:
    """Config-file values overridden by flags that were given."""
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _run_flags(p):
    p.add_argument("--setting", help="1 or 2 (default 1)")
    p.add_argument("--estimator", help="median | madtwinnet | oracle | oracle-percussive")
    p.add_argument("--phase", help="mixture | puhpss (default puhpss)")
    p.add_argument("--checkpoint", help="model checkpoint for the madtwinnet estimator")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--window-rule", dest="window_rule", help="even | pow2")
    p.add_argument("--proj-filter-len", dest="proj_filter_len", type=int)
    p.add_argument("--window-seconds", dest="window_seconds", type=float)
    p.add_argument("--overlap-seconds", dest="overlap_seconds", type=float)


_RUN_FLAG_KEYS = ("setting", "estimator", "phase", "checkpoint", "max_iter", "window_rule",
                  "proj_filter_len", "window_seconds", "overlap_seconds", "seed")


def _synth_spec(values) -> SynthSpec:
    kw = {}
    for key, kind in (("duration_s", float), ("sample_rate", int), ("burst_rate", float),
                      ("burst_decay_s", float), ("min_partials", int), ("max_partials", int),
                      ("percussive_to_harmonic_db", float)):
        if values.get(key) is not None:
            try:
                kw[key] = kind(values[key])
            except ValueError as exc:
                raise ConfigError(f"invalid value for {key}: {values[key]!r}") from exc
    try:
        return SynthSpec(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_bundle(out: Path, bundle: TrackBundle) -> None:
    out.mkdir(parents=True, exist_ok=True)
    silent = Waveform(np.zeros(len(bundle.mixture)), bundle.sample_rate)
    write_wav(out / "drums.wav", bundle.percussive)
    write_wav(out / "other.wav", bundle.harmonic)
    write_wav(out / "bass.wav", silent)
    write_wav(out / "vocals.wav", silent)
    write_wav(out / "mixture.wav", bundle.mixture)


def cmd_synth(args) -> int:
    values = _values(args, ("n_tracks", "duration_s", "sample_rate", "burst_rate"))
    spec = _synth_spec(values)
    n = int(values.get("n_tracks", 1))
    out = Path(args.out)
    for bundle in synth_dataset(spec, n, args.seed):
        _write_bundle(out / bundle.track_id, bundle)
    (out / "synth.json").write_text(json.dumps({"seed": args.seed, "n_tracks": n,
                                                "spec": spec.to_dict()}, indent=2, sort_keys=True))
    print(f"wrote {n} synthetic track{'' if n == 1 else 's'} to {out}")
    return 0


def _load_input(args) -> TrackBundle:
    if args.track:
        return load_stems(args.track, manifest=args.manifest)
    mix = read_wav(args.mixture)
    silent = Waveform(np.zeros(len(mix)), mix.sample_rate)
    return TrackBundle(mix, silent, silent, Path(args.mixture).stem)


def cmd_separate(args) -> int:
    values = _values(args, _RUN_FLAG_KEYS)
    cfg = run_config_from(values)
    if not args.track and cfg.estimator.value.startswith("oracle"):
        raise ConfigError("oracle estimators need --track with reference stems")
    bundle = _load_input(args)
    result = run_separation(bundle, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "percussive.wav", result.percussive, args.format)
    write_wav(out / "harmonic.wav", result.harmonic, args.format)
    diag = dict(result.diagnostics)
    trace = diag.pop("mixing_error", None)
    if trace is not None:
        write_trace_csv(out / "mixing_error.csv", trace)
        diag["mixing_error_final_total"] = float(trace[:, -1].sum())
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True,
                                                     default=_json_default))
    print(f"separated {bundle.track_id} into {out}")
    return 0


def cmd_recover_phase(args) -> int:
    values = _values(args, ("setting", "max_iter", "window_rule", "phase"))
    cfg = run_config_from(values)
    mix = read_wav(args.mixture)
    est1 = read_wav(args.percussive)
    if est1.sample_rate != mix.sample_rate or len(est1) != len(mix):
        raise DataError("percussive estimate must match the mixture's rate and length")
    scfg = make_setting(cfg.setting, mix.sample_rate, cfg.window_rule)
    X = stft(mix, scfg)
    V1 = magnitude(stft(est1, scfg))
    if args.harmonic:
        est2 = read_wav(args.harmonic)
        if est2.sample_rate != mix.sample_rate or len(est2) != len(mix):
            raise DataError("harmonic estimate must match the mixture's rate and length")
        V2 = magnitude(stft(est2, scfg))
    else:
        from .median import complement_magnitude

        V2 = complement_magnitude(magnitude(X), V1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.phase.value == "mixture":
        S1, S2 = mixture_phase_reconstruct(V1, V2, X)
    else:
        res = pu_hpss(X, V1, V2, cfg.puhpss)
        S1, S2 = res.percussive, res.harmonic
        write_trace_csv(out / "mixing_error.csv", res.mixing_error)
    write_wav(out / "percussive.wav", istft(S1, len(mix)), args.format)
    write_wav(out / "harmonic.wav", istft(S2, len(mix)), args.format)
    print(f"wrote phase-recovered estimates to {out}")
    return 0


def cmd_evaluate(args) -> int:
    values = _values(args, ("proj_filter_len", "window_seconds", "overlap_seconds"))
    cfg = run_config_from(values)
    if args.track:
        ref = load_stems(args.track, manifest=args.manifest)
        refs = [ref.percussive, ref.harmonic]
    elif args.ref_percussive and args.ref_harmonic:
        refs = [read_wav(args.ref_percussive), read_wav(args.ref_harmonic)]
    else:
        raise ConfigError("give --track or both --ref-percussive and --ref-harmonic")
    ests = [read_wav(args.percussive), read_wav(args.harmonic)]
    rates = {w.sample_rate for w in refs + ests}
    lengths = {len(w) for w in refs + ests}
    if len(rates) != 1 or len(lengths) != 1:
        raise DataError("estimates and references must share sample rate and length")
    report = evaluate_track(ests, refs, rates.pop(), cfg.eval)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.csv").write_text(report.to_csv())
        (out / "scores.json").write_text(report.to_json())
    print(report.to_json())
    return 0


_METHOD_ALIASES = {
    "kam": ("median", "mixture"),
    "median": ("median", "mixture"),
}


def _parse_methods(text: str):
    """``estimator:phase`` pairs separated by commas, e.g. ``median:mixture,oracle:puhpss``."""
    out = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        est, _, ph = item.partition(":")
        if not ph:
            est, ph = _METHOD_ALIASES.get(est, (est, "puhpss"))
        out.append((est, ph))
    if not out:
        raise ConfigError("no methods given")
    return out


def cmd_bench(args) -> int:
    values = _values(args, _RUN_FLAG_KEYS + ("methods", "settings", "n_tracks", "duration_s",
                                             "sample_rate", "burst_rate"))
    if args.dataset:
        tracks = [load_stems(d) for d in find_tracks(args.dataset)]
        if not tracks:
            raise DataError(f"empty dataset: no track directories under {args.dataset}")
    else:
        spec = _synth_spec(values)
        tracks = synth_dataset(spec, int(values.get("n_tracks", 20)), args.seed)
    methods = _parse_methods(values.get("methods", "median:mixture,median:puhpss"))
    settings = [s.strip() for s in str(values.get("settings", "1")).split(",") if s.strip()]
    configs = []
    for setting in settings:
        for est, ph in methods:
            configs.append(run_config_from({**values, "setting": setting, "estimator": est,
                                            "phase": ph}))
    result = bench(tracks, configs)
    paths = result.write(args.out)
    print(result.render_table(), end="")
    print(f"results: {paths['csv']}")
    return 0


def cmd_train_toy(args) -> int:
    from .madtwinnet import AdamConfig, MadConfig, save_checkpoint, segment_pairs, train

    keys = tuple(TRAIN_KEYS | SYNTH_KEYS | {"setting", "window_rule"})
    values = _values(args, keys)
    cfg_run = run_config_from(values)
    if args.dataset:
        tracks = [load_stems(d) for d in find_tracks(args.dataset)]
        if not tracks:
            raise DataError(f"empty dataset: no track directories under {args.dataset}")
    else:
        values.setdefault("sample_rate", 2000)
        values.setdefault("duration_s", 5.0)
        tracks = synth_dataset(_synth_spec(values), int(values.get("n_tracks", 4)), args.seed)
    scfg = make_setting(cfg_run.setting, tracks[0].sample_rate, cfg_run.window_rule)

    def pick(key, kind, default):
        try:
            return kind(values[key]) if values.get(key) is not None else default
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key}: {values[key]!r}") from exc

    mcfg = MadConfig(
        n_bins=scfg.n_bins,
        seq_length=pick("seq_length", int, 60),
        context=pick("context", int, 10),
        rnn_hidden=pick("rnn_hidden", int, None),
        fnn_hidden=pick("fnn_hidden", int, None),
        lambda_masker=pick("lambda_masker", float, 1.0),
        lambda_denoiser=pick("lambda_denoiser", float, 1.0),
        lambda_twin=pick("lambda_twin", float, 0.5),
        twin_stop_gradient=str(values.get("twin_stop_gradient", "false")).lower() == "true",
    )
    opt = AdamConfig(
        n_steps=pick("n_steps", int, 500),
        learning_rate=pick("learning_rate", float, 5e-3),
        final_learning_rate=pick("final_learning_rate", float, 1e-3),
        batch_size=pick("batch_size", int, 16),
        clip_norm=pick("clip_norm", float, 10.0),
    )
    Xs, Ys = [], []
    for b in tracks:
        if b.sample_rate != tracks[0].sample_rate:
            raise DataError("training tracks must share one sample rate")
        X, Y = segment_pairs(magnitude(stft(b.mixture, scfg)), magnitude(stft(b.percussive, scfg)), mcfg)
        Xs.append(X)
        Ys.append(Y)
    res = train((np.concatenate(Xs), np.concatenate(Ys)), mcfg, opt, seed=args.seed)
    save_checkpoint(args.out, res.params, mcfg)
    curve = Path(str(args.out) + ".loss.csv")
    with open(curve, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "kl", "twin"])
        for k, row in enumerate(zip(res.losses, res.kl, res.twin), start=1):
            writer.writerow([k, *(repr(float(v)) for v in row)])
    print(f"trained {mcfg.n_bins}-bin model for {opt.n_steps} steps; "
          f"loss {res.losses[0]:.4g} -> {res.losses[-1]:.4g}; checkpoint {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasehpss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, seed_required=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, required=seed_required,
                       help="random seed (required)" if seed_required else "random seed")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write synthetic stem tracks", seed_required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-tracks", dest="n_tracks", type=int)
    p.add_argument("--duration", dest="duration_s", type=float)
    p.add_argument("--sample-rate", dest="sample_rate", type=int)
    p.add_argument("--burst-rate", dest="burst_rate", type=float)

    p = add("separate", cmd_separate, "separate one mixture into percussive and harmonic parts")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--track", help="directory with drums/bass/vocals/other stems")
    src.add_argument("--mixture", help="mixture WAV file")
    p.add_argument("--manifest", help="stem location overrides for --track")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="float32", choices=["pcm16", "pcm24", "float32"])
    _run_flags(p)

    p = add("recover-phase", cmd_recover_phase, "rebuild phases for given magnitude estimates")
    p.add_argument("--mixture", required=True)
    p.add_argument("--percussive", required=True, help="WAV whose magnitude is the percussive estimate")
    p.add_argument("--harmonic", help="WAV whose magnitude is the harmonic estimate "
                                      "(default: mixture minus percussive magnitude)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="float32", choices=["pcm16", "pcm24", "float32"])
    p.add_argument("--setting")
    p.add_argument("--phase")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--window-rule", dest="window_rule")

    p = add("evaluate", cmd_evaluate, "score percussive/harmonic estimates")
    p.add_argument("--percussive", required=True)
    p.add_argument("--harmonic", required=True)
    p.add_argument("--track")
    p.add_argument("--manifest")
    p.add_argument("--ref-percussive", dest="ref_percussive")
    p.add_argument("--ref-harmonic", dest="ref_harmonic")
    p.add_argument("--out")
    p.add_argument("--proj-filter-len", dest="proj_filter_len", type=int)
    p.add_argument("--window-seconds", dest="window_seconds", type=float)
    p.add_argument("--overlap-seconds", dest="overlap_seconds", type=float)

    p = add("bench", cmd_bench, "benchmark methods over a dataset", seed_required=True)
    p.add_argument("--dataset", help="directory of stem tracks (default: synthetic tracks)")
    p.add_argument("--out", required=True)
    p.add_argument("--methods", help="comma-separated estimator:phase pairs")
    p.add_argument("--settings", help="comma-separated settings, e.g. 1,2")
    p.add_argument("--n-tracks", dest="n_tracks", type=int)
    p.add_argument("--duration", dest="duration_s", type=float)
    p.add_argument("--sample-rate", dest="sample_rate", type=int)
    p.add_argument("--burst-rate", dest="burst_rate", type=float)
    _run_flags(p)

    p = add("train-toy", cmd_train_toy, "train the toy magnitude network", seed_required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--dataset")
    p.add_argument("--setting")
    p.add_argument("--n-tracks", dest="n_tracks", type=int)
    p.add_argument("--duration", dest="duration_s", type=float)
    p.add_argument("--sample-rate", dest="sample_rate", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lambda-twin", dest="lambda_twin", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HpssError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
