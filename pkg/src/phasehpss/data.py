"""Track bundles from stem directories or from the synthetic mixture generator."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import read_wav
from .errors import DataError, InvalidArgumentError
from .spectral import Waveform

__all__ = [
    "STEMS",
    "TrackBundle",
    "SynthSpec",
    "load_stems",
    "find_tracks",
    "synth_track",
    "synth_dataset",
]

STEMS = ("drums", "bass", "vocals", "other")


@dataclass(frozen=True)
class TrackBundle:
    mixture: Waveform
    percussive: Waveform
    harmonic: Waveform
    track_id: str

    def __post_init__(self):
        rates = {w.sample_rate for w in (self.mixture, self.percussive, self.harmonic)}
        lengths = {len(w) for w in (self.mixture, self.percussive, self.harmonic)}
        if len(rates) != 1 or len(lengths) != 1:
            raise DataError(f"track {self.track_id}: mixture and references differ in rate or length")

    @property
    def sample_rate(self) -> int:
        return self.mixture.sample_rate


def _read_manifest(path) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_string("[stems]\n" + fh.read())
    except (OSError, configparser.Error) as exc:
        raise DataError(f"manifest {path}: {exc}") from exc
    return dict(parser["stems"])


def load_stems(directory, manifest=None, track_id: str | None = None) -> TrackBundle:
    """Build a bundle from ``drums``, ``bass``, ``vocals`` and ``other`` WAV stems.

    By default the stems are ``<directory>/<stem>.wav``. A manifest file of
    ``stem = relative/path.wav`` lines (relative to ``directory``) overrides
    individual locations. Stereo stems are averaged to mono; the percussive
    reference is the drums stem, the harmonic reference the sum of the rest.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"track directory {directory} not found")
    paths = {s: directory / f"{s}.wav" for s in STEMS}
    if manifest is not None:
        for stem, rel in _read_manifest(manifest).items():
            if stem not in STEMS:
                raise DataError(f"manifest {manifest}: unknown stem {stem!r}")
            paths[stem] = directory / rel
    stems = {}
    for stem in STEMS:
        if not paths[stem].is_file():
            raise DataError(f"missing stem '{stem}': {paths[stem]}")
        stems[stem] = read_wav(paths[stem])
    rates = {s: w.sample_rate for s, w in stems.items()}
    if len(set(rates.values())) != 1:
        raise DataError(f"stems in {directory} have different sample rates: {rates}")
    lengths = {s: len(w) for s, w in stems.items()}
    if len(set(lengths.values())) != 1:
        raise DataError(f"stems in {directory} have different lengths: {lengths}")
    rate = stems["drums"].sample_rate
    perc = stems["drums"].samples
    harm = stems["bass"].samples + stems["vocals"].samples + stems["other"].samples
    return TrackBundle(Waveform(perc + harm, rate), Waveform(perc, rate), Waveform(harm, rate),
                       track_id or directory.name)


def find_tracks(root) -> list:
    """Sorted track directories under ``root`` (the root itself if it holds the stems)."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} not found")
    if (root / "drums.wav").is_file():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "drums.wav").is_file())


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic percussive + harmonic mixture."""

    duration_s: float = 10.0
    sample_rate: int = 8000
    burst_rate: float = 2.0          # mean bursts per second
    burst_decay_s: float = 0.03      # exponential decay time constant
    min_partials: int = 3
    max_partials: int = 8
    min_freq_hz: float = 100.0
    max_freq_hz: float | None = None  # default: a quarter of the sample rate
    vibrato_rate_hz: float = 1.0
    vibrato_depth: float = 0.003     # relative frequency deviation
    amp_segment_s: float = 1.0       # length of each constant-amplitude segment
    amp_ramp_s: float = 0.05         # Hann-shaped transition between segments
    harmonic_rms: float = 0.1
    percussive_to_harmonic_db: float = 0.0

    def __post_init__(self):
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise InvalidArgumentError("duration_s and sample_rate must be positive")
        if self.burst_rate < 0 or self.burst_decay_s <= 0:
            raise InvalidArgumentError("burst_rate must be >= 0 and burst_decay_s > 0")
        if self.max_freq_hz is None:
            object.__setattr__(self, "max_freq_hz", self.sample_rate / 4)
        if not 1 <= self.min_partials <= self.max_partials:
            raise InvalidArgumentError("need 1 <= min_partials <= max_partials")
        if not 0 < self.min_freq_hz < self.max_freq_hz < self.sample_rate / 2:
            raise InvalidArgumentError("partial frequency range must lie inside (0, Nyquist)")
        if self.amp_segment_s <= 0 or self.harmonic_rms <= 0:
            raise InvalidArgumentError("amp_segment_s and harmonic_rms must be positive")
        if self.amp_ramp_s < 0:
            raise InvalidArgumentError("amp_ramp_s must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _harmonic(spec: SynthSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    sr = spec.sample_rate
    t = np.arange(n) / sr
    n_partials = int(rng.integers(spec.min_partials, spec.max_partials + 1))
    freqs = np.exp(rng.uniform(np.log(spec.min_freq_hz), np.log(spec.max_freq_hz), n_partials))
    seg = max(1, int(round(spec.amp_segment_s * sr)))
    n_seg = -(-n // seg)
    ramp = np.hanning(max(1, int(round(spec.amp_ramp_s * sr))) + 2)[1:-1]
    ramp /= ramp.sum()
    out = np.zeros(n)
    for f in freqs:
        vib = 1.0 + spec.vibrato_depth * np.sin(2 * np.pi * spec.vibrato_rate_hz * t
                                                + rng.uniform(0, 2 * np.pi))
        phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.cumsum(f * vib) / sr
        steps = np.repeat(rng.uniform(0.2, 1.0, n_seg), seg)[:n]
        # smooth the steps so segment changes do not click
        padded = np.pad(steps, (len(ramp) // 2, len(ramp) - 1 - len(ramp) // 2), mode="edge")
        amps = np.convolve(padded, ramp, mode="valid")
        out += amps * np.sin(phase)
    return out * spec.harmonic_rms / np.sqrt(np.mean(out ** 2))


def _percussive(spec: SynthSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    sr = spec.sample_rate
    out = np.zeros(n)
    n_bursts = int(rng.poisson(spec.burst_rate * spec.duration_s))
    starts = np.sort(rng.integers(0, n, n_bursts))
    length = max(1, int(round(6 * spec.burst_decay_s * sr)))
    env = np.exp(-np.arange(length) / (spec.burst_decay_s * sr))
    for s in starts:
        m = min(length, n - s)
        out[s:s + m] += rng.uniform(0.5, 1.0) * rng.standard_normal(m) * env[:m]
    return out


def synth_track(spec: SynthSpec | None = None, seed: int = 0, track_id: str | None = None) -> TrackBundle:
    """Percussive noise bursts at Poisson times plus a few slowly modulated sinusoids.

    The percussive part is scaled to ``percussive_to_harmonic_db`` relative to
    the harmonic RMS; ``burst_rate = 0`` gives a silent percussive reference.
    """
    spec = spec or SynthSpec()
    rng = np.random.default_rng(seed)
    n = int(round(spec.duration_s * spec.sample_rate))
    harm = _harmonic(spec, rng, n)
    perc = _percussive(spec, rng, n)
    p_rms = np.sqrt(np.mean(perc ** 2))
    if p_rms > 0:
        perc *= spec.harmonic_rms * 10 ** (spec.percussive_to_harmonic_db / 20) / p_rms
    sr = spec.sample_rate
    return TrackBundle(Waveform(perc + harm, sr), Waveform(perc, sr), Waveform(harm, sr),
                       track_id or f"synth-{seed}")


def synth_dataset(spec: SynthSpec | None, n_tracks: int, seed: int) -> list:
    """``n_tracks`` bundles with ids ``synth-000``... and seeds derived from ``seed``."""
    if n_tracks < 1:
        raise InvalidArgumentError("n_tracks must be positive")
    children = np.random.SeedSequence(seed).spawn(n_tracks)
    return [synth_track(spec, int(c.generate_state(1)[0]), track_id=f"synth-{k:03d}")
            for k, c in enumerate(children)]
