"""Seeded Adam training and sliding-window inference for the toy network.

Adam update for every tensor ``w`` with gradient ``g`` at step ``k`` (1-based)::

    m = beta1 * m + (1 - beta1) * g
    s = beta2 * s + (1 - beta2) * g**2
    w -= lr_k * (m / (1 - beta1**k)) / (sqrt(s / (1 - beta2**k)) + eps)

``lr_k`` is ``learning_rate`` throughout, or moves geometrically from
``learning_rate`` at the first step to ``final_learning_rate`` at the last.
When ``clip_norm`` is set the global gradient norm is rescaled to at most
``clip_norm`` before the update. Losses are sums over the mini-batch.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, TrainingError
from ..spectral import MagSpectrogram
from .model import (
    MadConfig,
    MadParameters,
    backward,
    forward,
    init_parameters,
    loss_terms,
)

__all__ = [
    "AdamConfig",
    "TrainResult",
    "segment_pairs",
    "train",
    "predict_percussive",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_steps: int = 500
    batch_size: int | None = None  # None: full batch
    clip_norm: float | None = 10.0
    final_learning_rate: float | None = 1e-3

    def __post_init__(self):
        if self.learning_rate <= 0 or self.eps <= 0:
            raise InvalidArgumentError("learning_rate and eps must be positive")
        if self.final_learning_rate is not None and self.final_learning_rate <= 0:
            raise InvalidArgumentError("final_learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("beta1 and beta2 must lie in [0, 1)")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise InvalidArgumentError("n_steps must be a non-negative integer")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise InvalidArgumentError("clip_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def rate(self, step: int) -> float:
        """Learning rate at 1-based ``step``."""
        if self.final_learning_rate is None or self.n_steps <= 1:
            return self.learning_rate
        frac = (step - 1) / (self.n_steps - 1)
        return self.learning_rate * (self.final_learning_rate / self.learning_rate) ** frac


@dataclass
class TrainResult:
    params: MadParameters
    losses: np.ndarray       # total loss per step, measured before the update
    kl: np.ndarray           # kl_masker + kl_denoiser per step
    twin: np.ndarray         # twin-state distance per step
    final_terms: dict = field(default_factory=dict)  # loss terms after the last update


def _frames(V) -> np.ndarray:
    return np.asarray(getattr(V, "bins", V), dtype=np.float64)


def _pad_frames(V: np.ndarray, before: int, after: int) -> np.ndarray:
    """Reflect-pad an F x T array along time (edge mode for a single frame)."""
    mode = "reflect" if V.shape[1] > 1 else "edge"
    return np.pad(V, ((0, 0), (before, after)), mode=mode)


def _segment(V: np.ndarray, cfg: MadConfig):
    """Cut an F x T array into (B, seq_length, F) segments whose central frames tile it."""
    c, hop = cfg.context, cfg.out_frames
    n = V.shape[1]
    n_seg = max(1, -(-n // hop))
    padded = _pad_frames(V, c, n_seg * hop - n + c)
    segs = np.stack([padded[:, k * hop:k * hop + cfg.seq_length].T for k in range(n_seg)])
    return segs


def segment_pairs(Vx, V1, cfg: MadConfig):
    """Training segments ``(X, Y)`` of shape (B, seq_length, F) cut from a whole track."""
    Vx, V1 = _frames(Vx), _frames(V1)
    if Vx.shape != V1.shape or Vx.shape[0] != cfg.n_bins:
        raise InvalidArgumentError(f"mixture {Vx.shape} and target {V1.shape} must be {cfg.n_bins} x T")
    return _segment(Vx, cfg), _segment(V1, cfg)


def _stack_dataset(dataset, cfg: MadConfig):
    if isinstance(dataset, tuple) and len(dataset) == 2 and np.ndim(dataset[0]) == 3:
        X, Y = (np.asarray(a, dtype=np.float64) for a in dataset)
    else:
        pairs = list(dataset)
        if not pairs:
            raise InvalidArgumentError("empty training set")
        X = np.stack([_frames(x).T for x, _ in pairs])
        Y = np.stack([_frames(y).T for _, y in pairs])
    want = (cfg.seq_length, cfg.n_bins)
    if X.shape[1:] != want or Y.shape != X.shape:
        raise InvalidArgumentError(f"segments must be {want}, got {X.shape} and {Y.shape}")
    if np.any(X < 0) or np.any(Y < 0):
        raise InvalidArgumentError("magnitudes must be non-negative")
    return X, Y


def _combined(terms: dict, cfg: MadConfig) -> float:
    return (cfg.lambda_masker * terms["kl_masker"] + cfg.lambda_denoiser * terms["kl_denoiser"]
            + cfg.lambda_twin * (terms["twin"] + terms["kl_twin"]) + cfg.l2_penalty * terms["l2"])


def train(dataset, cfg: MadConfig, opt: AdamConfig | None = None, seed: int = 0,
          init: MadParameters | None = None) -> TrainResult:
    """Fit the network on ``(Vx, V1)`` segment pairs.

    ``dataset`` is an iterable of ``F x seq_length`` pairs or a tuple of two
    ``(B, seq_length, F)`` arrays (see :func:`segment_pairs`). Initialisation
    and mini-batch order both derive from ``seed``.
    """
    opt = opt or AdamConfig()
    X, Y = _stack_dataset(dataset, cfg)
    init_seed, batch_seed = np.random.SeedSequence(seed).spawn(2)
    params = init.copy() if init is not None else init_parameters(
        cfg, int(init_seed.generate_state(1)[0]))
    params.validate(cfg)
    rng = np.random.default_rng(batch_seed)
    with_twin = cfg.lambda_twin > 0
    m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    s = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    losses, kls, twins = [], [], []
    n = X.shape[0]
    bs = n if opt.batch_size is None else min(opt.batch_size, n)
    order = np.arange(n)
    pos = n
    for step in range(1, opt.n_steps + 1):
        if bs == n:
            idx = order
        else:
            if pos + bs > n:
                order, pos = rng.permutation(n), 0
            idx, pos = order[pos:pos + bs], pos + bs
        # overflow is reported through the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            trace = forward(X[idx], params, cfg, with_twin=with_twin)
            terms = loss_terms(trace, Y[idx], cfg, params)
            loss = _combined(terms, cfg)
            grads = backward(trace, Y[idx], params, cfg)
            gnorm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
        if not (np.isfinite(loss) and np.isfinite(gnorm)):
            raise TrainingError(f"training diverged at step {step}",
                                diagnostics={"step": step, "loss": loss, "grad_norm": gnorm,
                                             "terms": terms, "last_losses": losses[-5:]})
        losses.append(loss)
        kls.append(terms["kl_masker"] + terms["kl_denoiser"])
        twins.append(terms["twin"])
        scale = 1.0
        if opt.clip_norm is not None and gnorm > opt.clip_norm:
            scale = opt.clip_norm / gnorm
        b1c, b2c = 1.0 - opt.beta1 ** step, 1.0 - opt.beta2 ** step
        lr = opt.rate(step)
        for k, w in params.tensors.items():
            g = grads[k] * scale
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g
            s[k] = opt.beta2 * s[k] + (1.0 - opt.beta2) * g * g
            w -= lr * (m[k] / b1c) / (np.sqrt(s[k] / b2c) + opt.eps)
        if step % 100 == 0:
            log.debug("step %d loss %.6g", step, loss)
    final = loss_terms(forward(X, params, cfg, with_twin=with_twin), Y, cfg, params)
    return TrainResult(params, np.array(losses), np.array(kls), np.array(twins), final)


def predict_percussive(Vx, params: MadParameters, cfg: MadConfig) -> MagSpectrogram:
    """Percussive magnitude estimate with the same shape as ``Vx``.

    Segments advance by ``seq_length - 2 * context`` frames over a
    reflect-padded copy of ``Vx``; the central frames are stitched together.
    The twin branch is never evaluated.
    """
    params.validate(cfg, require_twin=False)
    V = _frames(Vx)
    if V.ndim != 2 or V.shape[0] != cfg.n_bins:
        raise InvalidArgumentError(f"expected {cfg.n_bins} x T magnitudes, got {V.shape}")
    n = V.shape[1]
    if n == 0:
        out = np.zeros_like(V)
    else:
        trace = forward(_segment(V, cfg), params, cfg, with_twin=False)
        out = trace.V1.reshape(-1, cfg.n_bins)[:n].T
    if isinstance(Vx, MagSpectrogram):
        return Vx.with_bins(out)
    return out
