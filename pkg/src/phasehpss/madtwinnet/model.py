"""Masker-Denoiser network with twin-network regularisation (toy scale).

Data flow for one batch of segments ``Vx`` (B, T, F)::

    enc_f, enc_b   bi-directional GRU over Vx, residual with Vx -> H_enc (B, T, 2F)
    dec            forward GRU over the central T - 2c frames of H_enc -> H_dec
    fnn_m          ReLU(affine(H_dec)) = mask M;  V1' = M * Vx_central
    den_enc/dec    V1 = ReLU(affine(ReLU(affine(V1')))) * V1'
    twin, twin_m   backward GRU over the same H_enc frames and its own mask;
                   used only by the training loss
    psi            affine map from decoder states to twin states

Tensors are kept in a flat name -> array mapping (``"dec.W"``, ``"psi.b"``...).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import InvalidArgumentError
from . import gru

__all__ = [
    "MadConfig",
    "MadParameters",
    "ForwardTrace",
    "init_parameters",
    "masker_forward",
    "denoiser_forward",
    "forward",
    "generalized_kl",
    "twin_loss",
    "total_loss",
    "loss_terms",
    "backward",
]

GRU_BLOCKS = ("enc_f", "enc_b", "dec", "twin")
TWIN_BLOCKS = ("twin", "twin_m", "psi")


@dataclass(frozen=True)
class MadConfig:
    n_bins: int = 129
    seq_length: int = 60
    context: int = 10
    rnn_hidden: int | None = None  # defaults to 2 * n_bins
    fnn_hidden: int | None = None  # defaults to n_bins
    lambda_masker: float = 1.0
    lambda_denoiser: float = 1.0
    lambda_twin: float = 0.5
    epsilon_floor: float = 1e-8
    l2_penalty: float = 0.0
    twin_stop_gradient: bool = False
    twin_output_loss: bool = True
    # added to the biases of the three mask-producing layers at init so that
    # every mask starts active (identity skip filter) instead of half dead
    output_bias_init: float = 1.0

    def __post_init__(self):
        if self.rnn_hidden is None:
            object.__setattr__(self, "rnn_hidden", 2 * self.n_bins)
        if self.fnn_hidden is None:
            object.__setattr__(self, "fnn_hidden", self.n_bins)
        for name in ("n_bins", "seq_length", "rnn_hidden", "fnn_hidden"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {v!r}")
        if int(self.context) != self.context or self.context < 0:
            raise InvalidArgumentError("context must be a non-negative integer")
        if not self.seq_length > 2 * self.context:
            raise InvalidArgumentError("seq_length must exceed twice the context")
        for name in ("lambda_masker", "lambda_denoiser", "lambda_twin", "l2_penalty"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if self.epsilon_floor <= 0:
            raise InvalidArgumentError("epsilon_floor must be positive")

    @property
    def out_frames(self) -> int:
        return self.seq_length - 2 * self.context

    def shapes(self) -> dict:
        F, D, Hd = self.n_bins, self.rnn_hidden, self.fnn_hidden
        out = {}
        for block, (n_in, n_h) in {"enc_f": (F, F), "enc_b": (F, F),
                                   "dec": (2 * F, D), "twin": (2 * F, D)}.items():
            for name, shape in gru.param_shapes(n_in, n_h).items():
                out[f"{block}.{name}"] = shape
        for block, (n_out, n_in) in {"fnn_m": (F, D), "den_enc": (Hd, F), "den_dec": (F, Hd),
                                     "twin_m": (F, D), "psi": (D, D)}.items():
            out[f"{block}.W"] = (n_out, n_in)
            out[f"{block}.b"] = (n_out,)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MadConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                continue
            if isinstance(v, str):
                if v.lower() in ("true", "false"):
                    v = v.lower() == "true"
                elif k.startswith(("lambda", "epsilon", "l2", "output_bias")):
                    v = float(v)
                else:
                    v = int(v)
            kwargs[k] = v
        return cls(**kwargs)


class MadParameters:
    """Named float64 tensors of the network."""

    def __init__(self, tensors: dict):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def block(self, prefix: str) -> dict:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}

    def copy(self) -> "MadParameters":
        return MadParameters({k: v.copy() for k, v in self.tensors.items()})

    def without_twin(self) -> "MadParameters":
        return MadParameters({k: v for k, v in self.tensors.items()
                              if k.split(".")[0] not in TWIN_BLOCKS})

    def validate(self, cfg: MadConfig, require_twin: bool = True):
        expected = cfg.shapes()
        for name, shape in expected.items():
            if name not in self.tensors:
                if not require_twin and name.split(".")[0] in TWIN_BLOCKS:
                    continue
                raise InvalidArgumentError(f"missing tensor {name}")
            if self.tensors[name].shape != tuple(shape):
                raise InvalidArgumentError(
                    f"tensor {name} has shape {self.tensors[name].shape}, expected {tuple(shape)}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise InvalidArgumentError(f"tensor {name} has non-finite entries")
        extra = set(self.tensors) - set(expected)
        if extra:
            raise InvalidArgumentError(f"unexpected tensors {sorted(extra)}")

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_parameters(cfg: MadConfig, seed: int) -> MadParameters:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.

    The biases of ``fnn_m``, ``twin_m`` and ``den_dec`` are shifted by
    ``cfg.output_bias_init``.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    F, D, Hd = cfg.n_bins, cfg.rnn_hidden, cfg.fnn_hidden
    for block, (n_in, n_h) in (("enc_f", (F, F)), ("enc_b", (F, F)),
                               ("dec", (2 * F, D)), ("twin", (2 * F, D))):
        for name, value in gru.init_params(rng, n_in, n_h).items():
            tensors[f"{block}.{name}"] = value
    for block, (n_out, n_in) in (("fnn_m", (F, D)), ("den_enc", (Hd, F)), ("den_dec", (F, Hd)),
                                 ("twin_m", (F, D)), ("psi", (D, D))):
        bound = 1.0 / np.sqrt(n_in)
        tensors[f"{block}.W"] = rng.uniform(-bound, bound, size=(n_out, n_in))
        tensors[f"{block}.b"] = rng.uniform(-bound, bound, size=n_out)
    for block in ("fnn_m", "twin_m", "den_dec"):
        tensors[f"{block}.b"] += cfg.output_bias_init
    return MadParameters(tensors)


@dataclass
class ForwardTrace:
    """Activations of one forward pass, kept for the backward pass."""

    Vx: np.ndarray          # (B, T, F) input segments
    V_central: np.ndarray   # (B, T', F) input restricted to the output frames
    H_enc: np.ndarray       # (B, T, 2F)
    H_dec: np.ndarray       # (B, T', D)
    mask_pre: np.ndarray
    mask: np.ndarray
    V1_masker: np.ndarray   # V1' = mask * V_central
    den_hidden_pre: np.ndarray
    den_hidden: np.ndarray
    den_out_pre: np.ndarray
    den_out: np.ndarray
    V1: np.ndarray
    H_twin: np.ndarray | None = None
    twin_mask_pre: np.ndarray | None = None
    V_twin: np.ndarray | None = None
    caches: dict | None = None


def _relu(x):
    return np.maximum(x, 0.0)


def _as_batch(V, cfg: MadConfig):
    """Accept an F x T spectrogram (or array) or a (B, T, F) batch."""
    arr = np.asarray(getattr(V, "bins", V), dtype=np.float64)
    if arr.ndim == 2:
        arr = arr.T[None]
    if arr.ndim != 3 or arr.shape[1:] != (cfg.seq_length, cfg.n_bins):
        raise InvalidArgumentError(
            f"expected segments of {cfg.seq_length} frames x {cfg.n_bins} bins, got {arr.shape}")
    return arr


def masker_forward(Vx, params: MadParameters, cfg: MadConfig, with_twin: bool = True,
                   mask_override=None) -> ForwardTrace:
    """Masker (and twin branch) on ``T``-frame segments.

    ``Vx`` is an ``F x T`` segment or a ``(B, T, F)`` batch. ``mask_override``
    replaces the computed mask, e.g. with ones to test the skip connection.
    """
    X = _as_batch(Vx, cfg)
    c = cfg.context
    caches = {}
    h_f, caches["enc_f"] = gru.forward(params.block("enc_f"), X)
    h_b, caches["enc_b"] = gru.forward(params.block("enc_b"), X, reverse=True)
    H_enc = np.concatenate([h_f + X, h_b + X], axis=-1)
    Hc = H_enc[:, c:cfg.seq_length - c]
    Vc = X[:, c:cfg.seq_length - c]
    H_dec, caches["dec"] = gru.forward(params.block("dec"), Hc)
    mask_pre = H_dec @ params["fnn_m.W"].T + params["fnn_m.b"]
    mask = _relu(mask_pre) if mask_override is None else np.broadcast_to(
        np.asarray(mask_override, dtype=np.float64), mask_pre.shape).copy()
    V1p = mask * Vc
    trace = ForwardTrace(X, Vc, H_enc, H_dec, mask_pre, mask, V1p,
                         None, None, None, None, None, caches=caches)
    if with_twin:
        H_twin, caches["twin"] = gru.forward(params.block("twin"), Hc, reverse=True)
        t_pre = H_twin @ params["twin_m.W"].T + params["twin_m.b"]
        trace.H_twin, trace.twin_mask_pre, trace.V_twin = H_twin, t_pre, _relu(t_pre) * Vc
    return trace


def denoiser_forward(V1p, params: MadParameters):
    """Returns (V1, hidden_pre, hidden, out_pre, out) for masker output ``V1p``."""
    V1p = np.asarray(V1p, dtype=np.float64)
    h_pre = V1p @ params["den_enc.W"].T + params["den_enc.b"]
    h = _relu(h_pre)
    o_pre = h @ params["den_dec.W"].T + params["den_dec.b"]
    o = _relu(o_pre)
    return o * V1p, h_pre, h, o_pre, o


def forward(Vx, params: MadParameters, cfg: MadConfig, with_twin: bool = True) -> ForwardTrace:
    trace = masker_forward(Vx, params, cfg, with_twin=with_twin)
    (trace.V1, trace.den_hidden_pre, trace.den_hidden,
     trace.den_out_pre, trace.den_out) = denoiser_forward(trace.V1_masker, params)
    return trace


def generalized_kl(V_hat, V_target, eps: float = 1e-8) -> float:
    """``sum(v * log((v + eps) / (vh + eps)) - v + vh)`` with ``v`` the target."""
    vh = np.asarray(getattr(V_hat, "bins", V_hat), dtype=np.float64)
    v = np.asarray(getattr(V_target, "bins", V_target), dtype=np.float64)
    if vh.shape != v.shape:
        raise InvalidArgumentError(f"shape mismatch {vh.shape} vs {v.shape}")
    return float(np.sum(v * np.log((v + eps) / (vh + eps)) - v + vh))


def _kl_grad(vh, v, eps):
    return 1.0 - v / (vh + eps)


def _twin_diff(trace: ForwardTrace, params: MadParameters):
    psi_h = trace.H_dec @ params["psi.W"].T + params["psi.b"]
    diff = psi_h - trace.H_twin
    return diff, np.sqrt(np.sum(diff * diff, axis=-1))


def twin_loss(trace: ForwardTrace, params: MadParameters) -> float:
    """Sum over frames (and batch) of ``||psi(h_dec_t) - h_twin_t||``."""
    if trace.H_twin is None:
        raise InvalidArgumentError("trace was computed without the twin branch")
    _, norms = _twin_diff(trace, params)
    return float(np.sum(norms))


def _targets(targets, cfg: MadConfig, trace: ForwardTrace):
    V = np.asarray(getattr(targets, "bins", targets), dtype=np.float64)
    if V.ndim == 2:
        V = V.T[None]
    if V.shape[1] == cfg.seq_length:
        V = V[:, cfg.context:cfg.seq_length - cfg.context]
    if V.shape != trace.V1_masker.shape:
        raise InvalidArgumentError(f"target shape {V.shape} does not match {trace.V1_masker.shape}")
    return V


def loss_terms(trace: ForwardTrace, targets, cfg: MadConfig, params: MadParameters) -> dict:
    """Individual loss components; ``targets`` is aligned like the input segment."""
    V = _targets(targets, cfg, trace)
    eps = cfg.epsilon_floor
    terms = {
        "kl_masker": generalized_kl(trace.V1_masker, V, eps),
        "kl_denoiser": generalized_kl(trace.V1, V, eps),
        "twin": 0.0,
        "kl_twin": 0.0,
        "l2": 0.0,
    }
    if trace.H_twin is not None:
        terms["twin"] = twin_loss(trace, params)
        if cfg.twin_output_loss:
            terms["kl_twin"] = generalized_kl(trace.V_twin, V, eps)
    if cfg.l2_penalty:
        terms["l2"] = float(sum(np.sum(w * w) for k, w in params.tensors.items() if k.endswith(".W")))
    return terms


def total_loss(trace: ForwardTrace, targets, cfg: MadConfig, params: MadParameters) -> float:
    t = loss_terms(trace, targets, cfg, params)
    return (cfg.lambda_masker * t["kl_masker"] + cfg.lambda_denoiser * t["kl_denoiser"]
            + cfg.lambda_twin * (t["twin"] + t["kl_twin"]) + cfg.l2_penalty * t["l2"])


def _dense_grads(grads, name, x, dpre):
    d2 = dpre.reshape(-1, dpre.shape[-1])
    grads[f"{name}.W"] += d2.T @ x.reshape(-1, x.shape[-1])
    grads[f"{name}.b"] += d2.sum(axis=0)


def backward(trace: ForwardTrace, targets, params: MadParameters, cfg: MadConfig) -> dict:
    """Exact gradient of :func:`total_loss` for every tensor in ``params``."""
    V = _targets(targets, cfg, trace)
    eps = cfg.epsilon_floor
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    Vc = trace.V_central

    # denoiser
    g_V1 = cfg.lambda_denoiser * _kl_grad(trace.V1, V, eps)
    g_V1p = cfg.lambda_masker * _kl_grad(trace.V1_masker, V, eps) + g_V1 * trace.den_out
    g_opre = g_V1 * trace.V1_masker * (trace.den_out_pre > 0)
    _dense_grads(grads, "den_dec", trace.den_hidden, g_opre)
    g_hpre = (g_opre @ params["den_dec.W"]) * (trace.den_hidden_pre > 0)
    _dense_grads(grads, "den_enc", trace.V1_masker, g_hpre)
    g_V1p = g_V1p + g_hpre @ params["den_enc.W"]

    # masker head
    g_mpre = g_V1p * Vc * (trace.mask_pre > 0)
    _dense_grads(grads, "fnn_m", trace.H_dec, g_mpre)
    g_Hdec = g_mpre @ params["fnn_m.W"]

    g_Hc = np.zeros((Vc.shape[0], Vc.shape[1], 2 * cfg.n_bins))
    if trace.H_twin is not None and cfg.lambda_twin > 0:
        lam = cfg.lambda_twin
        g_Htwin = np.zeros_like(trace.H_twin)
        if cfg.twin_output_loss:
            g_tpre = lam * _kl_grad(trace.V_twin, V, eps) * Vc * (trace.twin_mask_pre > 0)
            _dense_grads(grads, "twin_m", trace.H_twin, g_tpre)
            g_Htwin += g_tpre @ params["twin_m.W"]
        diff, norms = _twin_diff(trace, params)
        unit = np.zeros_like(diff)
        np.divide(diff, norms[..., None], out=unit, where=norms[..., None] > 0)
        g_psi = lam * unit
        _dense_grads(grads, "psi", trace.H_dec, g_psi)
        g_Hdec = g_Hdec + g_psi @ params["psi.W"]
        if not cfg.twin_stop_gradient:
            g_Htwin -= g_psi
        g_tw, dx_tw = gru.backward(params.block("twin"), trace.caches["twin"], g_Htwin)
        for k, v in g_tw.items():
            grads[f"twin.{k}"] += v
        g_Hc += dx_tw

    g_dec, dx_dec = gru.backward(params.block("dec"), trace.caches["dec"], g_Hdec)
    for k, v in g_dec.items():
        grads[f"dec.{k}"] += v
    g_Hc += dx_dec

    # encoder; the residual path ends at the input, which has no parameters
    F, c = cfg.n_bins, cfg.context
    g_Henc = np.zeros_like(trace.H_enc)
    g_Henc[:, c:cfg.seq_length - c] = g_Hc
    for block, sl in (("enc_f", slice(0, F)), ("enc_b", slice(F, 2 * F))):
        g_blk, _ = gru.backward(params.block(block), trace.caches[block], g_Henc[..., sl])
        for k, v in g_blk.items():
            grads[f"{block}.{k}"] += v

    if cfg.l2_penalty:
        for k, w in params.tensors.items():
            if k.endswith(".W"):
                grads[k] += 2.0 * cfg.l2_penalty * w
    return grads
