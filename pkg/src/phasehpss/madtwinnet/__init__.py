"""Toy-scale Masker-Denoiser network with twin regularisation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    ForwardTrace,
    MadConfig,
    MadParameters,
    backward,
    denoiser_forward,
    forward,
    generalized_kl,
    init_parameters,
    loss_terms,
    masker_forward,
    total_loss,
    twin_loss,
)
from .train import AdamConfig, TrainResult, predict_percussive, segment_pairs, train

__all__ = [
    "AdamConfig",
    "ForwardTrace",
    "MadConfig",
    "MadParameters",
    "TrainResult",
    "backward",
    "denoiser_forward",
    "forward",
    "generalized_kl",
    "init_parameters",
    "load_checkpoint",
    "loss_terms",
    "masker_forward",
    "predict_percussive",
    "save_checkpoint",
    "segment_pairs",
    "total_loss",
    "train",
    "twin_loss",
]
