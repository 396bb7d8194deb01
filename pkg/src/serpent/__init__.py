"""Selective state space image restoration at desk scale."""

from .arch import SerpentConfig, SerpentModel, count_flops, count_params
from .harness import DegradationSpec, TrainConfig, evaluate, psnr, ssim, train
from .tensor import Tensor, backward

__all__ = [
    "DegradationSpec",
    "SerpentConfig",
    "SerpentModel",
    "Tensor",
    "TrainConfig",
    "backward",
    "count_flops",
    "count_params",
    "evaluate",
    "psnr",
    "ssim",
    "train",
]
__version__ = "0.1.0"
