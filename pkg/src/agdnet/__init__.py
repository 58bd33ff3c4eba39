"""Spectral reconstruction from RGB by an unrolled amended-gradient-descent network."""
from .kernels import BACKEND
from .network import AGDModel, NetConfig, forward, set_fixed_srf
from .observation import SRF, apply_srf, default_srf, spectral_bicubic, synth_gaussian_srf, synth_scene
from .trainer import TrainConfig, reconstruct, train

__version__ = "0.1.0"

__all__ = [
    "AGDModel", "BACKEND", "NetConfig", "SRF", "TrainConfig", "apply_srf", "default_srf",
    "forward", "reconstruct", "set_fixed_srf", "spectral_bicubic", "synth_gaussian_srf",
    "synth_scene", "train",
]
