"""Muon-accelerated attention distillation on a small deterministic attention testbed."""

from .config import ExperimentConfig, baseline_adamw, benchmark_config, config_from_dict
from .muon import latent_update, muon_step, newton_schulz_orthogonalize
from .tensor import RNG_ALGORITHM
from .testbed import ToyModel, ToyModelConfig, forward
from .trainer import gradcheck, run_train

__all__ = [
    "ExperimentConfig", "baseline_adamw", "benchmark_config", "config_from_dict",
    "latent_update", "muon_step", "newton_schulz_orthogonalize", "RNG_ALGORITHM",
    "ToyModel", "ToyModelConfig", "forward", "gradcheck", "run_train",
]

__version__ = "0.1.0"
