"""Scaled inverse graphics: micro-macro tri-planes trained in a learned
latent space, with per-scene storage and training-cost accounting."""

__version__ = "0.1.0"

from .backend import active_backend
from .config import ConfigError, TrainConfig, load_config, save_config
from .costs import CostModel, baseline_mem, baseline_time, cost_mem, \
    cost_time, crossover, fit_cost_model, paper_fixtures
from .metrics import psnr, ssim
from .params import ParamStore, load_checkpoint, save_checkpoint
from .triplane import BasisSet, MicroMacroTriPlane, TriPlane, compose, \
    trainable_count

__all__ = [
    "__version__", "active_backend",
    "ConfigError", "TrainConfig", "load_config", "save_config",
    "CostModel", "baseline_mem", "baseline_time", "cost_mem", "cost_time",
    "crossover", "fit_cost_model", "paper_fixtures",
    "psnr", "ssim",
    "ParamStore", "load_checkpoint", "save_checkpoint",
    "BasisSet", "MicroMacroTriPlane", "TriPlane", "compose",
    "trainable_count",
]
