"""Energy-based joint training of robust, generative classifiers.

The classifier doubles as an energy model: its logits define a joint
energy over (input, class), trained so that clean data, adversarial
perturbations, and Langevin samples share one energy landscape. The
package exposes the pieces individually (model, sampler, adversary,
trainer, metrics) plus a scikit-learn style estimator and a CLI.
"""
from .adversary import AttackConfig, energy_adversary, pgd_ce_attack
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import load_config, resolve_config
from .data import Dataset, Normalization, load_csv, load_idx, make_gaussian_ring, make_moons, make_ring_splits
from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    DomainError,
    EbjdatError,
    NonFiniteError,
    TrainingAborted,
    UsageError,
)
from .estimator import EBJDATClassifier
from .model import EnergyModel, MlpSpec, Params, init_params
from .report import (
    EnergyReport,
    accuracy,
    energy_histograms,
    histogram_overlap,
    mmd_rbf,
    one_to_one_energy_gap,
    robust_accuracy,
)
from .sampler import ReplayBuffer, SamplerConfig, sample_negatives, sgld_step
from .trainer import TrainConfig, TrainState, fit

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "DimensionError",
    "DomainError",
    "EBJDATClassifier",
    "EbjdatError",
    "EnergyModel",
    "EnergyReport",
    "MlpSpec",
    "NonFiniteError",
    "Normalization",
    "Params",
    "ReplayBuffer",
    "SamplerConfig",
    "TrainConfig",
    "TrainState",
    "TrainingAborted",
    "UsageError",
    "accuracy",
    "energy_adversary",
    "energy_histograms",
    "fit",
    "histogram_overlap",
    "init_params",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "load_idx",
    "make_gaussian_ring",
    "make_moons",
    "make_ring_splits",
    "mmd_rbf",
    "one_to_one_energy_gap",
    "pgd_ce_attack",
    "resolve_config",
    "robust_accuracy",
    "sample_negatives",
    "save_checkpoint",
    "sgld_step",
    "__version__",
]
