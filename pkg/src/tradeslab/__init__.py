"""TRADES adversarial training with gradient-masking diagnostics."""

from .attack import AttackConfig, AttackTrace, fgsm, pgd, robust_accuracy, square_search, tpgd
from .data import BatchPlan, Dataset, batches, gen_blobs, load_csv, split
from .metrics import fosc, grad_telemetry, landscape, masking_verdict, self_healing_flag, sgcs
from .model import MlpSpec, Params, flatten_grads, forward, init_params
from .rng import Rng
from .tensor import Tensor, backward
from .train import GuardState, TrainConfig, fit, lr_at, sgd_step

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackTrace", "fgsm", "pgd", "robust_accuracy", "square_search", "tpgd",
    "BatchPlan", "Dataset", "batches", "gen_blobs", "load_csv", "split",
    "fosc", "grad_telemetry", "landscape", "masking_verdict", "self_healing_flag", "sgcs",
    "MlpSpec", "Params", "flatten_grads", "forward", "init_params",
    "Rng", "Tensor", "backward",
    "GuardState", "TrainConfig", "fit", "lr_at", "sgd_step",
]
