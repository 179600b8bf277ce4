"""From-scratch numpy neural network: layers, model, optimizers, checkpoints."""

from .checkpoint import (
    CheckpointError,
    inspect_checkpoint,
    load_params,
    save_params,
)
from .model import PROB_EPS, ParamStore, PolicyValueNet
from .optim import Adam, NonFiniteGradientError, sgd_step

__all__ = [
    "Adam",
    "CheckpointError",
    "NonFiniteGradientError",
    "PROB_EPS",
    "ParamStore",
    "PolicyValueNet",
    "inspect_checkpoint",
    "load_params",
    "save_params",
    "sgd_step",
]
