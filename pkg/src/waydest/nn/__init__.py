"""Small float64 autodiff core used by the WAY model."""

from . import functional
from .io import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, backward, grad, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "Tensor",
    "adam_step",
    "backward",
    "functional",
    "grad",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]
