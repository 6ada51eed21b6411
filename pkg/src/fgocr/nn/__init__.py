"""Small numpy tensor engine: autodiff, the layers the recognizers need, Adam."""

from . import functional
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .layers import BiLSTM, Conv2d, LayerConfig, Linear, Module
from .optim import Adam, AdamState, adam_step
from .tensor import (
    BackwardError,
    ShapeError,
    Tensor,
    concat,
    exp,
    log,
    log_softmax,
    no_grad,
    relu,
    softmax,
    stack,
    take,
    tanh,
)

__all__ = [
    "Adam",
    "AdamState",
    "BackwardError",
    "BiLSTM",
    "Checkpoint",
    "CheckpointError",
    "Conv2d",
    "LayerConfig",
    "Linear",
    "Module",
    "ShapeError",
    "Tensor",
    "adam_step",
    "concat",
    "exp",
    "functional",
    "load_checkpoint",
    "log",
    "log_softmax",
    "no_grad",
    "relu",
    "save_checkpoint",
    "softmax",
    "stack",
    "take",
    "tanh",
]
