from . import autodiff
from .adam import AdamState, adam_step
from .autodiff import Graph, Tensor, constant, detach, leaf, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .nets import ACTIVATIONS, MlpParams, forward_mlp, init_mlp, mish

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "Graph",
    "MlpParams",
    "Tensor",
    "adam_step",
    "autodiff",
    "constant",
    "detach",
    "forward_mlp",
    "init_mlp",
    "leaf",
    "load_checkpoint",
    "mish",
    "no_grad",
    "save_checkpoint",
]
