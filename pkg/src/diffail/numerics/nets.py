"""Dense MLP layers over the autodiff substrate.

Activations are referenced by tag so that parameter sets stay plain data and
checkpoints never need to serialize code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from . import autodiff as ad
from .autodiff import Graph, Tensor


def mish(t):
    """x * tanh(softplus(x)); smooth, non-monotone below zero, ~linear above."""
    return ad.mul(t, ad.tanh_softplus(t))


def identity(t):
    return t


ACTIVATIONS = {
    "linear": identity,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "mish": mish,
}


@dataclass
class MlpParams:
    """Per-layer weight matrices, bias vectors, and activation tags.

    weights[i] has shape (fan_in, fan_out); biases[i] has shape (fan_out,).
    """

    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)
    activations: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigError("layer lists must have equal length")
        for i in range(len(self.weights) - 1):
            if self.weights[i].data.shape[1] != self.weights[i + 1].data.shape[0]:
                raise ConfigError(
                    f"layer {i} output dim {self.weights[i].data.shape[1]} does not "
                    f"chain into layer {i + 1} input dim {self.weights[i + 1].data.shape[0]}"
                )
        for tag in self.activations:
            if tag not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {tag!r}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].data.shape[1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy_from(self, other: "MlpParams"):
        for dst, src in zip(self.parameters(), other.parameters()):
            np.copyto(dst.data, src.data)


def init_mlp(widths, activations, rng) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if len(widths) < 2 or len(activations) != len(widths) - 1:
        raise ConfigError("need len(widths) >= 2 and one activation per layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(ad.leaf(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        biases.append(ad.leaf(np.zeros(fan_out)))
    return MlpParams(weights, biases, list(activations))


def forward_mlp(params: MlpParams, x, graph: Graph | None = None) -> Tensor:
    """Run the MLP, recording intermediates on ``graph`` when given.

    Accepts a Tensor or an ndarray of shape (batch, in_dim) or (in_dim,).
    """
    h = x if isinstance(x, Tensor) else ad.constant(np.atleast_2d(x))
    if h.data.ndim != 2 or h.data.shape[1] != params.in_dim:
        raise ConfigError(
            f"input dim {h.data.shape} does not match first layer ({params.in_dim})"
        )
    ctx = graph if graph is not None else _null_ctx()
    with ctx:
        for w, b, tag in zip(params.weights, params.biases, params.activations):
            h = ACTIVATIONS[tag](ad.add(ad.matmul(h, w), b))
    return h


class _null_ctx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def count_params(params: MlpParams) -> int:
    return sum(p.data.size for p in params.parameters())
