"""A small fully-connected feature extractor with exact backpropagation.

Layers are affine maps followed by ReLU, except the last, which is affine
only. The forward pass returns a cache sufficient for an exact backward pass;
the ReLU subgradient at zero is taken as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "none")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight must be (out, in) with an out-length bias")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("need at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError("consecutive layer dimensions must chain")
        if self.layers[-1].activation != "none":
            raise ValueError("final layer must have no activation")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.in_dim,) + tuple(layer.weight.shape[0] for layer in self.layers)


def init_mlp(widths: tuple[int, ...] | list[int], rng: np.random.Generator) -> MlpParams:
    """He-style init: weights ~ N(0, 2/fan_in), biases zero, ReLU hidden layers."""
    if len(widths) < 2:
        raise ValueError("need input and output widths")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        weight = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        activation = "none" if i == len(widths) - 2 else "relu"
        layers.append(Layer(weight=weight, bias=np.zeros(fan_out), activation=activation))
    return MlpParams(layers=layers)


def forward_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward over a (B, in_dim) batch; cache holds inputs and pre-activations."""
    x = np.asarray(x, dtype=float)
    cache = []
    out = x
    for layer in params.layers:
        pre = out @ layer.weight.T + layer.bias
        cache.append((out, pre))
        out = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return out, cache


def backward_batch(
    params: MlpParams, cache: list, d_out: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Exact gradients for a batch; returns per-layer (d_weight, d_bias) and d_x."""
    d_cur = np.asarray(d_out, dtype=float)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)  # type: ignore[list-item]
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        inp, pre = cache[idx]
        d_pre = d_cur * (pre > 0.0) if layer.activation == "relu" else d_cur
        grads[idx] = (d_pre.T @ inp, d_pre.sum(axis=0))
        d_cur = d_pre @ layer.weight
    return grads, d_cur


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Feature vector z = Z(x) for one input, plus the backprop cache."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.in_dim,):
        raise ValueError(f"input has shape {x.shape}, network expects ({params.in_dim},)")
    z, cache = forward_batch(params, x[None, :])
    return z[0], cache


def mlp_backward(
    params: MlpParams, cache: list, d_z: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Gradients for a single-sample cache produced by ``mlp_forward``."""
    d_z = np.asarray(d_z, dtype=float)
    if d_z.shape != (params.out_dim,):
        raise ValueError(f"upstream has shape {d_z.shape}, expected ({params.out_dim},)")
    grads, d_x = backward_batch(params, cache, d_z[None, :])
    return grads, d_x[0]
