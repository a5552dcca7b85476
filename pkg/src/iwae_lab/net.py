"""Feed-forward blocks with hand-written backward passes.

Inputs are row-major batches ``(n, fan_in)``; a single vector is treated as a
batch of one and the output keeps the input's rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathcore import ShapeError

ACTIVATIONS = ("tanh", "exp", "sigmoid", "identity")


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def zeros_like(self) -> "LinearLayer":
        return LinearLayer(np.zeros_like(self.weight), np.zeros_like(self.bias))


@dataclass
class MlpBlock:
    layers: list[LinearLayer] = field(default_factory=list)
    activations: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise ValueError("one activation per layer is required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ShapeError(f"layer widths do not chain: {a.fan_out} -> {b.fan_in}")

    def arrays(self) -> list[np.ndarray]:
        return [arr for layer in self.layers for arr in layer.arrays()]

    def zeros_like(self) -> "MlpBlock":
        return MlpBlock([l.zeros_like() for l in self.layers], list(self.activations))


@dataclass
class ActivationTape:
    """What :func:`mlp_forward` keeps for the backward pass."""

    inputs: list[np.ndarray]  # input to each layer
    outputs: list[np.ndarray]  # post-activation output of each layer
    squeeze: bool  # caller passed a 1-D vector


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> LinearLayer:
    """Uniform Glorot weights in ``[-sqrt(6/(in+out)), sqrt(6/(in+out))]``, zero bias."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be positive")
    bound = glorot_bound(fan_in, fan_out)
    weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    return LinearLayer(weight, np.zeros(fan_out))


def mlp_init(rng: np.random.Generator, widths: list[int], activations: list[str]) -> MlpBlock:
    layers = [glorot_init(rng, a, b) for a, b in zip(widths, widths[1:])]
    return MlpBlock(layers, list(activations))


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "exp":
        return np.exp(z)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def activation_grad(name: str, out: np.ndarray) -> np.ndarray:
    """Derivative of the nonlinearity written in terms of its output."""
    if name == "tanh":
        return 1.0 - out * out
    if name == "exp":
        return out
    if name == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def linear_forward(layer: LinearLayer, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != layer.fan_in:
        raise ShapeError(f"expected width {layer.fan_in}, got {x.shape[-1]}")
    return x @ layer.weight.T + layer.bias


def linear_backward(layer: LinearLayer, x: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_x, grad_layer)`` for ``y = x W^T + b`` with batched rows."""
    grad = LinearLayer(grad_out.T @ x, grad_out.sum(axis=0))
    return grad_out @ layer.weight, grad


def mlp_forward(block: MlpBlock, x: np.ndarray) -> tuple[np.ndarray, ActivationTape]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if block.layers and h.shape[1] != block.layers[0].fan_in:
        raise ShapeError(f"input width {h.shape[1]} != fan-in {block.layers[0].fan_in}")
    inputs, outputs = [], []
    for layer, act in zip(block.layers, block.activations):
        inputs.append(h)
        h = activate(act, linear_forward(layer, h))
        outputs.append(h)
    tape = ActivationTape(inputs, outputs, squeeze)
    return (h[0] if squeeze else h), tape


def mlp_backward(block: MlpBlock, tape: ActivationTape, output_grad: np.ndarray):
    """Reverse pass through ``block``; returns ``(input_grad, grads)``.

    ``grads`` is an :class:`MlpBlock` of the same shape holding
    d(loss)/d(weight) and d(loss)/d(bias). The tape is left untouched.
    """
    if len(tape.inputs) != len(block.layers):
        raise ShapeError("tape was not produced by this block")
    g = np.asarray(output_grad, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    grads: list[LinearLayer] = [None] * len(block.layers)  # type: ignore[list-item]
    for i in reversed(range(len(block.layers))):
        layer, act = block.layers[i], block.activations[i]
        if g.shape != tape.outputs[i].shape:
            raise ShapeError(f"gradient shape {g.shape} != output shape {tape.outputs[i].shape}")
        g = g * activation_grad(act, tape.outputs[i])
        g, grads[i] = linear_backward(layer, tape.inputs[i], g)
    return (g[0] if tape.squeeze else g), MlpBlock(grads, list(block.activations))
