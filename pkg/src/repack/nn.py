"""Tiny float64 layer stack with hand-written reverse-mode gradients.

Layers cache what they need during ``forward`` and consume it in
``backward``; parameters live in a flat ``{name: array}`` dict so the
optimizer and the finite-difference checker can address them uniformly.
"""

from __future__ import annotations

import numpy as np


class Dense:
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator | None,
                 bias: bool = True):
        self.name = name
        self.in_dim, self.out_dim = in_dim, out_dim
        bound = 1.0 / np.sqrt(in_dim)
        if rng is None:
            self.weight = np.zeros((out_dim, in_dim))
        else:
            self.weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim) if bias else None
        self._x = None

    def params(self) -> dict[str, np.ndarray]:
        p = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            p[f"{self.name}.bias"] = self.bias
        return p

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = x @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y

    def backward(self, gy: np.ndarray, grads: dict) -> np.ndarray:
        grads[f"{self.name}.weight"] = gy.T @ self._x
        if self.bias is not None:
            grads[f"{self.name}.bias"] = gy.sum(axis=0)
        return gy @ self.weight


class Tanh:
    def params(self):
        return {}

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, gy, grads):
        return gy * (1.0 - self._y**2)


class SiLU:
    def params(self):
        return {}

    def forward(self, x):
        self._x = x
        self._s = 1.0 / (1.0 + np.exp(-x))
        return x * self._s

    def backward(self, gy, grads):
        s = self._s
        return gy * (s * (1.0 + self._x * (1.0 - s)))


ACTIVATIONS = {"tanh": Tanh, "silu": SiLU}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, gy, grads: dict | None = None):
        grads = {} if grads is None else grads
        for layer in reversed(self.layers):
            gy = layer.backward(gy, grads)
        return gy, grads


def mlp(prefix: str, sizes: list[int], rng, activation: str = "silu") -> Sequential:
    """Dense layers of the given widths with ``activation`` between them."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(f"{prefix}{i}", a, b, rng))
        if i < len(sizes) - 2:
            layers.append(ACTIVATIONS[activation]())
    return Sequential(layers)


def count_params(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


def loss_and_grad(pred: np.ndarray, target: np.ndarray, objective: str) -> tuple[float, np.ndarray]:
    """Mean-over-elements loss and its gradient w.r.t. ``pred``."""
    diff = pred - target
    n = diff.size
    if objective == "l2":
        return float(np.mean(diff**2)), 2.0 * diff / n
    if objective == "l1":
        return float(np.mean(np.abs(diff))), np.sign(diff) / n
    raise ValueError(f"unknown objective {objective!r}")


class MomentumSGD:
    """Heavy-ball SGD with a fixed learning rate; updates parameters in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            v = self.velocity[k]
            v *= self.momentum
            v += grads[k]
            p -= self.lr * v
