"""MLP classifier and its energy-based reading.

A K-way classifier ``f(x)`` doubles as an energy model: the joint energy of
``(x, y)`` is ``-f(x)[y]`` and the marginal energy of ``x`` is
``-logsumexp f(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError


@dataclass
class ModelParams:
    """Weights are stored ``[fan_in, fan_out]`` so a layer is ``x @ W + b``."""

    layer_sizes: list[int]
    weights: list[Tensor]
    biases: list[Tensor]
    seed: int | None = None

    def __post_init__(self):
        sizes = self.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigError("layer count does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ConfigError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} do not chain "
                    f"{sizes[i]} -> {sizes[i + 1]}"
                )

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def is_finite(self) -> bool:
        return all(p.is_finite() for p in self.parameters())

    def frozen(self) -> "ModelParams":
        """View sharing the same arrays but recording no parameter gradients."""
        return ModelParams(
            list(self.layer_sizes),
            [Tensor(w.data) for w in self.weights],
            [Tensor(b.data) for b in self.biases],
            self.seed,
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            list(self.layer_sizes),
            [Tensor(w.data.copy(), requires_grad=True) for w in self.weights],
            [Tensor(b.data.copy(), requires_grad=True) for b in self.biases],
            self.seed,
        )

    def energy(self, x) -> Tensor:
        return marginal_energy(forward(self, x))

    @classmethod
    def from_arrays(cls, layer_sizes, weights, biases, seed=None) -> "ModelParams":
        return cls(
            [int(s) for s in layer_sizes],
            [Tensor(np.array(w, dtype=np.float64), requires_grad=True) for w in weights],
            [Tensor(np.array(b, dtype=np.float64), requires_grad=True) for b in biases],
            seed,
        )


def init_mlp(layer_sizes: Sequence[int], seed: int) -> ModelParams:
    """Uniform He initialisation, ``W ~ U(-a, a)`` with ``a = sqrt(6 / fan_in)``."""
    sizes = [int(s) for s in layer_sizes] if layer_sizes is not None else []
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ConfigError(f"invalid layer_sizes {list(layer_sizes or [])}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams.from_arrays(sizes, weights, biases, seed)


def forward(params: ModelParams, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(
            f"expected features of shape [n, {params.in_dim}], got {x.shape}"
        )
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    return h


def marginal_energy(logits: Tensor) -> Tensor:
    return ad.neg(ad.logsumexp(logits))


def joint_energy(logits: Tensor, labels) -> Tensor:
    return ad.neg(ad.gather(logits, labels))


def class_posteriors(logits: Tensor) -> Tensor:
    return ad.softmax(logits)


@dataclass
class EnergyReadout:
    logits: Tensor
    marginal_energy: Tensor
    joint_energy: Tensor | None = None


def readout(params: ModelParams, x, labels=None) -> EnergyReadout:
    logits = forward(params, x)
    joint = joint_energy(logits, labels) if labels is not None else None
    return EnergyReadout(logits, marginal_energy(logits), joint)
