"""Sharpness-aware minimisation around SGD with momentum and weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DivergenceError

GRAD_NORM_FLOOR = 1e-12


@dataclass
class SamConfig:
    rho: float = 0.05
    beta: float = 5e-4
    base_lr: float = 0.1
    momentum: float = 0.9
    warmup_steps: int = 1000
    decay_epochs: list[int] = field(default_factory=lambda: [35, 70, 100])
    decay_factor: float = 0.2
    enabled: bool = True

    def validate(self) -> None:
        if self.rho < 0 or self.beta < 0:
            raise ConfigError("rho and beta must be non-negative")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ConfigError(f"decay_epochs must be strictly increasing: {self.decay_epochs}")


@dataclass
class OptimizerState:
    momentum: list[np.ndarray]
    step: int = 0
    epoch: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params])


def lr_at(step: int, epoch: int, cfg: SamConfig) -> float:
    if step < cfg.warmup_steps:
        return cfg.base_lr * (step + 1) / cfg.warmup_steps
    n_decays = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.base_lr * cfg.decay_factor ** n_decays


def sam_perturbation(grads: np.ndarray, rho: float) -> np.ndarray:
    """``rho * g / ||g||`` on the flattened parameter gradient; zero if ``||g||`` vanishes."""
    g = np.asarray(grads, dtype=np.float64)
    norm = float(np.sqrt(np.sum(g * g)))
    if rho == 0 or norm < GRAD_NORM_FLOOR:
        return np.zeros_like(g)
    return (rho / norm) * g


def _evaluate(params, loss_fn) -> tuple[float, list[np.ndarray], dict]:
    for p in params:
        p.zero_grad()
    out = loss_fn()
    loss, diag = out if isinstance(out, tuple) else (out, {})
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}", diag)
    ad.backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError("non-finite parameter gradient", diag)
    return value, grads, diag


def sam_step(params: Sequence[Tensor], loss_fn: Callable, state: OptimizerState,
             cfg: SamConfig) -> tuple[float, dict]:
    """One SAM update in place; returns the unperturbed loss and its diagnostics.

    ``loss_fn()`` must rebuild the loss from the current parameter arrays and
    be deterministic. The applied update is ``v = mu * v + (g + 2 beta theta)``,
    ``theta -= lr * v`` where ``g`` is the gradient at ``theta + e`` (or at
    ``theta`` when SAM is disabled).
    """
    params = list(params)
    loss, grads, diag = _evaluate(params, loss_fn)

    if cfg.enabled:
        flat = np.concatenate([g.ravel() for g in grads])
        eps = sam_perturbation(flat, cfg.rho)
        saved = [p.data.copy() for p in params]
        offset = 0
        for p in params:
            size = p.data.size
            p.data += eps[offset:offset + size].reshape(p.shape)
            offset += size
        try:
            _, grads, _ = _evaluate(params, loss_fn)
        finally:
            for p, orig in zip(params, saved):
                p.data[...] = orig

    lr = lr_at(state.step, state.epoch, cfg)
    for p, g, v in zip(params, grads, state.momentum):
        if cfg.beta:
            g = g + 2.0 * cfg.beta * p.data
        v *= cfg.momentum
        v += g
        p.data -= lr * v
        p.zero_grad()
    state.step += 1
    diag = dict(diag, lr=lr)
    return loss, diag
