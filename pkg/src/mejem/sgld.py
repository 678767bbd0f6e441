"""Langevin sampling from the model density with a persistent replay buffer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

# chains whose |energy| exceeds this are restarted from the init distribution
DIVERGENCE_LIMIT = 1e6


@dataclass
class SgldConfig:
    step_size: float = 0.1
    n_steps: int = 15
    reinit_prob: float = 0.05
    buffer_capacity: int = 10000

    def validate(self) -> None:
        if not self.step_size > 0:
            raise ConfigError(f"sgld step_size must be > 0, got {self.step_size}")
        if self.n_steps < 0:
            raise ConfigError(f"sgld n_steps must be >= 0, got {self.n_steps}")
        if not 0.0 <= self.reinit_prob <= 1.0:
            raise ConfigError(f"sgld reinit_prob must lie in [0, 1], got {self.reinit_prob}")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")


class ReplayBuffer:
    """Fixed-capacity pool of persistent chain states.

    New chains are drawn uniformly from the box ``[low, high]``, which the
    runner sets to the per-dimension range of the normalised training data.
    """

    def __init__(self, capacity: int, low, high):
        low = np.atleast_1d(np.asarray(low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(high, dtype=np.float64))
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        if low.shape != high.shape or np.any(high < low):
            raise ConfigError("init box needs low <= high with matching shapes")
        self.capacity = int(capacity)
        self.low = low
        self.high = high
        self._entries = np.empty((self.capacity, low.shape[0]), dtype=np.float64)
        self.count = 0

    @property
    def dim(self) -> int:
        return self.low.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._entries[: self.count]

    def __len__(self) -> int:
        return self.count

    def init_samples(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def draw(self, n: int, reinit_prob: float, rng: np.random.Generator):
        """Starting states for ``n`` chains and the slot each one writes back to.

        A slot of ``-1`` marks a fresh chain whose slot is assigned on write.
        """
        fresh = rng.random(n) < reinit_prob
        if self.count == 0:
            fresh[:] = True
        slots = np.full(n, -1, dtype=np.int64)
        n_old = int(np.count_nonzero(~fresh))
        if n_old:
            slots[~fresh] = rng.integers(0, self.count, size=n_old)
        x0 = np.empty((n, self.dim), dtype=np.float64)
        x0[~fresh] = self._entries[slots[~fresh]]
        x0[fresh] = self.init_samples(int(np.count_nonzero(fresh)), rng)
        return x0, slots

    def write(self, slots: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Store final chain states; returns the slot indices actually written."""
        slots = np.array(slots, dtype=np.int64)
        for i in np.flatnonzero(slots < 0):
            if self.count < self.capacity:
                slots[i] = self.count
                self.count += 1
            else:
                slots[i] = rng.integers(0, self.capacity)
        self._entries[slots] = x
        return slots

    def state(self) -> dict:
        return {"capacity": self.capacity, "low": self.low, "high": self.high, "entries": self.entries.copy()}

    @classmethod
    def from_state(cls, state: dict) -> "ReplayBuffer":
        buf = cls(int(state["capacity"]), state["low"], state["high"])
        entries = np.asarray(state["entries"], dtype=np.float64).reshape(-1, buf.dim)
        buf._entries[: len(entries)] = entries
        buf.count = len(entries)
        return buf


def sgld_step(x: np.ndarray, grad_energy: np.ndarray, step_size: float, noise: np.ndarray) -> np.ndarray:
    """One overdamped Langevin update ``x - (eps^2 / 2) grad E + eps z``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != np.shape(grad_energy) or x.shape != np.shape(noise):
        raise DimensionError(
            f"sgld_step shapes disagree: x {x.shape}, grad {np.shape(grad_energy)}, noise {np.shape(noise)}"
        )
    if step_size < 0:
        raise ConfigError("step_size must be >= 0")
    return x - (step_size * step_size / 2.0) * grad_energy + step_size * noise


def energy_and_grad(model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row energy and its input gradient. ``model`` needs an ``energy`` method."""
    xt = Tensor(x, requires_grad=True)
    e = model.energy(xt)
    ad.backward(ad.sum(e))
    return e.data, xt.grad


def sample_negatives(model, buffer: ReplayBuffer, n: int, cfg: SgldConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Run ``n`` persistent chains for ``cfg.n_steps`` Langevin steps.

    ``model`` is anything exposing ``energy(x) -> Tensor[n]``; if it has
    ``frozen()`` that view is used so parameters never collect gradients.
    """
    if n <= 0:
        raise ConfigError(f"number of negatives must be positive, got {n}")
    frozen = model.frozen() if hasattr(model, "frozen") else model
    in_dim = getattr(frozen, "in_dim", buffer.dim)
    if in_dim != buffer.dim:
        raise DimensionError(f"buffer dimension {buffer.dim} != model input {in_dim}")

    x, slots = buffer.draw(n, cfg.reinit_prob, rng)
    eps = cfg.step_size
    for _ in range(cfg.n_steps):
        energy, grad = energy_and_grad(frozen, x)
        bad = ~np.isfinite(energy) | (np.abs(energy) > DIVERGENCE_LIMIT)
        bad |= ~np.all(np.isfinite(grad), axis=1)
        noise = rng.standard_normal(x.shape)
        if bad.any():
            grad[bad] = 0.0
            x[bad] = buffer.init_samples(int(bad.sum()), rng)
            noise[bad] = 0.0
        x = sgld_step(x, grad, eps, noise)
    if cfg.n_steps:
        energy = frozen.energy(Tensor(x)).data
        bad = ~np.isfinite(energy) | (np.abs(energy) > DIVERGENCE_LIMIT)
        if bad.any():
            x[bad] = buffer.init_samples(int(bad.sum()), rng)
    buffer.write(slots, x, rng)
    return x
