"""Checkpoint container (``.npz``) holding model, normaliser, optimiser,
replay buffer and RNG state so training can resume exactly."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Normalizer
from .errors import DataError
from .model import ModelParams
from .sam import OptimizerState
from .sgld import ReplayBuffer

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    normalizer: Normalizer
    config_json: str = "{}"
    config_hash: str = ""
    optimizer: OptimizerState | None = None
    buffer: ReplayBuffer | None = None
    rng_states: dict = field(default_factory=dict)
    # number of completed epochs
    epoch: int = 0

    def payload_hash(self) -> str:
        return params_hash(self.params, self.normalizer)


def params_hash(params: ModelParams, normalizer: Normalizer | None = None) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(params.layer_sizes, dtype=np.int64).tobytes())
    for p in params.parameters():
        h.update(np.ascontiguousarray(p.data).tobytes())
    if normalizer is not None:
        h.update(normalizer.mean.tobytes())
        h.update(normalizer.std.tobytes())
    return h.hexdigest()


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "layer_sizes": np.asarray(ckpt.params.layer_sizes, dtype=np.int64),
        "norm_mean": ckpt.normalizer.mean,
        "norm_std": ckpt.normalizer.std,
        "config_json": np.array(ckpt.config_json),
        "config_hash": np.array(ckpt.config_hash),
        "rng_states": np.array(json.dumps(ckpt.rng_states, sort_keys=True)),
        "epoch": np.array(ckpt.epoch),
    }
    for i, (w, b) in enumerate(zip(ckpt.params.weights, ckpt.params.biases)):
        arrays[f"weight_{i}"] = w.data
        arrays[f"bias_{i}"] = b.data
    if ckpt.optimizer is not None:
        arrays["optim_step"] = np.array(ckpt.optimizer.step)
        arrays["optim_epoch"] = np.array(ckpt.optimizer.epoch)
        for i, m in enumerate(ckpt.optimizer.momentum):
            arrays[f"momentum_{i}"] = m
    if ckpt.buffer is not None:
        state = ckpt.buffer.state()
        arrays["buffer_capacity"] = np.array(state["capacity"])
        arrays["buffer_low"] = state["low"]
        arrays["buffer_high"] = state["high"]
        arrays["buffer_entries"] = state["entries"]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with z:
        if int(z["format_version"]) != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {int(z['format_version'])}")
        sizes = [int(s) for s in z["layer_sizes"]]
        n_layers = len(sizes) - 1
        params = ModelParams.from_arrays(
            sizes,
            [z[f"weight_{i}"] for i in range(n_layers)],
            [z[f"bias_{i}"] for i in range(n_layers)],
        )
        ckpt = Checkpoint(
            params=params,
            normalizer=Normalizer(z["norm_mean"].copy(), z["norm_std"].copy()),
            config_json=str(z["config_json"]),
            config_hash=str(z["config_hash"]),
            rng_states=json.loads(str(z["rng_states"])),
            epoch=int(z["epoch"]),
        )
        if "optim_step" in z.files:
            ckpt.optimizer = OptimizerState(
                [z[f"momentum_{i}"].copy() for i in range(2 * n_layers)],
                step=int(z["optim_step"]),
                epoch=int(z["optim_epoch"]),
            )
        if "buffer_capacity" in z.files:
            ckpt.buffer = ReplayBuffer.from_state({
                "capacity": int(z["buffer_capacity"]),
                "low": z["buffer_low"],
                "high": z["buffer_high"],
                "entries": z["buffer_entries"],
            })
    return ckpt
