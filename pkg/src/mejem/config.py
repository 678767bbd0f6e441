"""Experiment configuration: nested dataclasses serialised as JSON."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import Flags, LossWeights, MarginConfig
from .sam import SamConfig
from .sgld import SgldConfig


@dataclass
class ModelConfig:
    hidden_sizes: list[int] = field(default_factory=lambda: [128, 128])


@dataclass
class SyntheticData:
    n_classes: int = 3
    dim: int = 2
    n_train: int = 3000
    n_test: int = 600
    mean_radius: float = 4.0
    std: float = 0.7
    n_aux: int = 3000
    aux_box_halfwidth: float = 12.0
    aux_exclusion_radius: float = 6.0
    n_ood: int = 1000
    ood_radius: float = 9.0
    ood_noise_std: float = 0.5


@dataclass
class CsvData:
    n_classes: int = 0
    id_train: str = ""
    id_test: str = ""
    aux_ood: str = ""
    # name -> path of each evaluation OOD set
    ood_test: dict[str, str] = field(default_factory=dict)


@dataclass
class DataConfig:
    source: str = "synthetic"
    val_fraction: float = 0.2
    synthetic: SyntheticData = field(default_factory=SyntheticData)
    csv: CsvData = field(default_factory=CsvData)


@dataclass
class LossConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    margin: MarginConfig = field(default_factory=MarginConfig)


@dataclass
class OptimConfig:
    rho: float = 0.05
    beta: float = 5e-4
    base_lr: float = 0.1
    momentum: float = 0.9
    warmup_steps: int = 100
    decay_epochs: list[int] = field(default_factory=lambda: [15, 22, 27])
    decay_factor: float = 0.2

    def sam_config(self, enabled: bool) -> SamConfig:
        return SamConfig(enabled=enabled, **dataclasses.asdict(self))


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    checkpoint_every: int = 0
    log_every: int = 50


@dataclass
class EvalConfig:
    target_tpr: float = 0.95
    open_set_score: str = "energy"
    hist_bins: int = 50


@dataclass
class ExperimentConfig:
    name: str = "mejem"
    seed: int = 0
    output_dir: str = "runs/mejem"
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sgld: SgldConfig = field(default_factory=SgldConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    flags: Flags = field(default_factory=Flags)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "ExperimentConfig":
        self.flags.validate()
        self.loss.weights.validate()
        self.loss.margin.validate()
        self.sgld.validate()
        self.optim.sam_config(self.flags.sam).validate()
        if self.train.epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if any(h < 1 for h in self.model.hidden_sizes):
            raise ConfigError("hidden sizes must be positive")
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.data.source!r}")
        if self.data.source == "csv":
            c = self.data.csv
            if c.n_classes < 1 or not c.id_train or not c.id_test or not c.ood_test:
                raise ConfigError("csv data needs n_classes, id_train, id_test and ood_test paths")
            if self.flags.aux_data and not c.aux_ood:
                raise ConfigError("flags.aux_data is set but data.csv.aux_ood is empty")
        if self.eval.open_set_score not in ("softmax", "energy"):
            raise ConfigError("eval.open_set_score must be 'softmax' or 'energy'")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, ignoring where outputs are written."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw).validate()

    def dump(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"flags.margin": False})``."""
        d = self.to_dict()
        for key, value in changes.items():
            node = d
            *parents, leaf = key.split(".")
            for p in parents:
                node = node.get(p) if isinstance(node, dict) else None
                if not isinstance(node, dict):
                    raise ConfigError(f"unknown config key {key!r}")
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return ExperimentConfig.from_dict(d)


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, f"{where}.{name}")
        else:
            kwargs[name] = _coerce(tp, value, f"{where}.{name}")
    return cls(**kwargs)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if tp is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if tp is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if tp is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if origin is list:
            (item,) = typing.get_args(tp)
            return [_coerce(item, v, where) for v in value]
        if origin is dict:
            _, val_tp = typing.get_args(tp)
            return {str(k): _coerce(val_tp, v, where) for k, v in value.items()}
    except (TypeError, ValueError, AttributeError):
        raise ConfigError(f"{where}: bad value {value!r}") from None
    return value
