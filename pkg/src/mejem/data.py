"""Synthetic benchmark generators, feature-CSV ingestion and normalisation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError

ID_SPLITS = ("id_train", "id_val", "id_test")
OOD_SPLITS = ("aux_ood", "ood_test")
OUTLIER_LABEL = -1
STD_FLOOR = 1e-8
MIN_ACCEPTANCE = 0.01


@dataclass
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray
    split: str
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataError(
                f"features {self.features.shape} and labels {self.labels.shape} do not align"
            )
        if self.split in ID_SPLITS:
            if np.any(self.labels < 0):
                raise DataError(f"{self.split} rows must carry class labels >= 0")
        elif self.split in OOD_SPLITS:
            if np.any(self.labels != OUTLIER_LABEL):
                raise DataError(f"{self.split} rows must carry label {OUTLIER_LABEL}")
        else:
            raise DataError(f"unknown split {self.split!r}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows, split: str | None = None) -> "LabeledBatch":
        return LabeledBatch(self.features[rows], self.labels[rows], split or self.split)


def gen_gaussian_mixture(k: int, n_per_class: int, mean_radius: float, std: float,
                         seed: int, dim: int = 2, split: str = "id_train") -> LabeledBatch:
    """Isotropic Gaussians centred on a circle of radius ``mean_radius`` in the first two axes."""
    if k < 2 or n_per_class < 1 or dim < 2 or std < 0:
        raise ConfigError(f"invalid mixture config k={k}, n_per_class={n_per_class}, dim={dim}, std={std}")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = np.zeros((k, dim))
    centers[:, 0] = mean_radius * np.cos(angles)
    centers[:, 1] = mean_radius * np.sin(angles)
    labels = np.repeat(np.arange(k), n_per_class)
    x = centers[labels] + std * rng.standard_normal((k * n_per_class, dim))
    return LabeledBatch(x, labels, split, {"centers": centers})


def gen_ring_ood(n: int, radius: float, noise_std: float, seed: int, dim: int = 2) -> LabeledBatch:
    if n <= 0:
        raise ConfigError(f"ring OOD needs n > 0, got {n}")
    if dim < 2:
        raise ConfigError("ring OOD needs dim >= 2")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    x = noise_std * rng.standard_normal((n, dim))
    x[:, 0] += radius * np.cos(theta)
    x[:, 1] += radius * np.sin(theta)
    return LabeledBatch(x, np.full(n, OUTLIER_LABEL), "ood_test")


def gen_aux_outliers(n: int, box_halfwidth: float, exclusion_radius: float, seed: int,
                     dim: int = 2) -> LabeledBatch:
    """Uniform points in ``[-w, w]^dim`` outside the ball of ``exclusion_radius``."""
    if n <= 0:
        raise ConfigError(f"auxiliary outliers need n > 0, got {n}")
    if not box_halfwidth > exclusion_radius >= 0:
        raise ConfigError("need box_halfwidth > exclusion_radius >= 0")
    rng = np.random.default_rng(seed)
    kept: list[np.ndarray] = []
    n_kept = n_drawn = 0
    chunk = max(1024, 2 * n)
    while n_kept < n:
        cand = rng.uniform(-box_halfwidth, box_halfwidth, size=(chunk, dim))
        ok = cand[np.linalg.norm(cand, axis=1) > exclusion_radius]
        kept.append(ok)
        n_kept += len(ok)
        n_drawn += chunk
        if n_kept / n_drawn < MIN_ACCEPTANCE and n_drawn >= 10_000:
            raise ConfigError(
                f"rejection sampling acceptance {n_kept / n_drawn:.4f} below {MIN_ACCEPTANCE}; "
                "exclusion radius too large for the box"
            )
    acceptance = n_kept / n_drawn
    x = np.concatenate(kept)[:n]
    return LabeledBatch(x, np.full(n, OUTLIER_LABEL), "aux_ood", {"acceptance_rate": acceptance})


def split_validation(batch: LabeledBatch, fraction: float, seed: int) -> tuple[LabeledBatch, LabeledBatch]:
    """Carve a shuffled validation split off ``id_train``."""
    if batch.split != "id_train":
        raise ContractError("validation is carved from id_train only")
    if not 0 < fraction < 1:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {fraction}")
    n = len(batch)
    n_val = int(round(fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    return batch.subset(np.sort(perm[n_val:])), batch.subset(np.sort(perm[:n_val]), "id_val")


# ------------------------------------------------------------------- CSV I/O


def write_feature_csv(path, batch: LabeledBatch) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"feature_{j}" for j in range(batch.dim)] + ["label"])
        for row, label in zip(batch.features, batch.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_feature_csv(path, k: int, split: str = "id_train") -> LabeledBatch:
    """Parse ``feature_0,...,feature_{d-1},label``; errors carry the 1-based line number."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file")
        d = len(header) - 1
        if d < 1 or header[-1].strip() != "label" or any(
            h.strip() != f"feature_{j}" for j, h in enumerate(header[:-1])
        ):
            raise DataError(f"{path}:1: header must be feature_0,...,feature_{{d-1}},label")
        feats, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataError(f"{path}:{line_no}: expected {d + 1} cells, got {len(row)}")
            try:
                values = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: non-numeric cell ({exc})") from None
            if not all(np.isfinite(values)):
                raise DataError(f"{path}:{line_no}: non-finite feature")
            if not OUTLIER_LABEL <= label < k:
                raise DataError(f"{path}:{line_no}: label {label} outside [-1, {k})")
            if split in ID_SPLITS and label == OUTLIER_LABEL:
                raise DataError(f"{path}:{line_no}: outlier label in {split} data")
            if split in OOD_SPLITS and label != OUTLIER_LABEL:
                raise DataError(f"{path}:{line_no}: class label in {split} data")
            feats.append(values)
            labels.append(label)
    if not feats:
        raise DataError(f"{path}: no data rows")
    return LabeledBatch(np.array(feats), np.array(labels), split, {"path": str(path)})


# ------------------------------------------------------------- normalisation


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, batch: LabeledBatch) -> LabeledBatch:
        if batch.dim != self.mean.shape[0]:
            raise DataError(f"normaliser expects dimension {self.mean.shape[0]}, got {batch.dim}")
        return replace(batch, features=(batch.features - self.mean) / self.std, info=dict(batch.info))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def fit_normalizer(batch: LabeledBatch) -> Normalizer:
    if batch.split != "id_train":
        raise ContractError(f"normaliser must be fit on id_train, not {batch.split}")
    mean = batch.features.mean(axis=0)
    std = np.maximum(batch.features.std(axis=0), STD_FLOOR)
    return Normalizer(mean, std)


def apply_normalizer(norm: Normalizer, batch: LabeledBatch) -> LabeledBatch:
    return norm.apply(batch)
