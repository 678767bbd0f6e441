"""Detection and classification metrics. ID is the positive class throughout."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError
from .scoring import lower_quantile


@dataclass
class OodMetrics:
    auroc: float
    fpr95: float
    n_id: int
    n_ood: int

    def as_dict(self) -> dict:
        return asdict(self)


def _nonempty(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise MetricError(f"{name} scores are empty")
    return arr


def auroc(id_scores, ood_scores) -> float:
    """Mann-Whitney U over (ID, OOD) pairs with ties counted one half."""
    pos = _nonempty("ID", id_scores)
    neg = _nonempty("OOD", ood_scores)
    ranks = rankdata(np.concatenate([pos, neg]))
    n_pos, n_neg = pos.size, neg.size
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fpr_at_tpr(id_scores, ood_scores, tpr: float = 0.95) -> float:
    pos = _nonempty("ID", id_scores)
    neg = _nonempty("OOD", ood_scores)
    delta = lower_quantile(pos, 1.0 - tpr)
    return float(np.count_nonzero(neg >= delta) / neg.size)


def ood_metrics(id_scores, ood_scores, tpr: float = 0.95) -> OodMetrics:
    return OodMetrics(
        auroc=auroc(id_scores, ood_scores),
        fpr95=fpr_at_tpr(id_scores, ood_scores, tpr),
        n_id=int(np.size(id_scores)),
        n_ood=int(np.size(ood_scores)),
    )


def closed_set_precision(pred, truth) -> float:
    """Closed-set accuracy (reported under the name "precision")."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricError(f"length mismatch: {pred.shape} predictions vs {truth.shape} labels")
    if pred.size == 0:
        raise MetricError("no predictions")
    return float(np.count_nonzero(pred == truth) / pred.size)


@dataclass
class HistogramSpec:
    bin_count: int = 50
    range: tuple[float, float] | None = None


def histogram(scores_by_origin: dict, spec: HistogramSpec | None = None):
    """Counts per origin on bin edges shared by all origins.

    Returns ``(edges, {origin: counts})``. The range defaults to the pooled
    min/max; a degenerate range is widened by 0.5 either side.
    """
    spec = spec or HistogramSpec()
    if spec.bin_count < 1:
        raise MetricError("bin_count must be >= 1")
    arrays = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in scores_by_origin.items()}
    if spec.range is not None:
        lo, hi = spec.range
    else:
        pooled = np.concatenate([a for a in arrays.values()]) if arrays else np.empty(0)
        if pooled.size == 0:
            raise MetricError("histogram of no scores")
        lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, spec.bin_count + 1)
    counts = {}
    for origin, arr in arrays.items():
        # clip so out-of-range scores land in the edge bins and totals are conserved
        counts[origin], _ = np.histogram(np.clip(arr, lo, hi), bins=edges)
    return edges, counts
