"""OOD scores, threshold calibration and open-set prediction.

Both scores are oriented so that higher means more in-distribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import CalibrationError, ConfigError

SCORE_KINDS = ("softmax", "energy")
MIN_CALIBRATION_SAMPLES = 20


def _logits_array(logits) -> np.ndarray:
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return np.atleast_2d(arr)


def _row_logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def softmax_score(logits) -> np.ndarray:
    z = _logits_array(logits)
    # max_y softmax = exp(max - logsumexp)
    return np.exp(z.max(axis=1) - _row_logsumexp(z))


def energy_score(logits) -> np.ndarray:
    return _row_logsumexp(_logits_array(logits))


def score(logits, kind: str) -> np.ndarray:
    if kind == "softmax":
        return softmax_score(logits)
    if kind == "energy":
        return energy_score(logits)
    raise ConfigError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")


def lower_quantile(values, q: float) -> float:
    return float(np.quantile(np.asarray(values, dtype=np.float64), q, method="lower"))


@dataclass(frozen=True)
class Threshold:
    delta: float
    score_kind: str = "energy"
    target_tpr: float = 0.95


def calibrate_threshold(id_val_scores, target_tpr: float = 0.95, score_kind: str = "energy") -> Threshold:
    """Lower ``1 - target_tpr`` quantile of the ID validation scores."""
    scores = np.asarray(id_val_scores, dtype=np.float64).ravel()
    if scores.size < MIN_CALIBRATION_SAMPLES:
        raise CalibrationError(
            f"need at least {MIN_CALIBRATION_SAMPLES} ID validation scores, got {scores.size}"
        )
    if not 0 < target_tpr <= 1:
        raise CalibrationError(f"target_tpr must lie in (0, 1], got {target_tpr}")
    return Threshold(lower_quantile(scores, 1.0 - target_tpr), score_kind, target_tpr)


def predict_open_set(logits, threshold: Threshold) -> np.ndarray:
    """Argmax class, or ``K`` (the reject label) when the score falls below delta."""
    z = _logits_array(logits)
    k = z.shape[1]
    s = score(z, threshold.score_kind)
    labels = np.argmax(z, axis=1)
    return np.where(s < threshold.delta, k, labels)
