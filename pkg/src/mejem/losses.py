"""Training objectives: cross-entropy, contrastive-divergence surrogate for the
marginal log-density, the hybrid energy margin loss and their weighted sum.

Everything is in minimisation form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, DimensionError
from .model import ModelParams, forward, joint_energy, marginal_energy


@dataclass
class LossWeights:
    generative: float = 1.0
    margin: float = 0.05

    def validate(self) -> None:
        if self.generative < 0 or self.margin < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class MarginConfig:
    m_in: float = -10.0
    m_out: float = -10.0
    # energy used for ID rows: "marginal" E(x) or "joint" E(x, y)
    id_energy: str = "marginal"

    def validate(self) -> None:
        if not (np.isfinite(self.m_in) and np.isfinite(self.m_out)):
            raise ConfigError("margins must be finite")
        if self.id_energy not in ("marginal", "joint"):
            raise ConfigError(f"id_energy must be 'marginal' or 'joint', got {self.id_energy!r}")


@dataclass
class Flags:
    generative: bool = True
    margin: bool = True
    sam: bool = True
    aux_data: bool = True

    def validate(self) -> None:
        if self.margin and not self.aux_data:
            raise ConfigError("margin loss needs auxiliary outlier data (set flags.aux_data)")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        row = int(bad[0])
        raise DataError(f"label {labels[row]} at row {row} outside [0, {k})")
    return ad.mean(ad.sub(ad.logsumexp(logits), ad.gather(logits, labels)))


def contrastive_divergence(e_pos: Tensor, e_neg: Tensor) -> Tensor:
    return ad.sub(ad.mean(e_pos), ad.mean(e_neg))


def generative_loss(params: ModelParams, x_pos, x_neg) -> Tensor:
    """``mean E(x_pos) - mean E(x_neg)``; negatives are treated as constants."""
    x_pos = np.asarray(x_pos.data if isinstance(x_pos, Tensor) else x_pos, dtype=np.float64)
    x_neg = np.asarray(x_neg.data if isinstance(x_neg, Tensor) else x_neg, dtype=np.float64)
    if x_pos.ndim != 2 or x_neg.ndim != 2 or x_pos.shape[1] != x_neg.shape[1]:
        raise DimensionError(f"generative_loss shape mismatch: {x_pos.shape} vs {x_neg.shape}")
    return contrastive_divergence(params.energy(x_pos), params.energy(x_neg))


def margin_loss(energies: Tensor, is_ood, cfg: MarginConfig) -> Tensor:
    """Summed hybrid hinge: squared above ``m_in`` for ID rows, linear below ``m_out`` for OOD rows."""
    is_ood = np.asarray(is_ood, dtype=bool)
    if is_ood.shape != energies.shape:
        raise DimensionError(f"is_ood shape {is_ood.shape} != energies {energies.shape}")
    id_mask = Tensor((~is_ood).astype(np.float64))
    ood_mask = Tensor(is_ood.astype(np.float64))
    id_part = ad.mul(ad.square(ad.hinge(energies, cfg.m_in)), id_mask)
    ood_part = ad.mul(ad.hinge(ad.neg(energies), -cfg.m_out), ood_mask)
    return ad.add(ad.sum(id_part), ad.sum(ood_part))


def mejem_objective(params: ModelParams, x_id, y_id, x_aux=None, x_neg=None,
                    weights: LossWeights | None = None,
                    margin_cfg: MarginConfig | None = None,
                    flags: Flags | None = None) -> tuple[Tensor, dict]:
    """``CE + w_gen * generative + w_margin * margin / n_total``.

    A term is active only when its flag is set and its weight is positive,
    so a zero weight and a cleared flag give identical computations.
    Returns the scalar loss and a dict of per-term floats for logging.
    """
    weights = weights or LossWeights()
    margin_cfg = margin_cfg or MarginConfig()
    flags = flags or Flags()
    use_gen = flags.generative and weights.generative > 0
    use_margin = flags.margin and weights.margin > 0

    x_id = np.asarray(x_id, dtype=np.float64)
    n_id = x_id.shape[0]
    if use_margin:
        if x_aux is None or len(x_aux) == 0:
            raise ConfigError("margin loss requires a non-empty auxiliary outlier batch")
        x_all = np.concatenate([x_id, np.asarray(x_aux, dtype=np.float64)], axis=0)
    else:
        x_all = x_id
    logits_all = forward(params, x_all)
    logits = ad.take_rows(logits_all, np.arange(n_id)) if use_margin else logits_all
    ce = cross_entropy(logits, y_id)
    total = ce
    diag = {"ce": ce.item(), "gen": 0.0, "margin": 0.0}

    e_all = marginal_energy(logits_all)
    e_id = ad.take_rows(e_all, np.arange(n_id)) if use_margin else e_all
    diag["mean_id_energy"] = float(np.mean(e_id.data))

    if use_gen:
        if x_neg is None:
            raise ConfigError("generative loss requires SGLD negatives")
        e_neg = params.energy(np.asarray(x_neg, dtype=np.float64))
        gen = contrastive_divergence(e_id, e_neg)
        total = ad.add(total, ad.scale(gen, weights.generative))
        diag["gen"] = gen.item()
        diag["mean_neg_energy"] = float(np.mean(e_neg.data))

    if use_margin:
        n_total = x_all.shape[0]
        is_ood = np.arange(n_total) >= n_id
        if margin_cfg.id_energy == "joint":
            e_id_margin = joint_energy(logits, y_id)
            e_aux = ad.take_rows(e_all, np.arange(n_id, n_total))
            energies = ad.concat([e_id_margin, e_aux])
        else:
            energies = e_all
        m = ad.scale(margin_loss(energies, is_ood, margin_cfg), 1.0 / n_total)
        total = ad.add(total, ad.scale(m, weights.margin))
        diag["margin"] = m.item()
        diag["mean_ood_energy"] = float(np.mean(e_all.data[n_id:]))

    diag["total"] = total.item()
    return total, diag
