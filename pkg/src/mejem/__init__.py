"""Margin-enhanced joint energy models for out-of-distribution detection."""
from .autodiff import Tensor, backward
from .config import ExperimentConfig
from .losses import Flags, LossWeights, MarginConfig, cross_entropy, generative_loss, margin_loss, mejem_objective
from .metrics import auroc, closed_set_precision, fpr_at_tpr, histogram
from .model import ModelParams, class_posteriors, forward, init_mlp, marginal_energy
from .runner import ablate, evaluate, train
from .sam import OptimizerState, SamConfig, lr_at, sam_perturbation, sam_step
from .scoring import Threshold, calibrate_threshold, energy_score, predict_open_set, softmax_score
from .sgld import ReplayBuffer, SgldConfig, sample_negatives, sgld_step

__version__ = "0.1.0"
