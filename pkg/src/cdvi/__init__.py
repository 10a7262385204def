"""Censor-dependent variational inference for latent-variable survival models."""

from .core_math import DiagonalGaussian, Family
from .data import SurvivalDataset, load_csv, split, standardize
from .model import (
    CdCvaeModel,
    EstimatorConfig,
    TrainConfig,
    elbo_c,
    elbo_c_dvi,
    elbo_c_is,
    elbo_vanilla,
    predict_survival,
    train,
)
from .simulator import SimConfig, gibbs_simulate, preset, true_posterior

__all__ = [
    "CdCvaeModel", "DiagonalGaussian", "EstimatorConfig", "Family", "SimConfig",
    "SurvivalDataset", "TrainConfig", "elbo_c", "elbo_c_dvi", "elbo_c_is", "elbo_vanilla",
    "gibbs_simulate", "load_csv", "predict_survival", "preset", "split", "standardize",
    "train", "true_posterior",
]
__version__ = "0.1.0"
