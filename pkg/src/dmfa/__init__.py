"""Conditional density estimation for missing values with low-rank Gaussians.

The package pairs a classical mixture-of-factor-analyzers baseline (exact
closed-form conditionals) with a neural network that emits a per-sample
factor Gaussian, trained on the negative log-likelihood restricted to the
missing coordinates.
"""

__version__ = "0.1.0"

from .conditional import (
    conditional_gaussian,
    conditional_mixture,
    mixture_imputation,
)
from .errors import (
    ConfigError,
    DivergedError,
    DmfaError,
    EmptyMaskError,
    EmptyObservedError,
    FormatError,
    InvalidValueError,
    NumericalError,
    ShapeError,
    WrongKindError,
)
from .evaluate import Metrics, evaluate_dmfa, evaluate_mfa
from .lowrank_gauss import (
    FactorGaussian,
    log_density,
    log_det_sigma,
    restrict,
    sample,
)
from .masking import (
    Mask,
    MaskedSample,
    SplitIndex,
    apply_mask,
    random_patch_mask,
    scatter,
    split,
)
from .mfa import MfaModel, init_mfa, mixture_log_density, train_mfa
from .network import (
    DmfaNetwork,
    forward,
    loss_gradients,
    restricted_nll,
)
from .tensorio import Dataset, load_container, load_idx, load_image_dir, save_container
from .trainer import TrainConfig, checkpoint, resume, train_dmfa

__all__ = [
    "ConfigError",
    "Dataset",
    "DivergedError",
    "DmfaError",
    "DmfaNetwork",
    "EmptyMaskError",
    "EmptyObservedError",
    "FactorGaussian",
    "FormatError",
    "InvalidValueError",
    "Mask",
    "MaskedSample",
    "Metrics",
    "MfaModel",
    "NumericalError",
    "ShapeError",
    "SplitIndex",
    "TrainConfig",
    "WrongKindError",
    "apply_mask",
    "checkpoint",
    "conditional_gaussian",
    "conditional_mixture",
    "evaluate_dmfa",
    "evaluate_mfa",
    "forward",
    "init_mfa",
    "load_container",
    "load_idx",
    "load_image_dir",
    "log_density",
    "log_det_sigma",
    "loss_gradients",
    "mixture_imputation",
    "mixture_log_density",
    "random_patch_mask",
    "restrict",
    "restricted_nll",
    "resume",
    "sample",
    "save_container",
    "scatter",
    "split",
    "train_dmfa",
    "train_mfa",
]
