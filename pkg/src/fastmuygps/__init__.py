"""Nearest-neighbor Gaussian process regression with precomputed fast prediction."""

from .errors import DomainError, ModelFormatError, NumericalError, VersionMismatchError
from .exact_gp import TrainingSet, log_likelihood, posterior_mean
from .fast_predict import (
    NeighborTable,
    PrecomputedModel,
    fast_predict_batch,
    fast_predict_one,
    load_model,
    precompute,
    save_model,
)
from .kernel import KernelKind, KernelParams, cov_matrix, matern_value, rbf_value
from .muygps import (
    BatchSpec,
    FittedParams,
    TrainConfig,
    local_prediction,
    loocv_loss,
    muygps_predict,
    sample_batch,
    train,
)
from .nn_index import GraphParams, IndexMode, NeighborIndex, NeighborList

__version__ = "0.1.0"
