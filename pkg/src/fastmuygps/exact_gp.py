"""Dense Gaussian-process posterior mean and log-likelihood.

This is the O(n^3) reference that the localized predictors are checked
against; it refuses training sets larger than ``DENSE_LIMIT``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import cho_solve, cholesky_jitter
from .errors import DomainError
from .kernel import KernelKind, KernelParams, cov_matrix

DENSE_LIMIT = 5_000


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Features ``X`` (n x d), detrended responses ``Y`` and the removed mean."""

    X: np.ndarray
    Y: np.ndarray
    mean_offset: float = 0.0

    def __post_init__(self):
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(self.X, dtype=np.float64)))
        Y = np.ascontiguousarray(np.asarray(self.Y, dtype=np.float64).reshape(-1))
        if X.shape[0] == 0:
            raise DomainError("training set must be non-empty")
        if X.shape[0] != Y.shape[0]:
            raise DomainError(f"{X.shape[0]} feature rows but {Y.shape[0]} responses")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DomainError("training data must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "mean_offset", float(self.mean_offset))

    @classmethod
    def detrended(cls, X, raw_Y) -> "TrainingSet":
        raw_Y = np.asarray(raw_Y, dtype=np.float64)
        mean = float(np.mean(raw_Y))
        return cls(X, raw_Y - mean, mean)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def with_responses(self, Y, mean_offset=None) -> "TrainingSet":
        return TrainingSet(self.X, Y, self.mean_offset if mean_offset is None else mean_offset)


def _factor(train: TrainingSet, kind, p: KernelParams, dense_limit: int):
    if train.n > dense_limit:
        raise DomainError(f"n={train.n} exceeds the dense limit {dense_limit}")
    K = cov_matrix(train.X, train.X, kind, p)
    L, _ = cholesky_jitter(K, label="K(X, X)")
    return L


def posterior_mean(train: TrainingSet, Z, kind: KernelKind, p: KernelParams,
                   dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """``K(Z, X) K(X, X)^{-1} Y + mean_offset``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != train.dim:
        raise DomainError(f"test dimension {Z.shape[1]} != training dimension {train.dim}")
    L = _factor(train, kind, p, dense_limit)
    alpha = cho_solve(L, train.Y)
    return cov_matrix(Z, train.X, kind, p) @ alpha + train.mean_offset


def log_likelihood(train: TrainingSet, kind: KernelKind, p: KernelParams,
                   dense_limit: int = DENSE_LIMIT) -> float:
    """Gaussian log-likelihood of the detrended responses under ``K(X, X)``."""
    L = _factor(train, kind, p, dense_limit)
    alpha = cho_solve(L, train.Y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * train.n * math.log(2.0 * math.pi) - 0.5 * logdet - 0.5 * float(train.Y @ alpha)
