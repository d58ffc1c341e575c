"""Neighbor-localized leave-one-out training and the MuyGPs predictor.

Each training point in a sampled batch is predicted from its ``k`` nearest
*other* training points; hyperparameters minimize the mean squared error of
those predictions. Neighbor sets depend only on the features, so they are
found once and the optimizer only re-evaluates kernels and local solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import nn_index
from ._linalg import solve_spd_batch
from .errors import DomainError, NumericalError
from .exact_gp import TrainingSet
from .kernel import (
    KernelKind,
    KernelParams,
    kernel_from_distances,
    neighborhood_distances,
    neighborhood_kernel,
)

TRAINABLE = ("rho", "nu", "tau")


@dataclass(frozen=True)
class BatchSpec:
    b: int
    seed: int
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size != self.b or np.unique(idx).size != idx.size:
            raise DomainError("batch indices must be b unique training indices")
        object.__setattr__(self, "indices", idx)


def sample_batch(n: int, b: int | None = None, seed: int = 0) -> BatchSpec:
    """Uniform sample without replacement; ``b`` defaults to ``min(500, n)``."""
    b = min(500, n) if b is None else b
    if not 1 <= b <= n:
        raise DomainError(f"batch size {b} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=b, replace=False))
    return BatchSpec(b, seed, idx)


@dataclass(frozen=True)
class TrainConfig:
    """Which hyperparameters to fit, their boxes, and the optimizer budget.

    ``initial`` supplies every fixed value and the starting point of the
    free ones. ``sigma`` never changes the posterior mean and is not trainable.
    """

    k: int = 50
    kind: KernelKind = KernelKind.MATERN
    initial: KernelParams = field(default_factory=KernelParams)
    free_params: tuple = ("rho",)
    bounds: dict = field(default_factory=lambda: {
        "rho": (1e-2, 1e3), "nu": (0.1, 5.0), "tau": (0.0, 1.0)})
    max_evals: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind.parse(self.kind))
        object.__setattr__(self, "free_params", tuple(self.free_params))
        if self.k < 2:
            raise DomainError(f"k must be at least 2, got {self.k}")
        for name in self.free_params:
            if name not in TRAINABLE:
                raise DomainError(f"{name!r} is not trainable; choose from {TRAINABLE}")
            lo, hi = self.bounds[name]
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DomainError(f"bad bounds for {name}: {(lo, hi)}")


@dataclass(frozen=True)
class FittedParams:
    theta_hat: KernelParams
    kind: KernelKind
    final_loss: float
    evaluations: int
    initial_loss: float = float("nan")
    improved: bool = True


@dataclass(frozen=True, eq=False)
class LocalProblems:
    """Gathered neighborhoods for a set of targets.

    ``pair_dists`` (m, k, k) are distances among each target's neighbors and
    ``cross_dists`` (m, k) from each target to its neighbors.
    """

    targets: np.ndarray
    neighbors: np.ndarray
    pair_dists: np.ndarray
    cross_dists: np.ndarray
    responses: np.ndarray
    truth: np.ndarray | None = None


def gather(X: np.ndarray, Y: np.ndarray, Z: np.ndarray, neighbors: np.ndarray,
           targets=None, truth=None) -> LocalProblems:
    diff = Z[:, None, :] - X[neighbors]
    cross = np.sqrt(np.einsum("mkd,mkd->mk", diff, diff))
    targets = np.arange(len(Z)) if targets is None else np.asarray(targets)
    return LocalProblems(targets, neighbors, neighborhood_distances(X, neighbors), cross,
                         Y[neighbors], truth)


def _solve_local(lp: LocalProblems, kind, p: KernelParams, sl=slice(None)):
    K = kernel_from_distances(lp.pair_dists[sl], kind, p)
    kc = kernel_from_distances(lp.cross_dists[sl], kind, p)
    w = solve_spd_batch(K, lp.responses[sl], rows=lp.targets[sl])
    return np.einsum("mk,mk->m", kc, w)


def predict_local(lp: LocalProblems, kind, p: KernelParams, chunk: int = 2048) -> np.ndarray:
    out = np.empty(len(lp.targets))
    for s in range(0, len(out), chunk):
        out[s : s + chunk] = _solve_local(lp, kind, p, slice(s, s + chunk))
    return out


def training_neighbors(index, batch_indices, k: int) -> np.ndarray:
    """k nearest neighbors of each batch point, excluding the point itself."""
    batch_indices = np.asarray(batch_indices, dtype=np.int64)
    idx, _ = nn_index.query_knn_batch(index, index.points[batch_indices], k,
                                      exclude=batch_indices)
    return idx


def local_prediction(train: TrainingSet, i: int, neighbors, kind, p: KernelParams) -> float:
    """Prediction of ``Y[i]`` conditioned only on ``neighbors`` (excluding ``i``)."""
    nb = np.asarray(getattr(neighbors, "indices", neighbors), dtype=np.int64)
    if i in nb:
        raise DomainError(f"training point {i} cannot be its own neighbor")
    if nb.size < 1:
        raise DomainError("need at least one neighbor")
    lp = gather(train.X, train.Y, train.X[[i]], nb[None, :], targets=[i])
    return float(_solve_local(lp, KernelKind.parse(kind), p)[0])


def loocv_loss(train: TrainingSet, batch: BatchSpec, neighbor_lists, kind,
               p: KernelParams) -> float:
    """Mean squared leave-one-out error over the batch.

    The mean is a numpy pairwise sum over batch order, so it is bit-stable.
    """
    nbrs = np.asarray(neighbor_lists, dtype=np.int64)
    if np.any(nbrs == batch.indices[:, None]):
        raise DomainError("neighbor lists must exclude their own batch point")
    lp = gather(train.X, train.Y, train.X[batch.indices], nbrs, targets=batch.indices,
                truth=train.Y[batch.indices])
    return _loss(lp, KernelKind.parse(kind), p)


def _loss(lp: LocalProblems, kind, p: KernelParams) -> float:
    resid = lp.truth - predict_local(lp, kind, p)
    return float(np.mean(resid * resid))


class _Objective:
    """Maps the optimizer's unit box onto the free hyperparameters."""

    def __init__(self, config: TrainConfig, lp: LocalProblems):
        self.config = config
        self.lp = lp
        self.names = config.free_params
        self.log = [config.bounds[nm][0] > 0 for nm in self.names]
        self.evals = 0
        self.best = (math.inf, config.initial)

    def _edges(self, j):
        lo, hi = self.config.bounds[self.names[j]]
        return (math.log(lo), math.log(hi)) if self.log[j] else (lo, hi)

    def to_unit(self, p: KernelParams) -> np.ndarray:
        out = []
        for j, name in enumerate(self.names):
            lo, hi = self._edges(j)
            v = getattr(p, name)
            v = math.log(v) if self.log[j] else v
            out.append(min(max((v - lo) / (hi - lo), 0.0), 1.0))
        return np.array(out)

    def to_params(self, u) -> KernelParams:
        changes = {}
        for j, name in enumerate(self.names):
            lo, hi = self._edges(j)
            v = lo + float(np.clip(u[j], 0.0, 1.0)) * (hi - lo)
            changes[name] = math.exp(v) if self.log[j] else v
        return self.config.initial.replace(**changes)

    def __call__(self, u) -> float:
        p = self.to_params(u)
        self.evals += 1
        try:
            q = _loss(self.lp, self.config.kind, p)
        except NumericalError:
            q = math.inf
        if q < self.best[0]:
            self.best = (q, p)
        return q


def train(train_set: TrainingSet, config: TrainConfig, batch: BatchSpec,
          index) -> FittedParams:
    """Fit the free hyperparameters by bounded Nelder-Mead on the LOOCV loss.

    Never returns parameters worse than the initial guess; ``improved`` is
    False when the optimizer found nothing better.
    """
    if index.n != train_set.n:
        raise DomainError("index was not built on this training set")
    nbrs = training_neighbors(index, batch.indices, config.k)
    lp = gather(train_set.X, train_set.Y, train_set.X[batch.indices], nbrs,
                targets=batch.indices, truth=train_set.Y[batch.indices])

    p0 = config.initial
    loss0 = _loss(lp, config.kind, p0)
    if not config.free_params:
        return FittedParams(p0, config.kind, loss0, 1, loss0, False)

    obj = _Objective(config, lp)
    u0 = obj.to_unit(p0)
    p0 = obj.to_params(u0)  # initial guess clipped into the box
    loss0 = _loss(lp, config.kind, p0)
    optimize.minimize(
        obj, u0, method="Nelder-Mead",
        bounds=[(0.0, 1.0)] * len(u0),
        options=dict(maxfev=config.max_evals, fatol=config.tol, xatol=1e-6,
                     initial_simplex=_initial_simplex(u0)),
    )
    best_loss, best_p = obj.best
    if best_loss < loss0:
        return FittedParams(best_p, config.kind, best_loss, obj.evals + 1, loss0, True)
    return FittedParams(p0, config.kind, loss0, obj.evals + 1, loss0, False)


def _initial_simplex(u0: np.ndarray) -> np.ndarray:
    """Simplex around ``u0`` with edges of 0.25 pointing into the unit box."""
    pts = [u0]
    for j in range(len(u0)):
        v = u0.copy()
        v[j] = v[j] + 0.25 if v[j] <= 0.5 else v[j] - 0.25
        pts.append(v)
    return np.array(pts)


def muygps_predict(train_set: TrainingSet, Z, fitted: FittedParams, index,
                   k: int) -> np.ndarray:
    """Predict each row of ``Z`` from its own k nearest training points."""
    theta, kind = fitted.theta_hat, fitted.kind
    Z = np.ascontiguousarray(np.atleast_2d(np.asarray(Z, dtype=np.float64)))
    if Z.shape[1] != train_set.dim:
        raise DomainError(f"test dimension {Z.shape[1]} != training dimension {train_set.dim}")
    nbrs, _ = nn_index.query_knn_batch(index, Z, k)
    X = train_set.X
    out = np.empty(Z.shape[0])
    chunk = max(1, 4_000_000 // (k * k))
    for s in range(0, Z.shape[0], chunk):
        nb = nbrs[s : s + chunk]
        diff = Z[s : s + chunk, None, :] - X[nb]
        kc = kernel_from_distances(np.sqrt(np.einsum("mkd,mkd->mk", diff, diff)), kind, theta)
        w = solve_spd_batch(neighborhood_kernel(X, nb, kind, theta), train_set.Y[nb],
                            rows=np.arange(s, s + len(nb)))
        out[s : s + chunk] = np.einsum("mk,mk->m", kc, w)
    return out + train_set.mean_offset
