"""Nearest-neighbor indexes over training features.

Two modes share one interface: ``EXACT`` is a linear scan (ground truth) and
``GRAPH`` is an approximate hierarchical small-world graph with roughly
logarithmic query cost. Equal distances are always resolved by ascending
training index.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _graph
from .errors import DomainError


class IndexMode(enum.IntEnum):
    EXACT = 0
    GRAPH = 1

    @classmethod
    def parse(cls, value) -> "IndexMode":
        if isinstance(value, cls):
            return value
        aliases = {"exact": cls.EXACT, "graph": cls.GRAPH, "approx": cls.GRAPH,
                   "approxgraph": cls.GRAPH, "hnsw": cls.GRAPH}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise DomainError(f"unknown index mode {value!r}") from None


@dataclass(frozen=True)
class GraphParams:
    M: int = 16
    ef_construction: int = 100
    ef_search: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.M < 2 or self.ef_construction < 1 or self.ef_search < 1:
            raise DomainError(f"invalid graph parameters {self}")

    def query_beam(self, k: int) -> int:
        return max(self.ef_search, 2 * k)


@dataclass(frozen=True, eq=False)
class GraphArrays:
    """Graph state. Node ids are positions in ``Xg = X[order]``."""

    Xg: np.ndarray
    order: np.ndarray
    inv: np.ndarray
    levels: np.ndarray
    links0: np.ndarray
    counts0: np.ndarray
    slot_base: np.ndarray
    upper: np.ndarray
    upper_counts: np.ndarray
    entry: int
    max_level: int


@dataclass(frozen=True)
class NeighborList:
    indices: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    points: np.ndarray
    mode: IndexMode
    params: GraphParams = field(default_factory=GraphParams)
    graph: "GraphArrays | None" = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def build(points, mode="exact", params: GraphParams | None = None) -> NeighborIndex:
    """Build an immutable index over ``points`` (n x d)."""
    mode = IndexMode.parse(mode)
    params = params or GraphParams()
    X = np.array(points, dtype=np.float64, order="C", copy=True)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DomainError("cannot build an index over an empty point set")
    if not np.all(np.isfinite(X)):
        raise DomainError("point coordinates must be finite")
    X.setflags(write=False)
    if mode == IndexMode.EXACT:
        return NeighborIndex(X, mode, params)

    # kd-tree leaf order keeps graph neighbors close in memory
    order = np.ascontiguousarray(cKDTree(X).indices, dtype=np.int64)
    rng = np.random.default_rng(params.seed)
    mult = 1.0 / math.log(params.M)
    u = 1.0 - rng.random(X.shape[0])  # in (0, 1]
    levels = np.floor(-np.log(u) * mult).astype(np.int64)
    return _assemble_graph(X, params, order, levels)


def _assemble_graph(X, params, order, levels, arrays=None) -> NeighborIndex:
    X.setflags(write=False)
    Xg = np.ascontiguousarray(X[order])
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    if arrays is None:
        links0, counts0, slot_base, upper, upper_counts, entry, max_level = (
            _graph.build_graph(Xg, levels, params.M, params.ef_construction)
        )
    else:
        links0, counts0, upper, upper_counts, entry, max_level = arrays
        slot_base = np.concatenate(([0], np.cumsum(levels)[:-1])).astype(np.int64)
    graph = GraphArrays(Xg, order, inv, levels, links0, counts0, slot_base,
                        upper, upper_counts, int(entry), int(max_level))
    for arr in vars(graph).values():
        if isinstance(arr, np.ndarray):
            arr.setflags(write=False)
    return NeighborIndex(X, IndexMode.GRAPH, params, graph)


def _graph_args(index: NeighborIndex):
    g = index.graph
    return (g.entry, g.max_level, g.links0, g.counts0, g.slot_base, g.upper,
            g.upper_counts)


def _as_queries(index: NeighborIndex, Q) -> np.ndarray:
    Q = np.ascontiguousarray(np.atleast_2d(np.asarray(Q, dtype=np.float64)))
    if Q.shape[1] != index.dim:
        raise DomainError(f"query dimension {Q.shape[1]} != index dimension {index.dim}")
    return Q


def query_knn_batch(index: NeighborIndex, Q, k: int, exclude=None,
                    return_evals: bool = False):
    """k nearest training indices for each row of ``Q``.

    ``exclude`` optionally gives, per query, one training index to omit
    (``-1`` for none); exclusion is by index identity.
    Returns ``(indices, distances)`` arrays of shape (m, k).
    """
    Q = _as_queries(index, Q)
    m = Q.shape[0]
    if exclude is None:
        exclude = np.full(m, -1, dtype=np.int64)
    else:
        exclude = np.asarray(exclude, dtype=np.int64).reshape(m)
    limit = index.n - (1 if np.any(exclude >= 0) else 0)
    if not 1 <= k <= limit:
        raise DomainError(f"k={k} out of range [1, {limit}]")
    if index.mode == IndexMode.EXACT:
        idx, dist, evals = _graph.scan_knn(index.points, Q, k, exclude)
    else:
        g = index.graph
        idx, dist, evals = _graph.graph_knn(g.Xg, g.order, g.inv, Q, k,
                                            index.params.query_beam(k), exclude,
                                            *_graph_args(index))
        if np.any(idx < 0):
            raise DomainError(f"graph search returned fewer than k={k} neighbors")
    if return_evals:
        return idx, dist, evals
    return idx, dist


def query_knn(index: NeighborIndex, q, k: int, exclude_self=False) -> NeighborList:
    """k nearest neighbors of a single point.

    ``exclude_self`` may be ``True`` (omit any stored point identical to
    ``q``; only the lowest such index) or an explicit training index.
    """
    q = np.asarray(q, dtype=np.float64).reshape(1, -1)
    if exclude_self is True:
        hit = nearest_training_point(index, q[0])
        exclude = hit if np.array_equal(index.points[hit], q[0]) else -1
    elif exclude_self is False or exclude_self is None:
        exclude = -1
    else:
        exclude = int(exclude_self)
    if exclude >= 0 and not 1 <= k <= index.n - 1:
        raise DomainError(f"k={k} out of range [1, {index.n - 1}]")
    idx, dist = query_knn_batch(index, q, k, exclude=[exclude])
    return NeighborList(idx[0], dist[0])


def nearest_training_point(index: NeighborIndex, q) -> int:
    q = np.ascontiguousarray(np.asarray(q, dtype=np.float64).reshape(-1))
    if q.shape[0] != index.dim:
        raise DomainError(f"query dimension {q.shape[0]} != index dimension {index.dim}")
    if index.mode == IndexMode.EXACT:
        return int(_graph.scan_nearest(index.points, q))
    g = index.graph
    return int(_graph.graph_nearest(g.Xg, g.order, q, index.params.ef_search,
                                    *_graph_args(index)))


def nearest_training_points(index: NeighborIndex, Q) -> np.ndarray:
    Q = _as_queries(index, Q)
    if index.mode == IndexMode.EXACT:
        return _graph.scan_nearest_batch(index.points, Q)
    g = index.graph
    return _graph.graph_nearest_batch(g.Xg, g.order, Q, index.params.ef_search,
                                      *_graph_args(index))


def recall_at_k(approx: np.ndarray, exact: np.ndarray) -> float:
    """Mean fraction of true neighbors recovered, row by row."""
    hits = sum(len(np.intersect1d(a, e)) for a, e in zip(approx, exact))
    return hits / exact.size
