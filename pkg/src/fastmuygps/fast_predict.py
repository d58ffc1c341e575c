"""Precomputed-coefficient posterior mean prediction.

Offline, every training point ``i`` gets a neighborhood ``S_i = [i, N_i]``
(itself, then its ``k - 1`` nearest neighbors) and a coefficient row
``C_i = K(X_S, X_S)^{-1} Y(X_S)``. Online, a query ``z`` is routed to its
nearest training point ``j`` and predicted as ``K(z, X_{S_j}) . C_j``:
one index lookup, ``k`` kernel evaluations and one dot product.
"""

from __future__ import annotations

import io
import math
import struct
import zlib
from dataclasses import dataclass, replace

import numba
import numpy as np

from . import nn_index
from ._linalg import solve_spd_batch
from .errors import DomainError, ModelFormatError, VersionMismatchError
from .exact_gp import TrainingSet
from .kernel import (
    GENERIC_CODE,
    KernelKind,
    KernelParams,
    _corr,
    kernel_code,
    kernel_from_distances,
    neighborhood_kernel,
)
from .muygps import FittedParams
from .nn_index import GraphParams, IndexMode, NeighborIndex

MAGIC = b"FMGP"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """``S`` (n x k): row ``i`` is ``i`` followed by its k-1 nearest neighbors."""

    S: np.ndarray

    def __post_init__(self):
        S = np.ascontiguousarray(self.S, dtype=np.int64)
        n = S.shape[0]
        if np.any(S[:, 0] != np.arange(n)):
            raise DomainError("each neighborhood must start with its own index")
        if np.any((S < 0) | (S >= n)):
            raise DomainError("neighborhood entries must be valid training indices")
        srt = np.sort(S, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            raise DomainError("neighborhood entries must be unique")
        S.setflags(write=False)
        object.__setattr__(self, "S", S)

    @property
    def k(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True, eq=False)
class PrecomputedModel:
    C: np.ndarray
    table: NeighborTable
    theta_hat: KernelParams
    kind: KernelKind
    X: np.ndarray
    mean_offset: float
    index: NeighborIndex

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.table.k

    def with_index(self, index: NeighborIndex) -> "PrecomputedModel":
        """Same coefficients, different lookup structure (e.g. for baselines)."""
        if index.n != self.n or index.dim != self.dim:
            raise DomainError("index does not match the model's training set")
        return replace(self, index=index)


# ------------------------------------------------------------------ offline


def neighbor_table(index: NeighborIndex, k: int) -> NeighborTable:
    n = index.n
    if not 1 <= k <= n:
        raise DomainError(f"k={k} out of range [1, {n}]")
    S = np.empty((n, k), dtype=np.int64)
    S[:, 0] = np.arange(n)
    if k > 1:
        step = 20_000
        for s in range(0, n, step):
            rows = np.arange(s, min(s + step, n))
            S[rows, 1:], _ = nn_index.query_knn_batch(index, index.points[rows], k - 1,
                                                      exclude=rows)
    return NeighborTable(S)


def precompute(train: TrainingSet, fitted: FittedParams, index: NeighborIndex,
               k: int) -> PrecomputedModel:
    """Solve one k x k system per training point for the coefficient table."""
    if index.n != train.n or not np.array_equal(index.points, train.X):
        raise DomainError("index was not built on this training set")
    theta, kind = fitted.theta_hat, KernelKind.parse(fitted.kind)
    table = neighbor_table(index, k)
    S = table.S
    C = np.empty(S.shape, dtype=np.float64)
    chunk = max(1, 8_000_000 // (k * k))
    for s in range(0, train.n, chunk):
        rows = slice(s, min(s + chunk, train.n))
        K = neighborhood_kernel(train.X, S[rows], kind, theta)
        C[rows] = solve_spd_batch(K, train.Y[S[rows]], rows=np.arange(s, rows.stop))
    C.setflags(write=False)
    return PrecomputedModel(C, table, theta, kind, train.X, train.mean_offset, index)


def residuals(model: PrecomputedModel, Y: np.ndarray, rows=None) -> np.ndarray:
    """Relative residual ``|K C_i - Y_S| / |Y_S|`` of each coefficient row."""
    rows = np.arange(model.n) if rows is None else np.asarray(rows)
    out = np.empty(len(rows))
    chunk = max(1, 8_000_000 // (model.k ** 2))
    for s in range(0, len(rows), chunk):
        r = rows[s : s + chunk]
        S = model.table.S[r]
        K = neighborhood_kernel(model.X, S, model.kind, model.theta_hat)
        ys = Y[S]
        res = np.einsum("mab,mb->ma", K, model.C[r]) - ys
        out[s : s + chunk] = np.linalg.norm(res, axis=1) / np.linalg.norm(ys, axis=1)
    return out


# ------------------------------------------------------------------ online

@numba.njit(cache=True)
def _dot_rows(X, S, C, Z, js, code, sigma2, rho, tau2):
    out = np.empty(Z.shape[0])
    k = S.shape[1]
    for r in range(Z.shape[0]):
        j = js[r]
        acc = 0.0
        for a in range(k):
            s = S[j, a]
            d2 = 0.0
            for t in range(Z.shape[1]):
                diff = Z[r, t] - X[s, t]
                d2 += diff * diff
            kv = _corr(d2, code, rho)
            if d2 == 0.0:
                kv += tau2
            acc += sigma2 * kv * C[j, a]
        out[r] = acc
    return out


def _check_queries(model: PrecomputedModel, Z) -> np.ndarray:
    Z = np.ascontiguousarray(np.atleast_2d(np.asarray(Z, dtype=np.float64)))
    if Z.shape[1] != model.dim:
        raise DomainError(f"query dimension {Z.shape[1]} != model dimension {model.dim}")
    return Z


def _predict_from_routes(model: PrecomputedModel, Z: np.ndarray, js: np.ndarray):
    p = model.theta_hat
    code = kernel_code(model.kind, p)
    if code != GENERIC_CODE:
        vals = _dot_rows(model.X, model.table.S, model.C, Z, js, code,
                         p.sigma**2, p.rho, p.tau**2)
    else:
        XS = model.X[model.table.S[js]]
        diff = Z[:, None, :] - XS
        kc = kernel_from_distances(np.sqrt(np.einsum("mkd,mkd->mk", diff, diff)),
                                   model.kind, p)
        vals = np.einsum("mk,mk->m", kc, model.C[js])
    return vals + model.mean_offset


def fast_predict_one(model: PrecomputedModel, z) -> float:
    Z = _check_queries(model, z)
    if Z.shape[0] != 1:
        raise DomainError("fast_predict_one takes a single point")
    j = nn_index.nearest_training_point(model.index, Z[0])
    return float(_predict_from_routes(model, Z, np.array([j], dtype=np.int64))[0])


def fast_predict_batch(model: PrecomputedModel, Z) -> np.ndarray:
    Z = _check_queries(model, Z)
    js = nn_index.nearest_training_points(model.index, Z)
    return _predict_from_routes(model, Z, js)


# ------------------------------------------------------------------ file format
#
# little-endian, fixed width, single pass:
#   "FMGP" | u32 version | u64 n, d, k | f64 sigma, rho, nu, tau | u32 kind
#   | f64 X[n*d] | i64 S[n*k] | f64 C[n*k] | f64 mean_offset | index section
#   | u32 crc32 of everything before it
# index section: u32 mode; for GRAPH additionally
#   u64 M, ef_construction, ef_search, seed | i64 entry, max_level
#   | i64 order[n] | i64 levels[n] | i32 links0[n*2M] | i32 counts0[n]
#   | u64 n_upper | i32 upper[n_upper*M] | i32 upper_counts[n_upper]


def _model_bytes(model: PrecomputedModel) -> bytes:
    buf = io.BytesIO()
    w = buf.write
    p = model.theta_hat
    w(MAGIC)
    w(struct.pack("<I", FORMAT_VERSION))
    w(struct.pack("<QQQ", model.n, model.dim, model.k))
    w(struct.pack("<dddd", p.sigma, p.rho, p.nu, p.tau))
    w(struct.pack("<I", int(model.kind)))
    w(np.ascontiguousarray(model.X, dtype="<f8").tobytes())
    w(np.ascontiguousarray(model.table.S, dtype="<i8").tobytes())
    w(np.ascontiguousarray(model.C, dtype="<f8").tobytes())
    w(struct.pack("<d", model.mean_offset))
    idx = model.index
    w(struct.pack("<I", int(idx.mode)))
    if idx.mode == IndexMode.GRAPH:
        g, gp = idx.graph, idx.params
        w(struct.pack("<QQQQ", gp.M, gp.ef_construction, gp.ef_search, gp.seed))
        w(struct.pack("<qq", g.entry, g.max_level))
        w(np.ascontiguousarray(g.order, dtype="<i8").tobytes())
        w(np.ascontiguousarray(g.levels, dtype="<i8").tobytes())
        w(np.ascontiguousarray(g.links0, dtype="<i4").tobytes())
        w(np.ascontiguousarray(g.counts0, dtype="<i4").tobytes())
        w(struct.pack("<Q", g.upper.shape[0]))
        w(np.ascontiguousarray(g.upper, dtype="<i4").tobytes())
        w(np.ascontiguousarray(g.upper_counts, dtype="<i4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(model: PrecomputedModel, path) -> int:
    """Write ``model`` to ``path``; returns the number of bytes written."""
    data = _model_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def serialized_size(model: PrecomputedModel) -> int:
    return len(_model_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, nbytes: int, what: str) -> bytes:
        if nbytes < 0 or self.pos + nbytes > len(self.data):
            raise ModelFormatError(
                f"truncated model file: need {nbytes} bytes for {what}, "
                f"{len(self.data) - self.pos} remain", offset=self.pos)
        out = self.data[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype: str, count: int, what: str, shape=None) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        arr = np.frombuffer(self.take(count * itemsize, what), dtype=dtype)
        arr = arr.astype(arr.dtype.newbyteorder("="))
        return arr.reshape(shape) if shape is not None else arr


def load_model(path) -> PrecomputedModel:
    with open(path, "rb") as fh:
        data = fh.read()
    return model_from_bytes(data)


def model_from_bytes(data: bytes) -> PrecomputedModel:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError("not a model file (bad magic)", offset=0)
    (version,) = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"model format version {version}, this build reads {FORMAT_VERSION}", offset=4)
    n, d, k = r.unpack("<QQQ", "dimensions")
    if n == 0 or d == 0 or k == 0 or k > n or n * max(d, k) > len(data):
        raise ModelFormatError(f"implausible dimensions n={n}, d={d}, k={k}", offset=8)
    at = r.pos
    sigma, rho, nu, tau = r.unpack("<dddd", "hyperparameters")
    try:
        theta = KernelParams(sigma, rho, nu, tau)
    except DomainError as err:
        raise ModelFormatError(f"invalid hyperparameters: {err}", offset=at) from None
    at = r.pos
    (kind_tag,) = r.unpack("<I", "kernel kind")
    try:
        kind = KernelKind(kind_tag)
    except ValueError:
        raise ModelFormatError(f"unknown kernel tag {kind_tag}", offset=at) from None
    X = r.array("<f8", n * d, "features", (n, d))
    at = r.pos
    S = r.array("<i8", n * k, "neighbor table", (n, k))
    C = r.array("<f8", n * k, "coefficients", (n, k))
    (mean_offset,) = r.unpack("<d", "mean offset")
    at_index = r.pos
    (mode_tag,) = r.unpack("<I", "index mode")
    if mode_tag == IndexMode.EXACT:
        graph_parts = None
    elif mode_tag == IndexMode.GRAPH:
        M, ef_c, ef_s, seed = r.unpack("<QQQQ", "graph parameters")
        entry, max_level = r.unpack("<qq", "graph entry point")
        order = r.array("<i8", n, "graph order")
        levels = r.array("<i8", n, "graph levels")
        links0 = r.array("<i4", n * 2 * M, "graph base layer", (n, 2 * M))
        counts0 = r.array("<i4", n, "graph base degrees")
        (n_upper,) = r.unpack("<Q", "upper layer size")
        upper = r.array("<i4", n_upper * M, "graph upper layers", (n_upper, M))
        upper_counts = r.array("<i4", n_upper, "graph upper degrees")
        graph_parts = (GraphParams(int(M), int(ef_c), int(ef_s), int(seed)), order, levels,
                       (links0, counts0, upper, upper_counts, entry, max_level))
    else:
        raise ModelFormatError(f"unknown index mode {mode_tag}", offset=at_index)
    body_end = r.pos
    (crc,) = r.unpack("<I", "checksum")
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} unexpected trailing bytes", offset=r.pos)
    if zlib.crc32(data[:body_end]) != crc:
        raise ModelFormatError("checksum mismatch", offset=body_end)

    try:
        table = NeighborTable(S)
    except DomainError as err:
        raise ModelFormatError(f"invalid neighbor table: {err}", offset=at) from None
    if graph_parts is None:
        index = nn_index.build(X, IndexMode.EXACT)
    else:
        params, order, levels, arrays = graph_parts
        index = nn_index._assemble_graph(X.copy(), params, order, levels, arrays)
        X = index.points
    X.setflags(write=False)
    C.setflags(write=False)
    return PrecomputedModel(C, table, theta, kind, X, float(mean_offset), index)
