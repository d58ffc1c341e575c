"""Stationary isotropic covariance kernels (Matérn family and RBF).

Kernels are evaluated on Euclidean distances. The nugget term is added only
where the distance is exactly zero, i.e. where two points share every
coordinate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

from .errors import DomainError

_HALF_INTEGER_NUS = (0.5, 1.5, 2.5)


class KernelKind(enum.IntEnum):
    MATERN = 0
    RBF = 1

    @classmethod
    def parse(cls, value: "str | KernelKind") -> "KernelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise DomainError(f"unknown kernel kind {value!r}") from None


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters ``(sigma, rho, nu, tau)``.

    ``sigma`` scales the process, ``rho`` is the length scale in feature
    units, ``nu`` the Matérn smoothness (ignored by RBF) and ``tau`` the
    nugget, applied as ``sigma**2 * tau**2`` on the zero-distance diagonal.
    """

    sigma: float = 1.0
    rho: float = 1.0
    nu: float = 0.5
    tau: float = 0.0

    def __post_init__(self):
        for name in ("sigma", "rho", "nu", "tau"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise DomainError(f"{name} must be a finite real, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.sigma <= 0 or self.rho <= 0 or self.nu <= 0:
            raise DomainError(
                f"sigma, rho and nu must be positive: {self.sigma}, {self.rho}, {self.nu}"
            )
        if self.tau < 0:
            raise DomainError(f"tau must be non-negative, got {self.tau}")

    def replace(self, **changes) -> "KernelParams":
        fields = dict(sigma=self.sigma, rho=self.rho, nu=self.nu, tau=self.tau)
        fields.update(changes)
        return KernelParams(**fields)

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma, self.rho, self.nu, self.tau], dtype=np.float64)


def _check_distances(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise DomainError("distances must be finite")
    if np.any(d < 0):
        raise DomainError("distances must be non-negative")
    return d


def _matern_correlation(d: np.ndarray, rho: float, nu: float) -> np.ndarray:
    """Bracketed Matérn term without the nugget; equals 1 at ``d == 0``."""
    if nu == 0.5:
        return np.exp(-d / rho)
    if nu == 1.5:
        x = math.sqrt(3.0) * d / rho
        return (1.0 + x) * np.exp(-x)
    if nu == 2.5:
        x = math.sqrt(5.0) * d / rho
        return (1.0 + x + x * x / 3.0) * np.exp(-x)

    x = math.sqrt(2.0 * nu) * d / rho
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        kve = special.kve(nu, xp)
        logval = (
            (1.0 - nu) * math.log(2.0)
            - special.gammaln(nu)
            + nu * np.log(xp)
            + np.log(kve)
            - xp
        )
        val = np.exp(logval)
    # kve overflows for tiny x at large nu; the leading series terms are exact there
    bad = ~np.isfinite(val)
    if np.any(bad):
        xb2 = xp[bad] ** 2
        series = np.ones_like(xb2)
        if nu > 1:
            series -= xb2 / (4.0 * (nu - 1.0))
        if nu > 2:
            series += xb2 * xb2 / (32.0 * (nu - 1.0) * (nu - 2.0))
        val[bad] = series
    out[pos] = np.minimum(val, 1.0)
    return out


def matern_value(d, p: KernelParams):
    """Matérn covariance at distance(s) ``d``; scalar in, scalar out."""
    arr = _check_distances(d)
    corr = _matern_correlation(np.atleast_1d(arr), p.rho, p.nu)
    out = p.sigma**2 * (corr + p.tau**2 * (np.atleast_1d(arr) == 0.0))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def rbf_value(d, p: KernelParams):
    """Squared-exponential covariance ``sigma^2 [exp(-d^2 / (2 rho^2)) + tau^2 1(d=0)]``."""
    arr = _check_distances(d)
    out = p.sigma**2 * (np.exp(-(arr**2) / (2.0 * p.rho**2)) + p.tau**2 * (arr == 0.0))
    return float(out) if arr.ndim == 0 else out


def kernel_from_distances(d: np.ndarray, kind: KernelKind, p: KernelParams) -> np.ndarray:
    """Vectorized kernel over an array of distances of any shape.

    Skips the domain checks of the scalar entry points; callers pass
    distances they computed themselves.
    """
    d = np.asarray(d, dtype=np.float64)
    if kind == KernelKind.RBF:
        corr = np.exp(d * d * (-0.5 / p.rho**2))
    else:
        corr = _matern_correlation(d.reshape(-1), p.rho, p.nu).reshape(d.shape)
    if p.tau > 0:
        corr = corr + p.tau**2 * (d == 0.0)
    if p.sigma != 1.0:
        corr = corr * p.sigma**2
    return corr


def pairwise_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Euclidean distances from explicit coordinate differences.

    Using differences (not the ``|a|^2 + |b|^2 - 2ab`` expansion) keeps the
    result exactly symmetric and exactly zero for coincident points.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[-1] != B.shape[-1]:
        raise DomainError(f"dimension mismatch: {A.shape[-1]} vs {B.shape[-1]}")
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, 2_000_000 // max(1, B.shape[0] * A.shape[1]))
    for s in range(0, A.shape[0], step):
        diff = A[s : s + step, None, :] - B[None, :, :]
        out[s : s + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


@numba.njit(cache=True)
def _neighborhood_sqdists(X, S):
    m, k = S.shape
    out = np.empty((m, k, k))
    for r in range(m):
        for a in range(k):
            out[r, a, a] = 0.0
            for b in range(a + 1, k):
                acc = 0.0
                for t in range(X.shape[1]):
                    diff = X[S[r, a], t] - X[S[r, b], t]
                    acc += diff * diff
                out[r, a, b] = acc
                out[r, b, a] = acc
    return out


def neighborhood_distances(X: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Distances within each row's neighborhood: ``(n, d), (m, k) -> (m, k, k)``."""
    return np.sqrt(_neighborhood_sqdists(np.ascontiguousarray(X), np.ascontiguousarray(S)))


# kernels with compiled fast paths; anything else goes through numpy
RBF_CODE, MATERN05_CODE, MATERN15_CODE, MATERN25_CODE, GENERIC_CODE = 0, 1, 2, 3, -1


def kernel_code(kind: KernelKind, p: KernelParams) -> int:
    if kind == KernelKind.RBF:
        return RBF_CODE
    return {0.5: MATERN05_CODE, 1.5: MATERN15_CODE, 2.5: MATERN25_CODE}.get(p.nu, GENERIC_CODE)


@numba.njit(inline="always", cache=True)
def _corr(d2, code, rho):
    """Correlation (no nugget) from a squared distance for a compiled kernel code."""
    if code == 0:
        return math.exp(-0.5 * d2 / (rho * rho))
    d = math.sqrt(d2)
    if code == 1:
        return math.exp(-d / rho)
    if code == 2:
        x = math.sqrt(3.0) * d / rho
        return (1.0 + x) * math.exp(-x)
    x = math.sqrt(5.0) * d / rho
    return (1.0 + x + x * x / 3.0) * math.exp(-x)


@numba.njit(cache=True)
def _neighborhood_kernel(X, S, code, sigma2, rho, tau2):
    m, k = S.shape
    out = np.empty((m, k, k))
    diag = sigma2 * (1.0 + tau2)
    for r in range(m):
        for a in range(k):
            out[r, a, a] = diag
            for b in range(a + 1, k):
                d2 = 0.0
                for t in range(X.shape[1]):
                    diff = X[S[r, a], t] - X[S[r, b], t]
                    d2 += diff * diff
                kv = _corr(d2, code, rho)
                if d2 == 0.0:
                    kv += tau2
                kv *= sigma2
                out[r, a, b] = kv
                out[r, b, a] = kv
    return out


def neighborhood_kernel(X: np.ndarray, S: np.ndarray, kind: KernelKind,
                        p: KernelParams) -> np.ndarray:
    """Covariance within each row's neighborhood: ``(n, d), (m, k) -> (m, k, k)``."""
    code = kernel_code(kind, p)
    X, S = np.ascontiguousarray(X), np.ascontiguousarray(S)
    if code == GENERIC_CODE:
        return kernel_from_distances(neighborhood_distances(X, S), kind, p)
    return _neighborhood_kernel(X, S, code, p.sigma**2, p.rho, p.tau**2)


def cov_matrix(A, B, kind: KernelKind, p: KernelParams) -> np.ndarray:
    """Covariance ``K(A, B)`` between two point sets."""
    kind = KernelKind.parse(kind)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise DomainError("point coordinates must be finite")
    return kernel_from_distances(pairwise_distances(A, B), kind, p)
