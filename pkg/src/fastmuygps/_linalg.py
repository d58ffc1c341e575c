"""Symmetric positive-definite solves with escalating diagonal jitter."""

from __future__ import annotations

import numba
import numpy as np
from scipy import linalg as sla

from .errors import NumericalError

# relative to the mean diagonal, so sigma rescaling commutes with the jitter
JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6)


def cholesky_jitter(K: np.ndarray, *, label: str = "") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, adding jitter on failure.

    Returns the factor and the relative jitter that succeeded.
    """
    scale = float(np.mean(np.diag(K)))
    for jitter in JITTER_SCHEDULE:
        Kj = K if jitter == 0.0 else K + jitter * scale * np.eye(K.shape[0])
        try:
            return np.linalg.cholesky(Kj), jitter
        except np.linalg.LinAlgError:
            continue
    where = f" for {label}" if label else ""
    raise NumericalError(
        f"covariance not positive definite{where} after jitter {JITTER_SCHEDULE[-1]:g}",
        jitter=JITTER_SCHEDULE[-1],
    )


def cho_solve(L: np.ndarray, y: np.ndarray) -> np.ndarray:
    return sla.cho_solve((L, True), y, check_finite=False)


def solve_spd(K: np.ndarray, y: np.ndarray, *, label: str = "") -> np.ndarray:
    L, _ = cholesky_jitter(K, label=label)
    return cho_solve(L, y)


@numba.njit(cache=True)
def _cho_solve_stack(L, y):
    b, k = y.shape
    out = np.empty_like(y)
    z = np.empty(k)
    for s in range(b):
        for i in range(k):
            acc = y[s, i]
            for j in range(i):
                acc -= L[s, i, j] * z[j]
            z[i] = acc / L[s, i, i]
        for i in range(k - 1, -1, -1):
            acc = z[i]
            for j in range(i + 1, k):
                acc -= L[s, j, i] * out[s, j]
            out[s, i] = acc / L[s, i, i]
    return out


def solve_spd_batch(K: np.ndarray, y: np.ndarray, *, rows=None) -> np.ndarray:
    """Solve a stack of SPD systems ``K[s] x[s] = y[s]``.

    The whole stack is factored at once; if any member fails, members are
    refactored one by one with jitter escalation. ``rows`` maps stack
    positions to caller-facing identifiers used in error messages.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        L = np.empty_like(K)
        for s in range(K.shape[0]):
            label = f"row {rows[s] if rows is not None else s}"
            try:
                L[s], _ = cholesky_jitter(K[s], label=label)
            except NumericalError as err:
                err.row = int(rows[s]) if rows is not None else s
                raise
    return _cho_solve_stack(L, y)
