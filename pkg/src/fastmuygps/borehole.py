"""Borehole flow test function and its emulation dataset pipeline.

Samples come from a Latin hypercube over the free inputs, are mapped
affinely onto physical bounds for evaluation, and become features by
element-wise division by an anisotropy vector. Responses are detrended.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .exact_gp import TrainingSet

NAMES = ("r_w", "r", "T_u", "H_u", "T_l", "H_l", "L", "K_w")
LOWER = np.array([0.05, 100.0, 63070.0, 990.0, 63.1, 700.0, 1120.0, 9855.0])
UPPER = np.array([0.15, 50000.0, 115600.0, 1110.0, 116.0, 820.0, 1680.0, 12045.0])
MIDPOINT = 0.5 * (LOWER + UPPER)
ANISOTROPY = (0.0625, 0.25, 1.0, 0.25, 0.5, 0.25, 0.125, 0.5)
FREE_DIMS = ("r_w", "r", "T_u", "T_l")


@dataclass(frozen=True)
class BoreholeInput:
    r_w: float
    r: float
    T_u: float
    H_u: float
    T_l: float
    H_l: float
    L: float
    K_w: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, nm) for nm in NAMES], dtype=np.float64)


def _flow(x: np.ndarray) -> np.ndarray:
    r_w, r, T_u, H_u, T_l, H_l, L, K_w = np.moveaxis(x, -1, 0)
    log_ratio = np.log(r / r_w)
    denom = log_ratio * (1.0 + 2.0 * L * T_u / (log_ratio * r_w**2 * K_w) + T_u / T_l)
    return 2.0 * math.pi * T_u * (H_u - H_l) / denom


def borehole(x, check_bounds: bool = True):
    """Water flow rate (m^3/yr) for a ``BoreholeInput`` or an (..., 8) array."""
    arr = x.as_array() if isinstance(x, BoreholeInput) else np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != 8:
        raise DomainError(f"borehole takes 8 inputs, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("borehole inputs must be finite")
    if check_bounds:
        bad = (arr < LOWER) | (arr > UPPER)
        if np.any(bad):
            names = sorted({NAMES[j] for j in np.nonzero(bad)[-1]})
            raise DomainError(f"inputs out of bounds: {', '.join(names)}")
    out = _flow(arr)
    return float(out) if np.ndim(out) == 0 else out


def lhc_sample(n: int, dims: int, seed: int = 0) -> np.ndarray:
    """Latin hypercube in [0, 1): one point per stratum ``[j/n, (j+1)/n)`` per axis."""
    if n < 1 or dims < 1:
        raise DomainError(f"need n >= 1 and dims >= 1, got {n}, {dims}")
    rng = np.random.default_rng(seed)
    perms = np.stack([rng.permutation(n) for _ in range(dims)], axis=1)
    u = rng.random((n, dims))
    return np.minimum((perms + u) / n, np.nextafter(1.0, 0.0))


def to_physical(unit: np.ndarray) -> np.ndarray:
    return LOWER + unit * (UPPER - LOWER)


def to_unit(physical: np.ndarray) -> np.ndarray:
    return (physical - LOWER) / (UPPER - LOWER)


@dataclass(frozen=True)
class DesignConfig:
    """Borehole design.

    ``feature_space`` picks what is divided by the anisotropy vector:
    ``"unit"`` divides the [0, 1] design coordinates, ``"physical"`` divides
    the physical values. Fixed inputs default to their range midpoints.
    """

    n_samples: int
    seed: int = 0
    free_dims: tuple = FREE_DIMS
    fixed: dict = field(default_factory=lambda: {
        nm: float(MIDPOINT[j]) for j, nm in enumerate(NAMES) if nm not in FREE_DIMS})
    anisotropy: tuple = ANISOTROPY
    feature_space: str = "unit"

    def __post_init__(self):
        if self.n_samples < 1:
            raise DomainError("n_samples must be positive")
        if len(self.anisotropy) != 8 or min(self.anisotropy) <= 0:
            raise DomainError("anisotropy needs 8 strictly positive divisors")
        if self.feature_space not in ("unit", "physical"):
            raise DomainError(f"feature_space must be 'unit' or 'physical'")
        for nm in self.free_dims:
            if nm not in NAMES:
                raise DomainError(f"unknown input {nm!r}")
        for j, nm in enumerate(NAMES):
            if nm in self.free_dims:
                continue
            if nm not in self.fixed:
                raise DomainError(f"no value for fixed input {nm!r}")
            if not LOWER[j] <= self.fixed[nm] <= UPPER[j]:
                raise DomainError(f"fixed {nm}={self.fixed[nm]} out of bounds")


def design_units(cfg: DesignConfig) -> np.ndarray:
    """Unit-cube design (n x 8): LHC on free inputs, fixed inputs at their value."""
    unit = np.empty((cfg.n_samples, 8))
    free = [NAMES.index(nm) for nm in cfg.free_dims]
    unit[:, free] = lhc_sample(cfg.n_samples, len(free), cfg.seed)
    for j, nm in enumerate(NAMES):
        if nm not in cfg.free_dims:
            unit[:, j] = (cfg.fixed[nm] - LOWER[j]) / (UPPER[j] - LOWER[j])
    return unit


def features(physical: np.ndarray, cfg: DesignConfig) -> np.ndarray:
    """Scaled feature vectors for physical inputs under ``cfg``'s scaling."""
    base = to_unit(physical) if cfg.feature_space == "unit" else np.asarray(physical)
    return base / np.asarray(cfg.anisotropy)


def sample_inputs(cfg: DesignConfig) -> np.ndarray:
    """Physical inputs (n x 8) of the design; fixed inputs are exact."""
    phys = to_physical(design_units(cfg))
    for j, nm in enumerate(NAMES):
        if nm not in cfg.free_dims:
            phys[:, j] = cfg.fixed[nm]
    return phys


def make_dataset(cfg: DesignConfig, mean_offset: float | None = None) -> TrainingSet:
    """Features and detrended flows for ``cfg``.

    ``mean_offset`` overrides the subtracted mean, so a test set can be
    detrended with its training set's mean.
    """
    phys = sample_inputs(cfg)
    flow = borehole(phys)
    mean = float(np.mean(flow)) if mean_offset is None else float(mean_offset)
    return TrainingSet(features(phys, cfg), flow - mean, mean)


def write_dataset(path, data: TrainingSet, header: dict | None = None) -> None:
    """Comma-separated export: comment lines, a header row, one record per sample."""
    lines = [f"# {key} = {value}" for key, value in (header or {}).items()]
    lines.append(f"# mean_offset = {data.mean_offset!r}")
    cols = list(NAMES) if data.dim == 8 else [f"x{j}" for j in range(data.dim)]
    lines.append(",".join(cols + ["y"]))
    body = np.column_stack([data.X, data.Y])
    lines.extend(",".join(repr(float(v)) for v in row) for row in body)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path) -> tuple[TrainingSet, dict]:
    """Inverse of :func:`write_dataset`; returns the data and comment metadata."""
    meta = {}
    header = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise DomainError(f"{path}:{lineno}: non-numeric record") from None
            if len(rows[-1]) != len(header):
                raise DomainError(f"{path}:{lineno}: expected {len(header)} fields")
    if header is None or not rows:
        raise DomainError(f"{path}: no records")
    arr = np.array(rows)
    offset = float(meta.get("mean_offset", 0.0))
    return TrainingSet(arr[:, :-1], arr[:, -1], offset), meta
