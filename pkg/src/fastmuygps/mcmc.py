"""Random-walk Metropolis recovery of the borehole radius with an emulator.

The likelihood is Gaussian in the gap between the observed flow and the
emulated flow; the prior is uniform on the radius bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import borehole as bh
from .errors import DomainError
from .fast_predict import PrecomputedModel, fast_predict_one

RW_BOUNDS = (float(bh.LOWER[0]), float(bh.UPPER[0]))


@dataclass(frozen=True)
class InverseProblem:
    """Observed flow plus every input except ``r_w``, held at known values."""

    observed_flow: float
    known: dict
    noise_sd: float = 1.0
    design: bh.DesignConfig = field(default_factory=lambda: bh.DesignConfig(1))
    prior_bounds: tuple = RW_BOUNDS

    def __post_init__(self):
        if not self.noise_sd > 0:
            raise DomainError("noise_sd must be positive")
        for j, nm in enumerate(bh.NAMES[1:], 1):
            if nm not in self.known:
                raise DomainError(f"missing known value for {nm}")
            if not bh.LOWER[j] <= self.known[nm] <= bh.UPPER[j]:
                raise DomainError(f"known {nm}={self.known[nm]} out of bounds")

    def physical(self, r_w: float) -> np.ndarray:
        return np.array([r_w] + [self.known[nm] for nm in bh.NAMES[1:]])

    def features(self, r_w: float) -> np.ndarray:
        return bh.features(self.physical(r_w)[None, :], self.design)[0]


def make_problem(true_rw: float, cfg: bh.DesignConfig, noise_sd: float = 1.0,
                 known: dict | None = None) -> InverseProblem:
    """Observation generated by the true borehole function at ``true_rw``.

    Unknown-free inputs default to the design's fixed values and range
    midpoints for ``r``, ``T_u`` and ``T_l``.
    """
    values = {nm: float(bh.MIDPOINT[j]) for j, nm in enumerate(bh.NAMES)}
    values.update(cfg.fixed)
    values.update(known or {})
    values.pop("r_w")
    phys = np.array([true_rw] + [values[nm] for nm in bh.NAMES[1:]])
    return InverseProblem(bh.borehole(phys), values, noise_sd, cfg)


def log_posterior(r_w: float, prob: InverseProblem, model: PrecomputedModel) -> float:
    lo, hi = prob.prior_bounds
    if not lo <= r_w <= hi:
        return -math.inf
    z = prob.features(r_w)
    if z.shape[0] != model.dim:
        raise DomainError(f"problem features have dimension {z.shape[0]}, model {model.dim}")
    resid = prob.observed_flow - fast_predict_one(model, z)
    return -0.5 * (resid / prob.noise_sd) ** 2


def acceptance_probability(logpost_from: float, logpost_to: float) -> float:
    if logpost_to == -math.inf:
        return 0.0
    return math.exp(min(0.0, logpost_to - logpost_from))


@dataclass
class ChainState:
    samples: np.ndarray
    log_posts: np.ndarray
    accepted: np.ndarray
    proposal_sd: float
    seed: int

    @property
    def acceptance_count(self) -> int:
        return int(self.accepted.sum())

    @property
    def acceptance_rate(self) -> float:
        return self.acceptance_count / len(self.accepted) if len(self.accepted) else 0.0


def run_chain(prob: InverseProblem, model: PrecomputedModel, n_steps: int,
              proposal_sd: float = 0.005, seed: int = 0, start: float | None = None
              ) -> ChainState:
    """Metropolis chain on ``r_w`` with a Gaussian random-walk proposal.

    A zero proposal width is allowed and yields a chain that never moves
    (no step counts as accepted).
    """
    if n_steps < 1:
        raise DomainError("n_steps must be at least 1")
    if proposal_sd < 0:
        raise DomainError("proposal_sd must be non-negative")
    rng = np.random.default_rng(seed)
    steps = rng.standard_normal(n_steps) * proposal_sd
    log_u = np.log(rng.random(n_steps))
    cur = float(np.mean(prob.prior_bounds)) if start is None else float(start)
    cur_lp = log_posterior(cur, prob, model)
    samples = np.empty(n_steps)
    lps = np.empty(n_steps)
    accepted = np.zeros(n_steps, dtype=bool)
    for t in range(n_steps):
        if steps[t] != 0.0:
            prop = cur + steps[t]
            prop_lp = log_posterior(prop, prob, model)
            if log_u[t] < prop_lp - cur_lp:
                cur, cur_lp = prop, prop_lp
                accepted[t] = True
        samples[t] = cur
        lps[t] = cur_lp
    return ChainState(samples, lps, accepted, proposal_sd, seed)


@dataclass(frozen=True)
class ChainSummary:
    mean: float
    sd: float
    acceptance_rate: float
    n_used: int


def summarize(chain: ChainState, burn_in_fraction: float = 0.1) -> ChainSummary:
    if not 0.0 <= burn_in_fraction < 1.0:
        raise DomainError("burn_in_fraction must lie in [0, 1)")
    start = int(math.floor(burn_in_fraction * len(chain.samples)))
    kept = chain.samples[start:]
    if kept.size == 0:
        raise DomainError("no samples left after burn-in")
    # spread about the first kept sample: exact zero for a chain that never moved
    return ChainSummary(float(np.mean(kept)), float(np.std(kept - kept[0])),
                        float(chain.accepted[start:].mean()), int(kept.size))


def write_trace(path, chain: ChainState) -> None:
    with open(path, "w") as fh:
        fh.write("step,r_w,log_posterior,accepted\n")
        for t, (x, lp, acc) in enumerate(zip(chain.samples, chain.log_posts, chain.accepted)):
            fh.write(f"{t},{float(x)!r},{float(lp)!r},{int(acc)}\n")
