"""Recover the borehole radius r_w by Metropolis sampling with a fast emulator."""

import argparse
import time
from dataclasses import dataclass

from fastmuygps import borehole as bh
from fastmuygps import fast_predict as fp
from fastmuygps import mcmc
from fastmuygps import muygps as mg
from fastmuygps import nn_index as nn
from fastmuygps.kernel import KernelKind, KernelParams


@dataclass
class Config:
    n_train: int = 20_000
    k: int = 50
    true_rw: float = 0.09
    steps: int = 100_000
    seed: int = 0
    noise_sd: float = 1.0


def main():
    p = argparse.ArgumentParser(description=__doc__)
    for name, val in vars(Config()).items():
        p.add_argument(f"--{name.replace('_', '-')}", type=type(val), default=val)
    p.add_argument("--trace-out")
    args = p.parse_args()
    cfg = Config(**{k: getattr(args, k) for k in vars(Config())})

    train = bh.make_dataset(bh.DesignConfig(cfg.n_train, seed=cfg.seed))
    index = nn.build(train.X)
    config = mg.TrainConfig(k=cfg.k, kind=KernelKind.RBF, initial=KernelParams(tau=1e-4),
                            bounds={"rho": (0.1, 1e3), "nu": (0.1, 5.0), "tau": (0.0, 1.0)})
    fitted = mg.train(train, config, mg.sample_batch(train.n, seed=cfg.seed), index)
    model = fp.precompute(train, fitted, index, cfg.k)

    prob = mcmc.make_problem(cfg.true_rw, bh.DesignConfig(1), noise_sd=cfg.noise_sd)
    t0 = time.perf_counter()
    chain = mcmc.run_chain(prob, model, cfg.steps, seed=cfg.seed)
    seconds = time.perf_counter() - t0
    if args.trace_out:
        mcmc.write_trace(args.trace_out, chain)
    s = mcmc.summarize(chain)
    print(f"posterior_mean: {s.mean:.6g}")
    print(f"posterior_sd: {s.sd:.6g}")
    print(f"relative_error: {abs(s.mean - cfg.true_rw) / cfg.true_rw:.6g}")
    print(f"acceptance_rate: {s.acceptance_rate:.6g}")
    print(f"chain_seconds: {seconds:.6g}")


if __name__ == "__main__":
    main()
