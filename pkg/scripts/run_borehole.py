"""Borehole surrogate: train, precompute and score the fast predictor.

Prints RMSE on detrended test responses, timings and the fitted length
scale for the exact and graph neighbor indices.
"""

import argparse
import time
from dataclasses import asdict, dataclass

from fastmuygps import borehole as bh
from fastmuygps import fast_predict as fp
from fastmuygps import muygps as mg
from fastmuygps import nn_index as nn
from fastmuygps.cli import rmse, time_per_point
from fastmuygps.kernel import KernelKind, KernelParams


@dataclass
class Config:
    n_train: int = 20_000
    n_test: int = 4_000
    k: int = 50
    seed: int = 0
    index: str = "exact"
    rho0: float = 1.0
    tau: float = 1e-4


def run(cfg: Config) -> dict:
    train = bh.make_dataset(bh.DesignConfig(cfg.n_train, seed=cfg.seed))
    test = bh.make_dataset(bh.DesignConfig(cfg.n_test, seed=cfg.seed + 1),
                           mean_offset=train.mean_offset)
    t0 = time.perf_counter()
    index = nn.build(train.X, cfg.index)
    t1 = time.perf_counter()
    config = mg.TrainConfig(k=cfg.k, kind=KernelKind.RBF,
                            initial=KernelParams(rho=cfg.rho0, tau=cfg.tau),
                            bounds={"rho": (0.1, 1e3), "nu": (0.1, 5.0), "tau": (0.0, 1.0)})
    fitted = mg.train(train, config, mg.sample_batch(train.n, seed=cfg.seed), index)
    t2 = time.perf_counter()
    model = fp.precompute(train, fitted, index, cfg.k)
    t3 = time.perf_counter()
    pred = fp.fast_predict_batch(model, test.X)
    per_point = time_per_point(lambda Z: fp.fast_predict_batch(model, Z), test.X, 5)
    return dict(**asdict(cfg), rho=fitted.theta_hat.rho,
                rmse=rmse(pred - test.mean_offset, test.Y),
                index_seconds=t1 - t0, train_seconds=t2 - t1, precompute_seconds=t3 - t2,
                per_point_seconds=per_point)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--full-scale", action="store_true", help="n_train=1e5, n_test=2e4, k=150")
    p.add_argument("--index", nargs="+", default=["exact", "graph"])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    for mode in args.index:
        cfg = Config(index=mode, seed=args.seed)
        if args.full_scale:
            cfg.n_train, cfg.n_test, cfg.k = 100_000, 20_000, 150
        for key, val in run(cfg).items():
            print(f"{key}: {val:.6g}" if isinstance(val, float) else f"{key}: {val}")
        print()


if __name__ == "__main__":
    main()
