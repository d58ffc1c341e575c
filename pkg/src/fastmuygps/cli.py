"""Command-line driver: gen, train, predict, scaling, mcmc.

Exit codes: 0 success, 2 usage/config/data errors, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import subprocess
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import borehole as bh
from . import fast_predict as fp
from . import mcmc
from . import muygps as mg
from . import nn_index as nn
from .errors import DomainError, ModelFormatError, NumericalError
from .exact_gp import TrainingSet
from .kernel import KernelKind, KernelParams

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunReport:
    rmse: float
    per_point_predict_seconds: float
    n: int
    k: int
    m: int
    seed: int | None = None
    b: int | None = None
    train_seconds: float | None = None
    precompute_seconds: float | None = None
    build: str = ""


def build_id() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def emit(pairs: dict, out=None) -> None:
    out = out or sys.stdout
    for key, value in pairs.items():
        if value is None:
            continue
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}: {value}", file=out)


def read_config(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    conf = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        conf[key.strip()] = value.strip()
    return conf


def _parse_int(conf, key, default=None, required=False):
    if key not in conf or conf[key] is None:
        if required:
            raise UsageError(f"missing required key: {key}")
        return default
    try:
        return int(conf[key])
    except (TypeError, ValueError):
        raise UsageError(f"{key} must be an integer, got {conf[key]!r}") from None


def _set_threads(n: int | None) -> None:
    if not n:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


# ---------------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    conf = read_config(args.config) if args.config else {}
    for key in ("n_train", "n_test", "seed", "test_seed", "feature_space"):
        flag = getattr(args, key)
        if flag is not None:
            conf[key] = flag
    n_train = _parse_int(conf, "n_train", required=True)
    n_test = _parse_int(conf, "n_test", required=True)
    seed = _parse_int(conf, "seed", 0)
    test_seed = _parse_int(conf, "test_seed", seed + 1)
    space = str(conf.get("feature_space", "unit"))
    try:
        train_cfg = bh.DesignConfig(n_train, seed, feature_space=space)
        test_cfg = bh.DesignConfig(n_test, test_seed, feature_space=space)
    except DomainError as err:
        raise UsageError(str(err)) from None
    train = bh.make_dataset(train_cfg)
    test = bh.make_dataset(test_cfg, mean_offset=train.mean_offset)
    echo = dict(n_train=n_train, n_test=n_test, seed=seed, test_seed=test_seed,
                feature_space=space)
    bh.write_dataset(args.train_out, train, {**echo, "split": "train"})
    bh.write_dataset(args.test_out, test, {**echo, "split": "test"})
    emit(dict(train_file=args.train_out, train_records=train.n,
              test_file=args.test_out, test_records=test.n, mean_offset=train.mean_offset))
    return EXIT_OK


# ---------------------------------------------------------------------- train


def _train_config(args, n: int) -> mg.TrainConfig:
    free = tuple(p.strip() for p in args.free_params.split(",") if p.strip())
    bounds = {"rho": tuple(args.rho_bounds), "nu": tuple(args.nu_bounds),
              "tau": tuple(args.tau_bounds)}
    initial = KernelParams(sigma=1.0, rho=args.rho, nu=args.nu, tau=args.tau)
    return mg.TrainConfig(k=args.k, kind=KernelKind.parse(args.kernel), initial=initial,
                          free_params=free, bounds=bounds, max_evals=args.max_evals)


def fit_and_precompute(train: TrainingSet, config: mg.TrainConfig, *, batch_size, seed,
                       index_mode, k_predict=None):
    """Offline phase: index, LOOCV training and the coefficient table, timed."""
    t0 = time.perf_counter()
    index = nn.build(train.X, index_mode, nn.GraphParams(seed=seed))
    t1 = time.perf_counter()
    batch = mg.sample_batch(train.n, batch_size, seed)
    fitted = mg.train(train, config, batch, index)
    t2 = time.perf_counter()
    model = fp.precompute(train, fitted, index, k_predict or config.k)
    t3 = time.perf_counter()
    timings = dict(index_seconds=t1 - t0, train_seconds=t2 - t1, precompute_seconds=t3 - t2)
    return model, fitted, batch, timings


def cmd_train(args) -> int:
    _set_threads(args.threads)
    train, _ = bh.read_dataset(args.data)
    config = _train_config(args, train.n)
    model, fitted, batch, timings = fit_and_precompute(
        train, config, batch_size=args.batch, seed=args.seed, index_mode=args.index)
    nbytes = fp.save_model(model, args.model_out)
    th = fitted.theta_hat
    report = dict(kernel=config.kind.name.lower(), sigma=th.sigma, rho=th.rho, nu=th.nu,
                  tau=th.tau, final_loss=fitted.final_loss,
                  initial_loss=fitted.initial_loss, evaluations=fitted.evaluations,
                  improved=fitted.improved, n=train.n, k=config.k, b=batch.b,
                  seed=args.seed, index=nn.IndexMode.parse(args.index).name.lower(),
                  **timings, model_file=args.model_out, model_bytes=nbytes)
    emit(report)
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(report, indent=2, default=str))
    return EXIT_OK


# ---------------------------------------------------------------------- predict


def time_per_point(fn, Z, reps: int) -> float:
    """Median wall time of ``reps`` full passes after one warm-up, per point."""
    fn(Z)
    passes = []
    for _ in range(max(1, reps)):
        t0 = time.perf_counter()
        fn(Z)
        passes.append(time.perf_counter() - t0)
    return float(np.median(passes)) / len(Z)


def rmse(pred, truth) -> float:
    resid = np.asarray(pred) - np.asarray(truth)
    return float(np.sqrt(np.mean(resid * resid)))


def cmd_predict(args) -> int:
    _set_threads(args.threads)
    model = fp.load_model(args.model)
    test, _ = bh.read_dataset(args.data)
    if test.dim != model.dim:
        raise UsageError(f"test features have dimension {test.dim}, model expects {model.dim}")
    pred = fp.fast_predict_batch(model, test.X)
    truth = test.Y + test.mean_offset
    per_point = time_per_point(lambda Z: fp.fast_predict_batch(model, Z), test.X,
                               args.timing_reps)
    extra = {}
    if args.train_report:
        extra = json.loads(Path(args.train_report).read_text())
    report = RunReport(rmse=rmse(pred, truth), per_point_predict_seconds=per_point,
                       n=model.n, k=model.k, m=test.n, seed=extra.get("seed"),
                       b=extra.get("b"), train_seconds=extra.get("train_seconds"),
                       precompute_seconds=extra.get("precompute_seconds"), build=build_id())
    if args.predictions_out:
        with open(args.predictions_out, "w") as fh:
            fh.write("index,prediction,truth\n")
            for i, (p, t) in enumerate(zip(pred, truth)):
                fh.write(f"{i},{float(p)!r},{float(t)!r}\n")
    emit(asdict(report))
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(asdict(report), indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------- scaling


def cmd_scaling(args) -> int:
    _set_threads(args.threads)
    try:
        n_list = [int(float(v)) for v in args.n_list.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--n-list must be comma-separated integers: {args.n_list!r}") from None
    if not n_list:
        raise UsageError("--n-list is empty")
    rows = []
    header = ["n", "per_point_seconds", "ratio"]
    if args.baseline:
        header += ["scan_per_point_seconds", "scan_ratio"]
    header += ["rmse", "train_seconds", "precompute_seconds"]
    print("\t".join(header))
    for n in n_list:
        train = bh.make_dataset(bh.DesignConfig(n, args.seed))
        test = bh.make_dataset(bh.DesignConfig(args.n_test, args.seed + 1),
                               mean_offset=train.mean_offset)
        config = _train_config(args, n)
        model, _, _, timings = fit_and_precompute(
            train, config, batch_size=args.batch, seed=args.seed, index_mode=args.index)
        row = dict(n=n, per_point_seconds=time_per_point(
            lambda Z: fp.fast_predict_batch(model, Z), test.X, args.timing_reps))
        row["ratio"] = row["per_point_seconds"] / rows[-1]["per_point_seconds"] if rows else 1.0
        if args.baseline:
            scan = model.with_index(nn.build(train.X, "exact"))
            row["scan_per_point_seconds"] = time_per_point(
                lambda Z: fp.fast_predict_batch(scan, Z), test.X, args.timing_reps)
            row["scan_ratio"] = (row["scan_per_point_seconds"]
                                 / rows[-1]["scan_per_point_seconds"] if rows else 1.0)
        pred = fp.fast_predict_batch(model, test.X)
        row["rmse"] = rmse(pred, test.Y + test.mean_offset)
        row["train_seconds"] = timings["train_seconds"]
        row["precompute_seconds"] = timings["precompute_seconds"]
        rows.append(row)
        print("\t".join(f"{row[h]:.6g}" if isinstance(row[h], float) else str(row[h])
                        for h in header), flush=True)
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(rows, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------- mcmc


def cmd_mcmc(args) -> int:
    model = fp.load_model(args.model)
    cfg = bh.DesignConfig(1, feature_space=args.feature_space)
    prob = mcmc.make_problem(args.true_rw, cfg, noise_sd=args.noise_sd)
    chain = mcmc.run_chain(prob, model, args.steps, args.proposal_sd, args.seed)
    if args.trace_out:
        mcmc.write_trace(args.trace_out, chain)
    summary = mcmc.summarize(chain, args.burn_in)
    emit(dict(true_rw=args.true_rw, observed_flow=prob.observed_flow, steps=args.steps,
              seed=args.seed, posterior_mean=summary.mean, posterior_sd=summary.sd,
              acceptance_rate=summary.acceptance_rate,
              relative_error=abs(summary.mean - args.true_rw) / args.true_rw))
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def _floats(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'low,high', got {text!r}") from None
    return lo, hi


def _add_model_flags(p):
    p.add_argument("--k", type=int, default=50, help="neighbor count")
    p.add_argument("--batch", type=int, default=None, help="LOOCV batch size (default min(500, n))")
    p.add_argument("--kernel", default="rbf", choices=["rbf", "matern"])
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=1.0, help="initial length scale")
    p.add_argument("--tau", type=float, default=1e-4, help="nugget")
    p.add_argument("--free-params", default="rho",
                   help="comma-separated subset of rho,nu,tau to train ('' for none)")
    p.add_argument("--rho-bounds", type=_floats, default=(0.1, 1000.0))
    p.add_argument("--nu-bounds", type=_floats, default=(0.1, 5.0))
    p.add_argument("--tau-bounds", type=_floats, default=(0.0, 1.0))
    p.add_argument("--max-evals", type=int, default=200)
    p.add_argument("--index", default="exact", choices=["exact", "graph"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastmuygps", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write borehole train/test datasets")
    p.add_argument("--config", help="flat key = value file (n_train, n_test, seed, ...)")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-seed", type=int)
    p.add_argument("--feature-space", choices=["unit", "physical"])
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="fit hyperparameters and precompute a model file")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--report-out")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a dataset and report RMSE and latency")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--timing-reps", type=int, default=5)
    p.add_argument("--predictions-out")
    p.add_argument("--report-out", help="JSON copy of the report")
    p.add_argument("--train-report", help="JSON report from 'train' to merge timings from")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("scaling", help="per-point latency as the training set grows")
    p.add_argument("--n-list", required=True, help="comma-separated training sizes")
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--timing-reps", type=int, default=5)
    p.add_argument("--baseline", action="store_true", help="also time a linear-scan lookup")
    p.add_argument("--report-out")
    _add_model_flags(p)
    p.set_defaults(func=cmd_scaling, index="graph")

    p = sub.add_parser("mcmc", help="recover r_w from an observed flow with the emulator")
    p.add_argument("--model", required=True)
    p.add_argument("--true-rw", type=float, default=0.09)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--proposal-sd", type=float, default=0.005)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--burn-in", type=float, default=0.1)
    p.add_argument("--feature-space", default="unit", choices=["unit", "physical"])
    p.add_argument("--trace-out")
    p.set_defaults(func=cmd_mcmc)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"error: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, DomainError, ModelFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err.filename or ''}: {err.strerror}", file=sys.stderr)
        return EXIT_USAGE
