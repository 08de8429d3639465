"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 numeric failure (non-finite loss
or a failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .experiment import (
    FINDING3_AMOUNTS,
    SCENARIOS,
    ExperimentConfig,
    aggregate,
    build_problem,
    preset,
    run_suite,
)
from .gradients import check_gradients, random_gradient_problem
from .graph_scm import GroundTruthScm
from .metrics import read_metrics_csv
from .sampler import Dataset

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
GRAD_TOLERANCE = 1e-4
METRIC_ALIASES = {
    "eshd": "eshd",
    "auroc": "auroc",
    "mse_L": "mse_L",
    "kl": "kl_true_learned",
    "kl_true_learned": "kl_true_learned",
    "mse_X": "mse_X",
}
METRIC_LABELS = {
    "eshd": "expected SHD",
    "auroc": "AUROC",
    "mse_L": "MSE(L, L_hat)",
    "kl_true_learned": "KL(true || learned)",
    "mse_X": "MSE(X, X_hat)",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class PlotSeries:
    name: str
    x: np.ndarray
    y_median: np.ndarray
    y_q1: np.ndarray
    y_q3: np.ndarray


# ---------------------------------------------------------------- generate


def cmd_generate(args) -> int:
    if args.n_obs + args.n_int == 0:
        raise UsageError("empty dataset: --n-obs plus --n-int must be positive")
    try:
        config = ExperimentConfig(
            d=args.d, D=args.D, er_edges_per_node=args.er, sigma_gt=args.sigma,
            n_obs=args.n_obs, n_int=args.n_int, node_mode=args.node_mode,
            value_mode=args.value_mode, value=args.value, lo=args.lo, hi=args.hi,
            sets=args.sets, seeds=(args.seed,),
        )
        scm, data = build_problem(config, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data.manifest.update(
        d=args.d, D=args.D, er=args.er, sigma=args.sigma, seed=args.seed,
        backend=kernels.BACKEND,
    )
    out = data.save(args.out, scm)
    print(f"wrote {data.n} rows ({args.n_obs} observational, {args.n_int} interventional) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def _train_config(args) -> ExperimentConfig:
    overrides = {}
    for flag, key in (
        ("steps", "steps"), ("lr", "lr"), ("eval_every", "eval_every"),
        ("batch_size", "batch_size"), ("kl_weight", "kl_weight"), ("mask", "mask_mode"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.supervised:
        overrides["supervised"] = True
    overrides["seeds"] = tuple(range(args.seeds))
    scenario = args.scenario or "custom"
    return preset(scenario, **overrides)


def _print_finals(label: str, summary) -> None:
    for seed, rec in summary.finals.items():
        status = "FAILED " + summary.failures[seed] if seed in summary.failures else "ok"
        print(
            f"{label} seed={seed} step={rec.step} eshd={rec.eshd:.4f} auroc={rec.auroc:.4f} "
            f"mse_L={rec.mse_L:.4g} kl={rec.kl_true_learned:.4g} mse_X={rec.mse_X:.4g} [{status}]"
        )


def cmd_train(args) -> int:
    if bool(args.scenario) == bool(args.data):
        raise UsageError("give exactly one of --scenario or --data")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    try:
        config = _train_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    runs: list[tuple[str, ExperimentConfig, tuple | None]] = []
    if args.data:
        src = Path(args.data)
        if not (src / "data.csv").exists() or not (src / "scm.json").exists():
            raise UsageError(f"{src} is not a dataset directory (needs data.csv and scm.json)")
        scm = GroundTruthScm.load(src / "scm.json")
        data = Dataset.load(src)
        config = replace(config, d=scm.d, D=scm.D, sigma_gt=scm.sigma, n_obs=int(data.observational.sum()),
                         n_int=int(data.n - data.observational.sum()))
        runs.append((src.name or "custom", config, (scm, data)))
    elif config.scenario == "finding3_sweep":
        for amount in FINDING3_AMOUNTS:
            runs.append((f"finding3_sweep_n{amount}", replace(config, n_obs=amount), None))
    else:
        runs.append((config.scenario, config, None))

    failed = False
    for label, cfg, problem in runs:
        summary = run_suite(cfg, out=args.out, workers=args.workers, label=label, problem=problem)
        _print_finals(label, summary)
        failed |= bool(summary.failures)
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------- plot


def plot_series(scenario_dir: Path, metrics: list[str]) -> list[PlotSeries]:
    files = sorted(scenario_dir.glob("*/metrics.csv"))
    if not files:
        raise UsageError(f"no */metrics.csv files under {scenario_dir}")
    trajectories = {k: read_metrics_csv(f) for k, f in enumerate(files)}
    summary = aggregate(trajectories, scenario_dir.name)
    return [
        PlotSeries(m, summary.steps, summary.median[m], summary.q1[m], summary.q3[m]) for m in metrics
    ]


def _write_svg(series: PlotSeries, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "decoder-bcd"
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.fill_between(series.x, series.y_q1, series.y_q3, alpha=0.3, linewidth=0, label="IQR")
    ax.plot(series.x, series.y_median, linewidth=1.5, label="median")
    ax.set_xlabel("training step")
    ax.set_ylabel(METRIC_LABELS[series.name])
    ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_plot(args) -> int:
    requested = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in requested if m not in METRIC_ALIASES]
    if unknown:
        raise UsageError(f"unknown metric(s) {unknown}; choose from {sorted(METRIC_ALIASES)}")
    if args.format != "svg":
        raise UsageError("only --format svg is supported")
    src = Path(args.input)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    for series in plot_series(src, [METRIC_ALIASES[m] for m in requested]):
        with open(out / f"plot_{series.name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "median", "q1", "q3"])
            for row in zip(series.x, series.y_median, series.y_q1, series.y_q3):
                writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        _write_svg(series, out / f"{series.name}.{args.format}", src.name)
        print(f"wrote {out / f'{series.name}.{args.format}'}")
    return EXIT_OK


# ---------------------------------------------------------------- check-grads


def cmd_check_grads(args) -> int:
    if not 1e-7 <= args.h <= 1e-3:
        raise UsageError("--h must lie in [1e-7, 1e-3]")
    if args.d < 1 or args.D < args.d:
        raise UsageError("need d >= 1 and D >= d")
    problem = random_gradient_problem(args.d, args.D, np.random.default_rng(args.seed), n=args.n,
                                      supervised=args.supervised)
    report = check_gradients(**problem, h=args.h)
    print(json.dumps({**report.to_dict(), "h": args.h, "supervised": args.supervised,
                      "tolerance": GRAD_TOLERANCE, "backend": kernels.BACKEND}))
    return EXIT_OK if report.max_rel_err < GRAD_TOLERANCE else EXIT_NUMERIC


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decoder-bcd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic dataset directory")
    gen.add_argument("--d", type=int, default=6, help="latent dimension")
    gen.add_argument("--D", type=int, default=10, help="observed dimension")
    gen.add_argument("--er", type=float, default=2.0, help="expected ER edges per node")
    gen.add_argument("--sigma", type=float, default=0.1, help="true noise standard deviation")
    gen.add_argument("--n-obs", type=int, default=600, help="observational rows")
    gen.add_argument("--n-int", type=int, default=0, help="interventional rows")
    gen.add_argument("--node-mode", choices=("single", "multi"), default="single",
                     help="one node per set, or 2..d nodes per set")
    gen.add_argument("--value-mode", choices=("fixed", "uniform"), default="fixed",
                     help="intervention value distribution")
    gen.add_argument("--value", type=float, default=100.0, help="fixed intervention value")
    gen.add_argument("--lo", type=float, default=-10.0, help="uniform lower bound")
    gen.add_argument("--hi", type=float, default=10.0, help="uniform upper bound")
    gen.add_argument("--sets", type=int, default=20, help="intervention sets (must divide --n-int)")
    gen.add_argument("--seed", type=int, default=0, help="random seed")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    train = sub.add_parser("train", help="train on a preset scenario or a dataset directory")
    train.add_argument("--scenario", choices=SCENARIOS, help="built-in preset")
    train.add_argument("--data", help="dataset directory written by 'generate'")
    train.add_argument("--steps", type=int, help="training steps (default 5000)")
    train.add_argument("--lr", type=float, help="Adam learning rate (default 0.002)")
    train.add_argument("--seeds", type=int, default=20, help="run seeds 0..N-1")
    train.add_argument("--supervised", action="store_true", help="add the joint KL loss")
    train.add_argument("--mask", choices=("full", "single_edge"), help="learnable entries of L")
    train.add_argument("--eval-every", type=int, help="metric logging interval (default 50)")
    train.add_argument("--batch-size", type=int, help="rows per step (default: all)")
    train.add_argument("--kl-weight", type=float, help="weight of the joint KL loss (default 1)")
    train.add_argument("--workers", type=int, default=1, help="parallel seed processes")
    train.add_argument("--out", default="runs", help="output root directory")
    train.set_defaults(func=cmd_train)

    plot = sub.add_parser("plot", help="median/IQR curves per metric from a scenario directory")
    plot.add_argument("--in", dest="input", required=True, help="scenario directory")
    plot.add_argument("--metrics", default="eshd,auroc,mse_L,kl",
                      help="comma list from eshd, auroc, mse_L, kl, mse_X")
    plot.add_argument("--format", default="svg", help="image format (svg)")
    plot.add_argument("--out", help="output directory (default: the input directory)")
    plot.set_defaults(func=cmd_plot)

    grads = sub.add_parser("check-grads", help="compare analytic and finite-difference gradients")
    grads.add_argument("--d", type=int, default=3, help="latent dimension")
    grads.add_argument("--D", type=int, default=4, help="observed dimension")
    grads.add_argument("--n", type=int, default=8, help="batch rows")
    grads.add_argument("--supervised", action="store_true", help="include the joint KL term")
    grads.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    grads.add_argument("--seed", type=int, default=0, help="random seed")
    grads.set_defaults(func=cmd_check_grads)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"decoder-bcd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
