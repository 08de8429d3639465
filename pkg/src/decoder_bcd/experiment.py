"""Training loop, scenario presets and multi-seed suites."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .gradients import AdamState, flatten, loss_and_grad, step_params
from .graph_scm import GroundTruthScm, full_mask, sample_ground_truth, single_edge_mask
from .metrics import METRIC_NAMES, MetricsRecord, evaluate_posterior, read_metrics_csv, write_metrics_csv
from .objective import JointTarget
from .posterior import NoiseDraws, PosteriorParams, forward_with_draws, init_posterior
from .sampler import Dataset, FixedValue, UniformValue, generate_dataset

log = logging.getLogger(__name__)

SCENARIOS = (
    "finding1",
    "finding2_obs",
    "finding2_mixed",
    "finding3_sweep",
    "finding4_fixed",
    "finding4_uniform",
    "custom",
)
FINDING3_AMOUNTS = (600, 1800, 3600)

# Independent random streams spawned from each run seed.
_SCM, _DATA, _INIT, _TRAIN, _EVAL = range(5)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "custom"
    d: int = 6
    D: int = 10
    er_edges_per_node: float = 2.0
    sigma_gt: float = 0.1
    steps: int = 5000
    lr: float = 0.002
    seeds: tuple[int, ...] = tuple(range(20))
    n_obs: int = 600
    n_int: int = 0
    node_mode: str = "single"
    value_mode: str = "fixed"
    value: float = 100.0
    lo: float = -10.0
    hi: float = 10.0
    sets: int = 20
    supervised: bool = False
    mask_mode: str = "full"
    batch_size: int | None = None
    eval_every: int = 50
    kl_weight: float = 1.0
    n_eval_samples: int = 64
    tau: float = 0.3

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.mask_mode not in ("full", "single_edge"):
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        if self.value_mode not in ("fixed", "uniform"):
            raise ValueError(f"unknown value mode {self.value_mode!r}")
        if self.steps < 0 or self.eval_every < 1 or self.lr <= 0:
            raise ValueError("need steps >= 0, eval_every >= 1 and lr > 0")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def intervention_values(self):
        if self.value_mode == "fixed":
            return FixedValue(self.value)
        return UniformValue(self.lo, self.hi)

    def mask(self):
        return full_mask(self.d) if self.mask_mode == "full" else single_edge_mask(self.d)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return cls(**data)


def preset(scenario: str, **overrides) -> ExperimentConfig:
    """Named scenario presets on top of the defaults: d=6, D=10, ER-2, sigma 0.1, 5000 steps, lr 0.002."""
    base = {
        "finding1": dict(supervised=True, n_obs=600, n_int=0, mask_mode="full"),
        "finding2_obs": dict(n_obs=1800, n_int=0, mask_mode="single_edge"),
        "finding2_mixed": dict(
            n_obs=900, n_int=900, node_mode="single", value_mode="fixed",
            value=100.0, mask_mode="single_edge",
        ),
        "finding3_sweep": dict(n_obs=FINDING3_AMOUNTS[0], n_int=0, mask_mode="full"),
        "finding4_fixed": dict(
            n_obs=300, n_int=3300, node_mode="multi", value_mode="fixed", value=100.0,
        ),
        "finding4_uniform": dict(
            n_obs=300, n_int=3300, node_mode="multi", value_mode="uniform", lo=-10.0, hi=10.0,
        ),
        "custom": {},
    }
    if scenario not in base:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    return ExperimentConfig(scenario=scenario, **{**base[scenario], **overrides})


@dataclass(eq=False)
class RunResult:
    config: ExperimentConfig
    seed: int
    records: list[MetricsRecord]
    params: PosteriorParams
    checkpoint: dict
    seconds: float
    status: str = "complete"
    message: str = ""

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def build_problem(config: ExperimentConfig, seed: int) -> tuple[GroundTruthScm, Dataset]:
    """Ground truth and dataset for one seed.

    The observational block depends only on (seed, n_obs), so runs that
    differ in ``n_int`` share it bit for bit.
    """
    rngs = _streams(seed)
    ensure = config.mask() if config.mask_mode == "single_edge" else ()
    scm = sample_ground_truth(
        config.d, config.D, config.er_edges_per_node, config.sigma_gt, rngs[_SCM], ensure_edges=ensure
    )
    data = generate_dataset(
        scm, config.n_obs, config.n_int, config.node_mode, config.intervention_values(),
        config.sets, rngs[_DATA],
    )
    return scm, data


def initial_posterior(config: ExperimentConfig, scm: GroundTruthScm, rng: np.random.Generator) -> PosteriorParams:
    mask = config.mask()
    fixed = scm.L.copy()
    for i, j in mask:
        fixed[i, j] = 0.0
    return init_posterior(mask, fixed, config.d, config.D, rng, perm=scm.perm)


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def run_training(
    config: ExperimentConfig,
    seed: int,
    resume: dict | None = None,
    scm: GroundTruthScm | None = None,
    data: Dataset | None = None,
    stop_at: int | None = None,
    init: PosteriorParams | None = None,
) -> RunResult:
    """Train the posterior for ``config.steps`` Adam steps.

    Every ``eval_every`` steps (and once after the last) a metrics record is
    taken from fresh posterior draws. ``resume`` is a checkpoint produced by
    an earlier call; training then continues bitwise as if uninterrupted.
    ``stop_at`` halts after that many steps (status ``"partial"``, no final
    record) to produce such a checkpoint. ``init`` replaces the random
    initial posterior.
    """
    t0 = time.perf_counter()
    rngs = _streams(seed)
    if scm is None or data is None:
        scm, data = build_problem(config, seed)
    target = JointTarget.from_scm(scm)
    kl_target = target if config.supervised else None

    if resume is None:
        params = initial_posterior(config, scm, rngs[_INIT]) if init is None else init.copy()
        state = AdamState.zeros(flatten(params).size)
        start, records = 0, []
        train_rng, eval_rng = rngs[_TRAIN], rngs[_EVAL]
    else:
        params = PosteriorParams.from_dict(resume["params"])
        state = AdamState.from_dict(resume["adam"])
        start = int(resume["step"])
        records = [MetricsRecord(**r) for r in resume.get("records", [])]
        train_rng = _restore_rng(resume["train_rng"])
        eval_rng = _restore_rng(resume["eval_rng"])

    n = data.n
    batch = n if config.batch_size is None else min(config.batch_size, n)
    stop = config.steps if stop_at is None else min(stop_at, config.steps)
    status, message = ("complete" if stop == config.steps else "partial"), ""
    for step in range(start, stop):
        if batch < n:
            rows = np.sort(train_rng.choice(n, size=batch, replace=False))
            X, mask, values = data.X[rows], data.mask[rows], data.values[rows]
        else:
            X, mask, values = data.X, data.mask, data.values
        draws = NoiseDraws.draw(params, X.shape[0], train_rng)
        loss, grad = loss_and_grad(params, X, mask, values, draws, kl_target, config.kl_weight)
        if not (np.isfinite(loss.total) and np.all(np.isfinite(grad))):
            status = "nonfinite"
            message = f"non-finite loss or gradient at step {step}: {loss}"
            log.warning("seed %d: %s", seed, message)
            # diagnostic record at the failing step; mse_X carries the bad value
            records.append(
                evaluate_posterior(
                    params, scm, eval_rng, step, loss.mse_x, config.n_eval_samples, config.tau, target
                )
            )
            break
        if step % config.eval_every == 0:
            records.append(
                evaluate_posterior(
                    params, scm, eval_rng, step, loss.mse_x, config.n_eval_samples, config.tau, target
                )
            )
        params, state = step_params(params, grad, config.lr, state)
    else:
        step = max(start, stop)

    if status == "complete" and (not records or records[-1].step != config.steps):
        draws = NoiseDraws.draw(params, n, eval_rng)
        mse_x = float(np.mean((forward_with_draws(params, data.mask, data.values, draws).X_hat - data.X) ** 2))
        records.append(
            evaluate_posterior(params, scm, eval_rng, config.steps, mse_x, config.n_eval_samples, config.tau, target)
        )
    checkpoint = {
        "step": step,
        "params": params.to_dict(),
        "adam": state.to_dict(),
        "train_rng": _rng_state(train_rng),
        "eval_rng": _rng_state(eval_rng),
        "records": [asdict(r) for r in records],
    }
    return RunResult(config, seed, records, params, checkpoint, time.perf_counter() - t0, status, message)


# ---------------------------------------------------------------- suites


@dataclass(eq=False)
class SuiteSummary:
    scenario: str
    steps: np.ndarray
    median: dict[str, np.ndarray]
    q1: dict[str, np.ndarray]
    q3: dict[str, np.ndarray]
    finals: dict[int, MetricsRecord] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)

    def final_median(self, metric: str) -> float:
        return float(np.median([getattr(r, metric) for r in self.finals.values()]))


def aggregate(trajectories: dict[int, list[MetricsRecord]], scenario: str = "") -> SuiteSummary:
    """Per-step median and interquartile range across seeds."""
    steps = sorted({r.step for recs in trajectories.values() for r in recs})
    median, q1, q3 = {}, {}, {}
    if not steps:
        empty = {name: np.zeros(0) for name in METRIC_NAMES}
        return SuiteSummary(scenario, np.zeros(0, dtype=int), empty, dict(empty), dict(empty))
    for name in METRIC_NAMES:
        table = np.full((len(trajectories), len(steps)), np.nan)
        for row, recs in enumerate(trajectories.values()):
            for rec in recs:
                table[row, steps.index(rec.step)] = getattr(rec, name)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns stay NaN
            q1[name], median[name], q3[name] = np.nanpercentile(table, [25, 50, 75], axis=0)
    finals = {seed: recs[-1] for seed, recs in trajectories.items() if recs}
    return SuiteSummary(scenario, np.array(steps), median, q1, q3, finals)


def write_summary_csv(path: str | Path, summary: SuiteSummary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["step"]
        for name in METRIC_NAMES:
            header += [f"{name}_median", f"{name}_q1", f"{name}_q3"]
        writer.writerow(header)
        for k, step in enumerate(summary.steps):
            row = [int(step)]
            for name in METRIC_NAMES:
                row += [repr(float(a[name][k])) for a in (summary.median, summary.q1, summary.q3)]
            writer.writerow(row)


def _run_one(args) -> RunResult:
    config, seed, problem = args
    scm, data = problem if problem is not None else (None, None)
    return run_training(config, seed, scm=scm, data=data)


def _write_run(run_dir: Path, result: RunResult) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(run_dir / "metrics.csv", result.records)
    (run_dir / "checkpoint.json").write_text(json.dumps(result.checkpoint))
    manifest = {
        "config": result.config.to_dict(),
        "seed": result.seed,
        "status": result.status,
        "message": result.message,
        "seconds": result.seconds,
        "backend": kernels.BACKEND,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _completed(run_dir: Path, config: ExperimentConfig) -> list[MetricsRecord] | None:
    manifest_path = run_dir / "manifest.json"
    if not (manifest_path.exists() and (run_dir / "metrics.csv").exists()):
        return None
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("config") != config.to_dict() or manifest.get("status") != "complete":
        return None
    return read_metrics_csv(run_dir / "metrics.csv")


def run_suite(
    config: ExperimentConfig,
    seeds: Sequence[int] | None = None,
    out: str | Path | None = None,
    workers: int = 1,
    label: str | None = None,
    problem: tuple[GroundTruthScm, Dataset] | None = None,
) -> SuiteSummary:
    """Run every seed and aggregate.

    With ``out`` set, each seed writes ``<out>/<label>/<seed>/`` and seeds
    whose manifest already records a completed run with this exact config
    are loaded instead of retrained. ``problem`` pins one (scm, dataset) pair
    for every seed; otherwise each seed draws its own.
    """
    seeds = list(config.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    label = label or config.scenario
    base = Path(out) / label if out is not None else None
    trajectories: dict[int, list[MetricsRecord]] = {}
    failures: dict[int, str] = {}
    todo = []
    for seed in seeds:
        done = _completed(base / str(seed), config) if base is not None else None
        if done is not None:
            trajectories[seed] = done
        else:
            todo.append(seed)

    def collect(seed: int, result: RunResult | None, error: str = "") -> None:
        if result is not None and base is not None:
            _write_run(base / str(seed), result)
        if result is None:
            failures[seed] = error
        elif result.status != "complete":
            failures[seed] = result.message
        if result is not None:
            trajectories[seed] = result.records

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {seed: pool.submit(_run_one, (config, seed, problem)) for seed in todo}
            for seed, fut in futures.items():
                try:
                    collect(seed, fut.result())
                except Exception as exc:  # noqa: BLE001 - one seed must not sink the suite
                    collect(seed, None, repr(exc))
    else:
        for seed in todo:
            try:
                collect(seed, _run_one((config, seed, problem)))
            except Exception as exc:  # noqa: BLE001
                log.exception("seed %d failed", seed)
                collect(seed, None, repr(exc))

    ordered = {seed: trajectories[seed] for seed in seeds if seed in trajectories}
    summary = aggregate(ordered, label)
    summary.failures = failures
    if base is not None:
        base.mkdir(parents=True, exist_ok=True)
        write_summary_csv(base / "summary.csv", summary)
    return summary


def sweep_interventional(config: ExperimentConfig, int_budgets: Sequence[int], seed: int) -> list[RunResult]:
    """Retrain from scratch per budget; the observational block is shared."""
    budgets = list(int_budgets)
    if budgets != sorted(budgets):
        raise ValueError("budgets must be ascending")
    return [run_training(replace(config, n_int=int(b)), seed) for b in budgets]


def sweep_observational(
    config: ExperimentConfig, amounts: Sequence[int] = FINDING3_AMOUNTS, seed: int = 0
) -> list[RunResult]:
    return [run_training(replace(config, n_obs=int(a), n_int=0), seed) for a in amounts]
