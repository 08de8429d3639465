"""Evaluation metrics over posterior samples: expected SHD, edge AUROC,
MSE of the edge matrix and KL(true || learned) between observational joints."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .graph_scm import GroundTruthScm, check_permutation
from .objective import JointTarget
from .posterior import PosteriorParams, sample_L_batch

TAU = 0.3
N_SAMPLES = 64
METRIC_NAMES = ("eshd", "auroc", "mse_L", "kl_true_learned", "mse_X")


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    eshd: float
    auroc: float
    mse_L: float
    kl_true_learned: float
    mse_X: float

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(astuple(self)[1:])))


def shd(g1: np.ndarray, g2: np.ndarray) -> int:
    """Structural Hamming distance; a reversed edge counts once."""
    g1 = np.asarray(g1) != 0
    g2 = np.asarray(g2) != 0
    if g1.shape != g2.shape or g1.ndim != 2 or g1.shape[0] != g1.shape[1]:
        raise ValueError(f"graphs must be square and equal-sized: {g1.shape} vs {g2.shape}")
    differs = (g1 != g2) | (g1.T != g2.T)
    return int(np.triu(differs, k=1).sum())


def _batched_shd(graphs: np.ndarray, g_gt: np.ndarray) -> np.ndarray:
    g_gt = np.asarray(g_gt) != 0
    differs = (graphs != g_gt) | (graphs.transpose(0, 2, 1) != g_gt.T)
    iu = np.triu_indices(g_gt.shape[0], k=1)
    return differs[:, iu[0], iu[1]].sum(axis=1)


def adjacency_batch(Ls: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Stack of ``W = (P L P^T)^T`` for an ``(S, d, d)`` stack of L."""
    order = check_permutation(perm, Ls.shape[-1])
    return Ls[:, order][:, :, order].transpose(0, 2, 1)


def binarize(Ws: np.ndarray, tau: float = TAU) -> np.ndarray:
    return np.abs(Ws) > tau


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUROC with ties counted half."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel() != 0
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _offdiag(d: int) -> np.ndarray:
    return ~np.eye(d, dtype=bool)


def _perm_of(params: PosteriorParams, perm) -> np.ndarray:
    return params.perm if perm is None else check_permutation(perm, params.d)


def expected_shd(
    params: PosteriorParams,
    perm,
    g_gt: np.ndarray,
    n_samples: int = N_SAMPLES,
    tau: float = TAU,
    rng: np.random.Generator | None = None,
) -> float:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    Ws = adjacency_batch(sample_L_batch(params, n_samples, rng), _perm_of(params, perm))
    return float(_batched_shd(binarize(Ws, tau), g_gt).mean())


def _edge_auroc_from(graphs: np.ndarray, g_gt: np.ndarray) -> float:
    off = _offdiag(g_gt.shape[0])
    freq = graphs.mean(axis=0)
    return auroc(freq[off], np.asarray(g_gt)[off] != 0)


def edge_auroc(
    params: PosteriorParams,
    perm,
    g_gt: np.ndarray,
    n_samples: int = N_SAMPLES,
    tau: float = TAU,
    rng: np.random.Generator | None = None,
) -> float:
    """AUROC of posterior edge frequencies over ordered off-diagonal pairs."""
    Ws = adjacency_batch(sample_L_batch(params, n_samples, rng), _perm_of(params, perm))
    return _edge_auroc_from(binarize(Ws, tau), g_gt)


def _mse_L_from(Ls: np.ndarray, L_gt: np.ndarray) -> float:
    rows, cols = np.tril_indices(L_gt.shape[0], k=-1)
    if rows.size == 0:
        return 0.0
    return float(np.mean((Ls[:, rows, cols] - L_gt[rows, cols]) ** 2))


def mse_edge_matrix(
    params: PosteriorParams,
    L_gt: np.ndarray,
    n_samples: int = N_SAMPLES,
    rng: np.random.Generator | None = None,
) -> float:
    return _mse_L_from(sample_L_batch(params, n_samples, rng), np.asarray(L_gt, dtype=float))


def _kl_true_learned_from(Ws: np.ndarray, sigma_hat: float, target: JointTarget) -> np.ndarray:
    # KL(p || q) with q^-1 = (I - W)(I - W)^T / sigma^2 and log det q = 2 d log sigma
    d = Ws.shape[-1]
    A = np.eye(d) - Ws
    trace = np.einsum("sij,jk,sik->s", A.transpose(0, 2, 1), target.cov, A.transpose(0, 2, 1))
    logdet_q = 2.0 * d * np.log(sigma_hat)
    return 0.5 * (trace / sigma_hat**2 - d + logdet_q - target.logdet)


def kl_true_learned(
    params: PosteriorParams,
    perm,
    scm: GroundTruthScm,
    n_samples: int = N_SAMPLES,
    rng: np.random.Generator | None = None,
) -> float:
    Ws = adjacency_batch(sample_L_batch(params, n_samples, rng), _perm_of(params, perm))
    return float(_kl_true_learned_from(Ws, params.sigma, JointTarget.from_scm(scm)).mean())


def evaluate_posterior(
    params: PosteriorParams,
    scm: GroundTruthScm,
    rng: np.random.Generator,
    step: int = 0,
    mse_X: float = float("nan"),
    n_samples: int = N_SAMPLES,
    tau: float = TAU,
    target: JointTarget | None = None,
) -> MetricsRecord:
    """All four metrics from one shared set of ``n_samples`` posterior draws."""
    Ls = sample_L_batch(params, n_samples, rng)
    Ws = adjacency_batch(Ls, params.perm)
    graphs = binarize(Ws, tau)
    g_gt = scm.graph
    target = JointTarget.from_scm(scm) if target is None else target
    return MetricsRecord(
        step=step,
        eshd=float(_batched_shd(graphs, g_gt).mean()),
        auroc=_edge_auroc_from(graphs, g_gt),
        mse_L=_mse_L_from(Ls, scm.L),
        kl_true_learned=float(_kl_true_learned_from(Ws, params.sigma, target).mean()),
        mse_X=float(mse_X),
    )


CSV_HEADER = ("step", "eshd", "auroc", "mse_L", "kl_true_learned", "mse_X")


def write_metrics_csv(path: str | Path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow([rec.step] + [repr(float(x)) for x in astuple(rec)[1:]])


def read_metrics_csv(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            MetricsRecord(
                step=int(row["step"]),
                **{f.name: float(row[f.name]) for f in fields(MetricsRecord) if f.name != "step"},
            )
            for row in reader
        ]
