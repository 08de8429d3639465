"""Reconstruction loss, Gaussian KL and the supervised joint-KL term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .graph_scm import GroundTruthScm, assemble_weighted_adjacency
from .posterior import PosteriorSample
from .sampler import GaussianJoint, observational_joint


@dataclass(frozen=True)
class LossBreakdown:
    mse_x: float
    kl_joint: float
    total: float


def mse_loss(X: np.ndarray, X_hat: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    X_hat = np.asarray(X_hat, dtype=float)
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {X_hat.shape}")
    return float(np.mean((X_hat - X) ** 2))


def _cholesky(cov: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{name} covariance is not positive definite") from exc


def gaussian_kl(q: GaussianJoint, p: GaussianJoint) -> float:
    """Closed-form ``KL(q || p)`` between multivariate normals."""
    if q.d != p.d:
        raise ValueError(f"dimension mismatch: {q.d} vs {p.d}")
    chol_q = _cholesky(q.cov, "q")
    chol_p = _cholesky(p.cov, "p")
    # tr(Sp^-1 Sq) = ||Lp^-1 Lq||_F^2
    M = solve_triangular(chol_p, chol_q, lower=True)
    diff = solve_triangular(chol_p, p.mu - q.mu, lower=True)
    logdet_p = 2.0 * np.sum(np.log(np.diag(chol_p)))
    logdet_q = 2.0 * np.sum(np.log(np.diag(chol_q)))
    return float(0.5 * (np.sum(M**2) + diff @ diff - q.d + logdet_p - logdet_q))


@dataclass(frozen=True, eq=False)
class JointTarget:
    """Precomputed zero-mean Gaussian target for repeated KL evaluation."""

    cov: np.ndarray
    precision: np.ndarray
    logdet: float

    @classmethod
    def from_joint(cls, joint: GaussianJoint) -> "JointTarget":
        chol = _cholesky(joint.cov, "target")
        precision = cho_solve((chol, True), np.eye(joint.d))
        return cls(joint.cov, 0.5 * (precision + precision.T), 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @classmethod
    def from_scm(cls, scm: GroundTruthScm) -> "JointTarget":
        return cls.from_joint(observational_joint(scm.W, scm.sigma))


def scm_kl_to_target(W_hat: np.ndarray, sigma_hat: float, target: JointTarget) -> float:
    """``KL(N(0, Sigma(W_hat, sigma_hat)) || target)`` without factorizing.

    For acyclic W with zero diagonal, ``det(I - W) = 1`` so the model's log
    determinant is ``2 d log sigma_hat``.
    """
    d = W_hat.shape[0]
    B = np.linalg.inv(np.eye(d) - W_hat)
    trace = sigma_hat**2 * np.sum((B @ target.precision) * B)
    return float(0.5 * (trace - d + target.logdet - 2.0 * d * np.log(sigma_hat)))


def supervised_kl(sample: PosteriorSample, perm: np.ndarray, scm: GroundTruthScm) -> float:
    """KL from the sampled model's observational joint to the true one."""
    W_hat = assemble_weighted_adjacency(perm, sample.L_hat)
    q = observational_joint(W_hat, sample.sigma_hat)
    p = observational_joint(scm.W, scm.sigma)
    return gaussian_kl(q, p)


def total_loss(
    X: np.ndarray,
    X_hat: np.ndarray,
    supervised: bool = False,
    kl_joint: float = 0.0,
    kl_weight: float = 1.0,
) -> LossBreakdown:
    mse = mse_loss(X, X_hat)
    kl = float(kl_joint) if supervised else 0.0
    return LossBreakdown(mse_x=mse, kl_joint=kl, total=mse + kl_weight * kl)
