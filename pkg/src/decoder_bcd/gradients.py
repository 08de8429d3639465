"""Exact gradients of the training loss, a finite-difference checker and an
Adam optimizer over the flat parameter vector.

With every random input frozen (posterior ``eta``, rollout noise, the
intervention labels) the pipeline

    theta -> L_hat -> W_hat -> z_hat -> X_hat -> MSE (+ joint KL)

is smooth, so the reverse pass is written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .graph_scm import edge_matrix_from_adjacency
from .objective import JointTarget, LossBreakdown, scm_kl_to_target
from .posterior import ForwardPass, NoiseDraws, PosteriorParams, forward_with_draws


@dataclass(frozen=True)
class ParamLayout:
    n_free: int
    d: int
    D: int

    @classmethod
    def of(cls, params: PosteriorParams) -> "ParamLayout":
        return cls(len(params.mask), params.d, params.D)

    @property
    def size(self) -> int:
        return 2 * self.n_free + 1 + self.d * self.D

    def slices(self) -> dict[str, slice]:
        m = self.n_free
        return {
            "mu_L": slice(0, m),
            "log_scale_L": slice(m, 2 * m),
            "log_sigma": slice(2 * m, 2 * m + 1),
            "decoder": slice(2 * m + 1, self.size),
        }


def flatten(params: PosteriorParams) -> np.ndarray:
    return np.concatenate(
        [params.mu_L, params.log_scale_L, [params.log_sigma], params.decoder.ravel()]
    )


def unflatten(template: PosteriorParams, vec: np.ndarray) -> PosteriorParams:
    """New params carrying ``vec``'s learnable values and ``template``'s
    mask, fixed entries and permutation."""
    layout = ParamLayout.of(template)
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (layout.size,):
        raise ValueError(f"expected a vector of length {layout.size}, got {vec.shape}")
    s = layout.slices()
    return PosteriorParams(
        mu_L=vec[s["mu_L"]].copy(),
        log_scale_L=vec[s["log_scale_L"]].copy(),
        log_sigma=float(vec[s["log_sigma"]][0]),
        decoder=vec[s["decoder"]].reshape(layout.d, layout.D).copy(),
        mask=template.mask,
        fixed_L=template.fixed_L,
        perm=template.perm,
    )


def kl_gradient(W_hat: np.ndarray, sigma_hat: float, target: JointTarget) -> tuple[float, np.ndarray, float]:
    """Joint KL plus its gradients with respect to ``W_hat`` and ``log sigma_hat``."""
    d = W_hat.shape[0]
    B = np.linalg.inv(np.eye(d) - W_hat)
    BS = B @ target.precision
    trace = float(np.sum(BS * B))
    s2 = sigma_hat**2
    kl = 0.5 * (s2 * trace - d + target.logdet - 2.0 * d * np.log(sigma_hat))
    grad_W = s2 * (B.T @ BS @ B.T)
    grad_log_sigma = s2 * trace - d
    return float(kl), grad_W, float(grad_log_sigma)


def evaluate_loss(
    params: PosteriorParams,
    X: np.ndarray,
    mask: np.ndarray,
    values: np.ndarray,
    draws: NoiseDraws,
    target: JointTarget | None = None,
    kl_weight: float = 1.0,
) -> tuple[LossBreakdown, ForwardPass]:
    """Loss at ``params`` with frozen draws; ``target=None`` means unsupervised."""
    fp = forward_with_draws(params, mask, values, draws)
    mse = float(np.mean((fp.X_hat - X) ** 2))
    kl = 0.0
    if target is not None:
        kl = scm_kl_to_target(fp.W_hat, fp.sample.sigma_hat, target)
    return LossBreakdown(mse, kl, mse + kl_weight * kl), fp


def loss_and_grad(
    params: PosteriorParams,
    X: np.ndarray,
    mask: np.ndarray,
    values: np.ndarray,
    draws: NoiseDraws,
    target: JointTarget | None = None,
    kl_weight: float = 1.0,
) -> tuple[LossBreakdown, np.ndarray]:
    X = np.asarray(X, dtype=float)
    fp = forward_with_draws(params, mask, values, draws)
    n, D = X.shape
    resid = fp.X_hat - X
    mse = float(np.mean(resid**2))
    grad_X = (2.0 / (n * D)) * resid
    grad_decoder = fp.z_hat.T @ grad_X
    grad_Z = grad_X @ params.decoder.T
    sigma_hat = fp.sample.sigma_hat
    grad_W, grad_sigma = kernels.rollout_backward(
        fp.W_hat, fp.topo, sigma_hat, draws.noise, np.asarray(mask, dtype=np.uint8), fp.z_hat, grad_Z
    )
    grad_log_sigma = grad_sigma * sigma_hat
    kl = 0.0
    if target is not None:
        kl, kl_W, kl_log_sigma = kl_gradient(fp.W_hat, sigma_hat, target)
        grad_W = grad_W + kl_weight * kl_W
        grad_log_sigma += kl_weight * kl_log_sigma

    grad_L = edge_matrix_from_adjacency(params.perm, grad_W)
    if params.mask:
        rows, cols = map(list, zip(*params.mask))
        grad_theta = grad_L[rows, cols]
    else:
        grad_theta = np.zeros(0)
    grad_log_scale = grad_theta * np.exp(params.log_scale_L) * draws.eta
    grad = np.concatenate([grad_theta, grad_log_scale, [grad_log_sigma], grad_decoder.ravel()])
    return LossBreakdown(mse, kl, mse + kl_weight * kl), grad


def grad_total_loss(params, X, mask, values, draws, target=None, kl_weight=1.0) -> np.ndarray:
    return loss_and_grad(params, X, mask, values, draws, target, kl_weight)[1]


@dataclass(frozen=True)
class GradReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_err: float

    def to_dict(self) -> dict:
        return {
            "analytic": self.analytic.tolist(),
            "numeric": self.numeric.tolist(),
            "max_rel_err": self.max_rel_err,
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    errs = np.abs(analytic - numeric) / denom
    return float(errs.max()) if errs.size else 0.0


def check_gradients(
    params: PosteriorParams,
    X: np.ndarray,
    mask: np.ndarray,
    values: np.ndarray,
    draws: NoiseDraws,
    target: JointTarget | None = None,
    h: float = 1e-5,
    kl_weight: float = 1.0,
) -> GradReport:
    """Central differences over every coordinate with the same frozen draws."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    analytic = grad_total_loss(params, X, mask, values, draws, target, kl_weight)
    base = flatten(params)
    numeric = np.empty_like(base)
    for k in range(base.size):
        shifted = base.copy()
        shifted[k] = base[k] + h
        up = evaluate_loss(unflatten(params, shifted), X, mask, values, draws, target, kl_weight)[0].total
        shifted[k] = base[k] - h
        down = evaluate_loss(unflatten(params, shifted), X, mask, values, draws, target, kl_weight)[0].total
        numeric[k] = (up - down) / (2.0 * h)
    return GradReport(analytic, numeric, relative_error(analytic, numeric))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    @classmethod
    def from_dict(cls, data: dict) -> "AdamState":
        return cls(np.array(data["m"], dtype=float), np.array(data["v"], dtype=float), int(data["t"]))


def optimizer_step(
    vec: np.ndarray, grad: np.ndarray, lr: float, state: AdamState
) -> tuple[np.ndarray, AdamState]:
    """One Adam update on a flat parameter vector; ``state`` is not mutated."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_vec = vec - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_vec, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def step_params(
    params: PosteriorParams, grad: np.ndarray, lr: float, state: AdamState
) -> tuple[PosteriorParams, AdamState]:
    new_vec, state = optimizer_step(flatten(params), grad, lr, state)
    return unflatten(params, new_vec), state


def random_gradient_problem(
    d: int, D: int, rng: np.random.Generator, n: int = 8, supervised: bool = False
) -> dict:
    """A random (params, batch, frozen draws) bundle for gradient checks.

    Mixes observational rows with multi-node uniform interventions, a random
    permutation and moderately spread variational parameters so that every
    coordinate carries a non-trivial gradient.
    """
    from .graph_scm import GroundTruthScm, full_mask, sample_ground_truth
    from .posterior import init_posterior
    from .sampler import UniformValue, generate_dataset

    perm = rng.permutation(d)
    # complete DAG: (d - 1) / 2 edges per node fills every slot
    truth = sample_ground_truth(d, D, (d - 1) / 2 if d > 1 else 1.0, 0.1 + rng.random(), rng)
    scm = GroundTruthScm(L=truth.L, sigma=truth.sigma, proj=truth.proj, perm=perm)
    n_int = n // 2 if d >= 2 else 0
    sets = max(1, n_int // 2)
    data = generate_dataset(scm, n - n_int, n_int, "multi" if d >= 2 else "single",
                            UniformValue(-2.0, 2.0), sets=sets, rng=rng)
    mask = full_mask(d)
    params = init_posterior(mask, np.zeros((d, d)), d, D, rng, perm=perm)
    params.mu_L = rng.normal(0.0, 1.0, len(mask))
    params.log_scale_L = rng.normal(-1.0, 0.5, len(mask))
    params.log_sigma = float(rng.normal(-1.0, 0.5))
    return {
        "params": params,
        "X": data.X,
        "mask": data.mask,
        "values": data.values,
        "draws": NoiseDraws.draw(params, data.n, rng),
        "target": JointTarget.from_scm(scm) if supervised else None,
    }
