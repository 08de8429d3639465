"""Variational posterior over the free edge weights, noise scale and the
linear decoder."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .graph_scm import (
    Mask,
    assemble_weighted_adjacency,
    check_edge_matrix,
    check_mask,
    check_permutation,
    topological_order,
    unpack_free_entries,
)
from .sampler import rollout

INIT_SCALE = 0.1


@dataclass(eq=False)
class PosteriorParams:
    """Mean-field Gaussian over the masked entries of L, a point estimate of
    the noise log-std, and a ``d x D`` decoder matrix.

    Entries of L outside ``mask`` are taken from ``fixed_L`` and never learned.
    """

    mu_L: np.ndarray
    log_scale_L: np.ndarray
    log_sigma: float
    decoder: np.ndarray
    mask: Mask
    fixed_L: np.ndarray
    perm: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.fixed_L = check_edge_matrix(self.fixed_L)
        d = self.fixed_L.shape[0]
        self.mask = check_mask(self.mask, d)
        self.perm = np.arange(d) if self.perm is None else check_permutation(self.perm, d)
        self.mu_L = np.asarray(self.mu_L, dtype=float).reshape(-1)
        self.log_scale_L = np.asarray(self.log_scale_L, dtype=float).reshape(-1)
        self.log_sigma = float(self.log_sigma)
        self.decoder = np.asarray(self.decoder, dtype=float)
        m = len(self.mask)
        if self.mu_L.shape != (m,) or self.log_scale_L.shape != (m,):
            raise ValueError(f"variational vectors must have length {m}")
        if self.decoder.ndim != 2 or self.decoder.shape[0] != d:
            raise ValueError(f"decoder must have {d} rows, got {self.decoder.shape}")

    @property
    def d(self) -> int:
        return self.fixed_L.shape[0]

    @property
    def D(self) -> int:
        return self.decoder.shape[1]

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    @property
    def mean_L(self) -> np.ndarray:
        return unpack_free_entries(self.mu_L, self.mask, self.fixed_L)

    def copy(self) -> "PosteriorParams":
        return replace(
            self,
            mu_L=self.mu_L.copy(),
            log_scale_L=self.log_scale_L.copy(),
            decoder=self.decoder.copy(),
            fixed_L=self.fixed_L.copy(),
            perm=self.perm.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "D": self.D,
            "mask": [list(p) for p in self.mask],
            "perm": self.perm.tolist(),
            "fixed_L": self.fixed_L.ravel().tolist(),
            "mu_L": self.mu_L.tolist(),
            "log_scale_L": self.log_scale_L.tolist(),
            "log_sigma": self.log_sigma,
            "decoder": self.decoder.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorParams":
        d, D = int(data["d"]), int(data["D"])
        return cls(
            mu_L=np.array(data["mu_L"], dtype=float),
            log_scale_L=np.array(data["log_scale_L"], dtype=float),
            log_sigma=float(data["log_sigma"]),
            decoder=np.array(data["decoder"], dtype=float).reshape(d, D),
            mask=tuple(tuple(p) for p in data["mask"]),
            fixed_L=np.array(data["fixed_L"], dtype=float).reshape(d, d),
            perm=np.array(data["perm"], dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class PosteriorSample:
    L_hat: np.ndarray
    sigma_hat: float
    eps_draw: np.ndarray


def init_posterior(
    mask: Mask,
    fixed_L: np.ndarray,
    d: int,
    D: int,
    rng: np.random.Generator,
    perm: np.ndarray | None = None,
) -> PosteriorParams:
    fixed_L = check_edge_matrix(fixed_L)
    if fixed_L.shape != (d, d):
        raise ValueError(f"fixed_L must be {d}x{d}")
    mask = check_mask(mask, d)
    m = len(mask)
    return PosteriorParams(
        mu_L=rng.normal(0.0, INIT_SCALE, size=m),
        log_scale_L=np.full(m, np.log(INIT_SCALE)),
        log_sigma=np.log(INIT_SCALE),
        decoder=rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, D)),
        mask=mask,
        fixed_L=fixed_L,
        perm=perm,
    )


def sample_from_eta(params: PosteriorParams, eta: np.ndarray) -> PosteriorSample:
    """Reparameterized draw: ``theta = mu + exp(log_scale) * eta``."""
    eta = np.asarray(eta, dtype=float)
    theta = params.mu_L + np.exp(params.log_scale_L) * eta
    return PosteriorSample(
        L_hat=unpack_free_entries(theta, params.mask, params.fixed_L),
        sigma_hat=params.sigma,
        eps_draw=eta,
    )


def sample_posterior(params: PosteriorParams, rng: np.random.Generator) -> PosteriorSample:
    return sample_from_eta(params, rng.standard_normal(len(params.mask)))


def sample_L_batch(params: PosteriorParams, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """``n_samples`` draws of L stacked into an ``(n_samples, d, d)`` array."""
    eta = rng.standard_normal((n_samples, len(params.mask)))
    Ls = np.broadcast_to(params.fixed_L, (n_samples, params.d, params.d)).copy()
    if params.mask:
        rows, cols = map(list, zip(*params.mask))
        Ls[:, rows, cols] = params.mu_L + np.exp(params.log_scale_L) * eta
    return Ls


def decode(z_batch: np.ndarray, params: PosteriorParams) -> np.ndarray:
    z_batch = np.atleast_2d(np.asarray(z_batch, dtype=float))
    if z_batch.shape[1] != params.d:
        raise ValueError(f"latent batch has {z_batch.shape[1]} columns, decoder expects {params.d}")
    return z_batch @ params.decoder


@dataclass(frozen=True, eq=False)
class NoiseDraws:
    """Every random input of one forward pass.

    Freezing these turns the loss into a deterministic function of the
    variational parameters.
    """

    eta: np.ndarray
    noise: np.ndarray

    @classmethod
    def draw(cls, params: PosteriorParams, n_rows: int, rng: np.random.Generator) -> "NoiseDraws":
        eta = rng.standard_normal(len(params.mask))
        noise = rng.standard_normal((n_rows, params.d))
        return cls(eta=eta, noise=noise)


@dataclass(frozen=True, eq=False)
class ForwardPass:
    z_hat: np.ndarray
    X_hat: np.ndarray
    sample: PosteriorSample
    W_hat: np.ndarray
    topo: np.ndarray


def forward_with_draws(
    params: PosteriorParams, mask: np.ndarray, values: np.ndarray, draws: NoiseDraws
) -> ForwardPass:
    """Sample, assemble W, roll out latents honouring each row's intervention
    labels, and decode. One posterior sample is shared by all rows."""
    mask = np.atleast_2d(np.asarray(mask, dtype=np.uint8))
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if mask.shape[0] < 1:
        raise ValueError("batch must contain at least one row")
    sample = sample_from_eta(params, draws.eta)
    W_hat = assemble_weighted_adjacency(params.perm, sample.L_hat)
    topo = topological_order(params.perm)
    z_hat = rollout(W_hat, sample.sigma_hat, draws.noise, mask, values, topo)
    return ForwardPass(z_hat, decode(z_hat, params), sample, W_hat, topo)


def forward(
    params: PosteriorParams, mask: np.ndarray, values: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, PosteriorSample]:
    draws = NoiseDraws.draw(params, np.atleast_2d(mask).shape[0], rng)
    fp = forward_with_draws(params, mask, values, draws)
    return fp.z_hat, fp.X_hat, fp.sample
