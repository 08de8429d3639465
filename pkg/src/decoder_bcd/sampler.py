"""Ancestral sampling, do-interventions, projection and the closed-form
observational joint of a linear-Gaussian SCM."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Union

import numpy as np

from . import kernels
from .graph_scm import GraphError, GroundTruthScm, kahn_order

NodeMode = Literal["single", "multi"]


@dataclass(frozen=True)
class FixedValue:
    value: float

    def draw(self, size, rng: np.random.Generator) -> np.ndarray:
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class UniformValue:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"uniform interval needs lo < hi, got [{self.lo}, {self.hi}]")

    def draw(self, size, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=size)


ValueMode = Union[FixedValue, UniformValue]


@dataclass(frozen=True)
class InterventionSpec:
    targets: frozenset[int] = frozenset()
    value_mode: ValueMode = FixedValue(100.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", frozenset(int(t) for t in self.targets))


@dataclass(frozen=True)
class GaussianJoint:
    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mu.size, mu.size):
            raise ValueError(f"covariance {cov.shape} does not match mean of length {mu.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mu.size

    def cholesky(self) -> np.ndarray:
        if not np.allclose(self.cov, self.cov.T, rtol=1e-10, atol=1e-12):
            raise np.linalg.LinAlgError("covariance is not symmetric")
        return np.linalg.cholesky(self.cov)


@dataclass(eq=False)
class Dataset:
    """Observations plus per-row intervention labels.

    ``z_eval`` holds the true latents and is only read by evaluation code.
    """

    X: np.ndarray
    mask: np.ndarray
    values: np.ndarray
    z_eval: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        self.values = np.where(self.mask, np.asarray(self.values, dtype=float), 0.0)
        if not (self.X.shape[0] == self.mask.shape[0] == self.values.shape[0]):
            raise ValueError("X, mask and values must have the same row count")
        if self.mask.shape != self.values.shape:
            raise ValueError("mask and values must have the same shape")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.mask.shape[1]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def observational(self) -> np.ndarray:
        return ~self.mask.any(axis=1)

    def save(self, directory: str | Path, scm: GroundTruthScm | None = None) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        fmt = "%.17g"
        header = ",".join(f"x{k}" for k in range(self.D))
        np.savetxt(out / "data.csv", self.X, fmt=fmt, delimiter=",", header=header, comments="")
        header = ",".join([f"m{k}" for k in range(self.d)] + [f"v{k}" for k in range(self.d)])
        labels = np.hstack([self.mask.astype(float), self.values])
        np.savetxt(out / "labels.csv", labels, fmt=fmt, delimiter=",", header=header, comments="")
        if self.z_eval is not None:
            header = ",".join(f"z{k}" for k in range(self.d))
            np.savetxt(out / "latents.csv", self.z_eval, fmt=fmt, delimiter=",", header=header, comments="")
        (out / "manifest.json").write_text(json.dumps(self.manifest, indent=1, sort_keys=True))
        if scm is not None:
            scm.save(out / "scm.json")
        return out

    @classmethod
    def load(cls, directory: str | Path) -> "Dataset":
        src = Path(directory)
        X = np.loadtxt(src / "data.csv", delimiter=",", skiprows=1, ndmin=2)
        labels = np.loadtxt(src / "labels.csv", delimiter=",", skiprows=1, ndmin=2)
        d = labels.shape[1] // 2
        z_eval = None
        if (src / "latents.csv").exists():
            z_eval = np.loadtxt(src / "latents.csv", delimiter=",", skiprows=1, ndmin=2)
        manifest = {}
        if (src / "manifest.json").exists():
            manifest = json.loads((src / "manifest.json").read_text())
        return cls(X=X, mask=labels[:, :d], values=labels[:, d:], z_eval=z_eval, manifest=manifest)


def _check_targets(targets: Iterable[int], d: int) -> list[int]:
    targets = sorted({int(t) for t in targets})
    for t in targets:
        if not 0 <= t < d:
            raise GraphError(f"intervention target {t} out of range for d={d}")
    return targets


def mutate_for_intervention(W: np.ndarray, targets: Iterable[int]) -> np.ndarray:
    """Zero the incoming-edge column of every target node."""
    W = np.array(W, dtype=float, copy=True)
    W[:, _check_targets(targets, W.shape[0])] = 0.0
    return W


def _order_or_raise(W: np.ndarray) -> np.ndarray:
    topo = kahn_order(W)
    if topo is None:
        raise GraphError("weighted adjacency has a directed cycle")
    return topo


def rollout(
    W: np.ndarray,
    sigma: float,
    noise: np.ndarray,
    mask: np.ndarray | None = None,
    values: np.ndarray | None = None,
    topo: np.ndarray | None = None,
) -> np.ndarray:
    """Deterministic batched ancestral sampling given standard-normal ``noise``.

    Rows with ``mask[r, i]`` set have node ``i`` clamped to ``values[r, i]``
    (no added noise); all other nodes follow ``z = W^T z + sigma * noise``.
    """
    W = np.asarray(W, dtype=float)
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    if topo is None:
        topo = _order_or_raise(W)
    if mask is None:
        mask = np.zeros(noise.shape, dtype=np.uint8)
        values = np.zeros(noise.shape)
    return kernels.rollout(W, topo, float(sigma), noise, mask, values)


def ancestral_sample(
    W: np.ndarray,
    sigma: float,
    spec: InterventionSpec,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Latent draw(s) from the SCM under ``do(spec.targets)``.

    Returns a length-d vector, or ``(size, d)`` rows when ``size`` is given.
    Uniform intervention values are redrawn per row.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = np.shape(W)[0]
    targets = _check_targets(spec.targets, d)
    W_tilde = mutate_for_intervention(W, targets)
    topo = _order_or_raise(W_tilde)
    n = 1 if size is None else int(size)
    noise = rng.standard_normal((n, d))
    mask = np.zeros((n, d), dtype=np.uint8)
    values = np.zeros((n, d))
    mask[:, targets] = 1
    values[:, targets] = spec.value_mode.draw((n, len(targets)), rng)
    z = rollout(W_tilde, sigma, noise, mask, values, topo)
    return z[0] if size is None else z


def observational_joint(W: np.ndarray, sigma: float) -> GaussianJoint:
    """``N(0, (I - W)^{-T} sigma^2 (I - W)^{-1})``."""
    W = np.asarray(W, dtype=float)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if kahn_order(W) is None:
        raise GraphError("weighted adjacency has a directed cycle")
    d = W.shape[0]
    B = np.linalg.inv(np.eye(d) - W)
    cov = sigma**2 * B.T @ B
    cov = 0.5 * (cov + cov.T)
    joint = GaussianJoint(np.zeros(d), cov)
    joint.cholesky()
    return joint


def project(z: np.ndarray, proj: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    proj = np.atleast_2d(np.asarray(proj, dtype=float))
    if z.shape[1] != proj.shape[0]:
        raise ValueError(f"cannot project {z.shape} latents with a {proj.shape} matrix")
    return z @ proj


def _value_mode_dict(mode: ValueMode) -> dict:
    if isinstance(mode, FixedValue):
        return {"kind": "fixed", "value": mode.value}
    return {"kind": "uniform", "lo": mode.lo, "hi": mode.hi}


def generate_dataset(
    scm: GroundTruthScm,
    n_obs: int,
    n_int: int,
    node_mode: NodeMode = "single",
    value_mode: ValueMode = FixedValue(100.0),
    sets: int = 20,
    rng: np.random.Generator | None = None,
) -> Dataset:
    """Observational rows first, then ``sets`` interventional blocks.

    Each block holds ``n_int // sets`` rows sharing one target set: a single
    uniformly chosen node, or (multi mode) ``x ~ U{2..d}`` distinct nodes.
    Uniform values are redrawn per row and target. Observational rows are
    drawn before anything else, so two calls with equal seeds and ``n_obs``
    share that block bit for bit.
    """
    if rng is None:
        raise ValueError("an explicit generator is required")
    if n_obs < 0 or n_int < 0:
        raise ValueError("sample counts must be nonnegative")
    if n_obs + n_int == 0:
        raise ValueError("empty dataset: n_obs + n_int must be positive")
    if node_mode not in ("single", "multi"):
        raise ValueError(f"unknown node mode {node_mode!r}")
    d = scm.d
    if n_int:
        if sets < 1 or n_int % sets:
            raise ValueError(f"n_int={n_int} is not divisible into {sets} sets")
        if node_mode == "multi" and d < 2:
            raise ValueError("multi-node interventions need d >= 2")
    W = scm.W
    topo = _order_or_raise(W)
    n = n_obs + n_int
    mask = np.zeros((n, d), dtype=np.uint8)
    values = np.zeros((n, d))
    noise = np.empty((n, d))
    noise[:n_obs] = rng.standard_normal((n_obs, d))
    if n_int:
        block = n_int // sets
        for s in range(sets):
            lo = n_obs + s * block
            if node_mode == "single":
                targets = [int(rng.integers(d))]
            else:
                size = int(rng.integers(2, d + 1))
                targets = sorted(rng.choice(d, size=size, replace=False).tolist())
            mask[lo : lo + block, targets] = 1
            values[lo : lo + block, targets] = value_mode.draw((block, len(targets)), rng)
            noise[lo : lo + block] = rng.standard_normal((block, d))
    Z = rollout(W, scm.sigma, noise, mask, values, topo)
    manifest = {
        "n_obs": n_obs,
        "n_int": n_int,
        "node_mode": node_mode,
        "value_mode": _value_mode_dict(value_mode),
        "sets": sets,
    }
    return Dataset(X=project(Z, scm.proj), mask=mask, values=values, z_eval=Z, manifest=manifest)
