"""Ground-truth DAG synthesis and the permutation / lower-triangular
parameterization of weighted adjacency matrices.

Conventions
-----------
``W[i, j]`` is the weight of the edge ``i -> j``; a latent vector obeys
``z = W.T @ z + eps``. A permutation is stored as an ``order`` array and
stands for the matrix ``P`` with ``P[i, order[i]] = 1``, so that
``W = (P @ L @ P.T).T`` has ``W[a, b] = L[order[b], order[a]]``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

WEIGHT_LOW = 0.5
WEIGHT_HIGH = 2.0

Mask = tuple[tuple[int, int], ...]


class GraphError(ValueError):
    """Raised on malformed graphs, permutations or masks."""


def check_edge_matrix(L: np.ndarray) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] < 1:
        raise GraphError(f"edge matrix must be square with d >= 1, got {L.shape}")
    if np.any(np.triu(L) != 0):
        raise GraphError("edge matrix must be strictly lower triangular")
    return L


def check_permutation(order: Sequence[int], d: int | None = None) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    if order.ndim != 1 or sorted(order.tolist()) != list(range(order.size)):
        raise GraphError(f"not a permutation of 0..{order.size - 1}: {order.tolist()}")
    if d is not None and order.size != d:
        raise GraphError(f"permutation has length {order.size}, expected {d}")
    return order


def permutation_matrix(order: Sequence[int]) -> np.ndarray:
    order = check_permutation(order)
    P = np.zeros((order.size, order.size))
    P[np.arange(order.size), order] = 1.0
    return P


def topological_order(order: Sequence[int]) -> np.ndarray:
    """Node visiting order in which every parent precedes its children."""
    return np.argsort(check_permutation(order), kind="stable")


def er_edge_probability(d: int, edges_per_node: float) -> float:
    if d < 1:
        raise GraphError("d must be >= 1")
    if edges_per_node <= 0:
        raise GraphError("edges_per_node must be positive")
    slots = d * (d - 1) / 2
    if slots == 0:
        return 0.0
    p = edges_per_node * d / slots
    if p > 1.0:
        raise GraphError(
            f"{edges_per_node} edges per node needs p={p:.3f} > 1 at d={d}"
        )
    return p


def sample_edge_weights(size: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Draw from the uniform prior on [-2, -0.5] U [0.5, 2]."""
    magnitude = rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=size)
    sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
    return sign * magnitude


def sample_er_dag(d: int, edges_per_node: float, rng: np.random.Generator) -> np.ndarray:
    """Sample a strictly lower-triangular ER edge matrix.

    Every below-diagonal slot is an edge independently with probability
    ``edges_per_node * d / (d (d - 1) / 2)``, so the expected edge count is
    ``edges_per_node * d``. Present edges get weights from
    :func:`sample_edge_weights`.
    """
    p = er_edge_probability(d, edges_per_node)
    rows, cols = np.tril_indices(d, k=-1)
    present = rng.random(rows.size) < p
    weights = sample_edge_weights(rows.size, rng)
    L = np.zeros((d, d))
    L[rows, cols] = np.where(present, weights, 0.0)
    return L


def assemble_weighted_adjacency(order: Sequence[int], L: np.ndarray) -> np.ndarray:
    """``W = (P L P^T)^T``; acyclic for any strictly lower-triangular ``L``."""
    L = check_edge_matrix(L)
    order = check_permutation(order, L.shape[0])
    # W[a, b] = L[order[b], order[a]]
    return L[np.ix_(order, order)].T.copy()


def edge_matrix_from_adjacency(order: Sequence[int], W: np.ndarray) -> np.ndarray:
    """Inverse of :func:`assemble_weighted_adjacency`."""
    order = check_permutation(order, np.shape(W)[0])
    inv = np.argsort(order)
    return np.asarray(W, dtype=float).T[np.ix_(inv, inv)].copy()


def kahn_order(W: np.ndarray) -> np.ndarray | None:
    """Topological order of the nonzero pattern of ``W``, or None if cyclic."""
    A = np.asarray(W) != 0
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GraphError("adjacency must be square")
    indegree = A.sum(axis=0).astype(int)
    queue = deque(np.flatnonzero(indegree == 0).tolist())
    seen: list[int] = []
    while queue:
        node = queue.popleft()
        seen.append(node)
        for child in np.flatnonzero(A[node]):
            indegree[child] -= 1
            if indegree[child] == 0:
                queue.append(int(child))
    if len(seen) != A.shape[0]:
        return None
    return np.array(seen, dtype=np.int64)


def validate_dag(W: np.ndarray) -> bool:
    """True iff the nonzero pattern of ``W`` has no directed cycle."""
    return kahn_order(W) is not None


def full_mask(d: int) -> Mask:
    rows, cols = np.tril_indices(d, k=-1)
    return tuple(zip(rows.tolist(), cols.tolist()))


def single_edge_mask(d: int) -> Mask:
    """The last below-diagonal slot ``(d-1, d-2)`` only."""
    if d < 2:
        raise GraphError("single-edge mask needs d >= 2")
    return ((d - 1, d - 2),)


def check_mask(mask: Iterable[tuple[int, int]], d: int) -> Mask:
    mask = tuple((int(i), int(j)) for i, j in mask)
    for i, j in mask:
        if not (0 <= j < i < d):
            raise GraphError(f"mask position {(i, j)} is not strictly below the diagonal")
    if len(set(mask)) != len(mask):
        raise GraphError("mask positions must be unique")
    return mask


def pack_free_entries(L: np.ndarray, mask: Iterable[tuple[int, int]]) -> np.ndarray:
    L = check_edge_matrix(L)
    mask = check_mask(mask, L.shape[0])
    if not mask:
        return np.zeros(0)
    rows, cols = zip(*mask)
    return L[list(rows), list(cols)].copy()


def unpack_free_entries(
    theta: np.ndarray, mask: Iterable[tuple[int, int]], fixed: np.ndarray
) -> np.ndarray:
    fixed = check_edge_matrix(fixed)
    mask = check_mask(mask, fixed.shape[0])
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(mask),):
        raise GraphError(f"theta has shape {theta.shape}, mask has {len(mask)} entries")
    L = fixed.copy()
    if mask:
        rows, cols = zip(*mask)
        L[list(rows), list(cols)] = theta
    return L


@dataclass(frozen=True, eq=False)
class GroundTruthScm:
    """The generative model: latent SCM plus linear projection to observed space."""

    L: np.ndarray
    sigma: float
    proj: np.ndarray
    perm: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        L = check_edge_matrix(self.L).copy()
        d = L.shape[0]
        perm = np.arange(d) if self.perm is None else check_permutation(self.perm, d).copy()
        proj = np.array(self.proj, dtype=float)
        if proj.ndim != 2 or proj.shape[0] != d or proj.shape[1] < d:
            raise GraphError(f"projection must be d x D with D >= d, got {proj.shape}")
        if not self.sigma > 0:
            raise GraphError("sigma must be positive")
        for name, value in (("L", L), ("perm", perm), ("proj", proj)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return self.L.shape[0]

    @property
    def D(self) -> int:
        return self.proj.shape[1]

    @property
    def W(self) -> np.ndarray:
        return assemble_weighted_adjacency(self.perm, self.L)

    @property
    def graph(self) -> np.ndarray:
        return (self.W != 0).astype(np.int8)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "D": self.D,
            "perm": self.perm.tolist(),
            "L": self.L.ravel().tolist(),
            "sigma": self.sigma,
            "proj": self.proj.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthScm":
        d, D = int(data["d"]), int(data["D"])
        return cls(
            L=np.array(data["L"], dtype=float).reshape(d, d),
            sigma=float(data["sigma"]),
            proj=np.array(data["proj"], dtype=float).reshape(d, D),
            perm=np.array(data["perm"], dtype=np.int64),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruthScm":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_projection(d: int, D: int, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """Uniform[-1, 1] entries, redrawn until the matrix has full row rank."""
    if D < d:
        raise GraphError(f"observed dimension D={D} must be >= d={d}")
    for _ in range(max_tries):
        proj = rng.uniform(-1.0, 1.0, size=(d, D))
        if np.linalg.matrix_rank(proj) == d:
            return proj
    raise GraphError("could not draw a full-rank projection")


def sample_ground_truth(
    d: int,
    D: int,
    edges_per_node: float,
    sigma: float,
    rng: np.random.Generator,
    ensure_edges: Iterable[tuple[int, int]] = (),
) -> GroundTruthScm:
    """Draw an ER DAG (identity permutation) and a projection.

    ``ensure_edges`` lists L positions that must carry an edge; empty slots
    among them get a fresh weight from the prior.
    """
    L = sample_er_dag(d, edges_per_node, rng)
    proj = sample_projection(d, D, rng)
    for i, j in check_mask(ensure_edges, d):
        if L[i, j] == 0:
            L[i, j] = sample_edge_weights(1, rng)[0]
    return GroundTruthScm(L=L, sigma=sigma, proj=proj, perm=np.arange(d))
