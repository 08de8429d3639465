"""Pure-numpy latent rollout and its adjoint (fallback backend)."""

import numpy as np


def rollout(W, topo, sigma, noise, mask, values):
    """Batched ancestral sampling with per-row clamped interventions.

    Row ``r`` follows ``z_i = sum_j W[j, i] z_j + sigma * noise[r, i]`` in
    ``topo`` order, except ``z_i = values[r, i]`` wherever ``mask[r, i]``.
    Clamping a node is equivalent to zeroing its incoming column first.
    """
    n, d = noise.shape
    Z = np.zeros((n, d))
    for i in topo:
        free = Z @ W[:, i] + sigma * noise[:, i]
        Z[:, i] = np.where(mask[:, i], values[:, i], free)
    return Z


def rollout_backward(W, topo, sigma, noise, mask, Z, grad_Z):
    """Pull ``grad_Z`` back through :func:`rollout`.

    Returns ``(grad_W, grad_sigma)``. Only ``W[j, i]`` with ``j`` ahead of
    ``i`` in ``topo`` influences the rollout, so every other entry of
    ``grad_W`` is zero.
    """
    d = W.shape[0]
    adj = np.array(grad_Z, dtype=float, copy=True)
    grad_W = np.zeros((d, d))
    grad_sigma = 0.0
    for pos in range(d - 1, -1, -1):
        i = topo[pos]
        a = np.where(mask[:, i], 0.0, adj[:, i])
        parents = topo[:pos]
        grad_W[parents, i] = Z[:, parents].T @ a
        grad_sigma += float(a @ noise[:, i])
        adj[:, parents] += np.outer(a, W[parents, i])
    return grad_W, grad_sigma
