"""Compare the compiled and numpy rollout kernels.

    python benchmarks/bench_kernels.py [--repeats 200]

Times one forward rollout and one adjoint pass at the default problem
sizes (d=6; 600, 1800 and 3600 rows) and reports the speedup.
"""

import argparse
import timeit

import numpy as np

from decoder_bcd import kernels
from decoder_bcd.graph_scm import assemble_weighted_adjacency, sample_er_dag, topological_order
from decoder_bcd.sampler import UniformValue


def make_inputs(n, d, rng):
    W = assemble_weighted_adjacency(np.arange(d), sample_er_dag(d, 2.0, rng))
    topo = topological_order(np.arange(d))
    noise = rng.standard_normal((n, d))
    mask = (rng.random((n, d)) < 0.2).astype(np.uint8)
    values = np.where(mask, UniformValue(-10, 10).draw((n, d), rng), 0.0)
    return W, topo, noise, mask, values


def bench(n, d, repeats, rng):
    W, topo, noise, mask, values = make_inputs(n, d, rng)
    grad_Z = rng.standard_normal((n, d))
    rows = {}
    impls = {"python": (kernels.python_rollout, kernels.python_rollout_backward)}
    if kernels.compiled_rollout is not None:
        impls["cython"] = (kernels.compiled_rollout, kernels.compiled_rollout_backward)
    for name, (fwd, bwd) in impls.items():
        Z = fwd(W, topo, 0.1, noise, mask, values)
        t_fwd = min(timeit.repeat(lambda: fwd(W, topo, 0.1, noise, mask, values), number=repeats, repeat=3))
        t_bwd = min(timeit.repeat(lambda: bwd(W, topo, 0.1, noise, mask, Z, grad_Z), number=repeats, repeat=3))
        rows[name] = (1e6 * t_fwd / repeats, 1e6 * t_bwd / repeats)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--d", type=int, default=6)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'rows':>6} {'backend':>8} {'forward us':>11} {'adjoint us':>11} {'speedup':>8}")
    for n in (600, 1800, 3600):
        rows = bench(n, args.d, args.repeats, rng)
        base = sum(rows["python"])
        for name, (f, b) in rows.items():
            print(f"{n:>6} {name:>8} {f:>11.1f} {b:>11.1f} {base / (f + b):>7.2f}x")


if __name__ == "__main__":
    main()
