"""Time the compiled loop kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat N]

The loop versions are compiled by numba when it is installed and run as
plain Python otherwise.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from arlab import kernels
from arlab._accel import NUMBA_AVAILABLE
from arlab.diagnostics import pair_differences, eluder_levels


def _problems(rng):
    S, A, H, N = 12, 3, 5, 64
    P = rng.dirichlet(np.ones(S), size=(S, A))
    Ps = rng.dirichlet(np.ones(S), size=(N, S, A))
    r = rng.random((S, A))
    pi = rng.integers(A, size=(H, S))
    cum = np.cumsum(P, axis=2)
    u = rng.random(H)
    d = 6
    phi = rng.random((S, A, S, d)) / (S * d)
    theta = rng.random(d)
    B = rng.normal(size=(d, d))
    sig_inv = np.linalg.inv(np.eye(d) + B @ B.T)
    table = rng.integers(0, 4, size=(6, 8)).astype(float)
    diff = pair_differences(table)
    levels = eluder_levels(diff, 0.5, True)
    return {
        "backward_induction": ((P, r, H), {}),
        "backward_induction_batch": ((Ps, r, H), {}),
        "evaluate_policy": ((P, r, pi), {}),
        "sample_path": ((cum, pi, 0, u), {}),
        "linear_backward": ((phi, r, H, theta, sig_inv, 2.0), {}),
        "eluder_longest": ((diff, levels, True), {}),
    }


def bench(repeat: int = 5, number: int = 50) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    rows = []
    for name, (args, kw) in _problems(rng).items():
        loops = getattr(kernels, f"{name}_loops")
        vec = getattr(kernels, f"{name}_numpy")
        loops(*args, **kw)  # compile outside the timer
        n = 3 if name == "eluder_longest" else number
        t_loop = min(timeit.repeat(lambda: loops(*args, **kw), repeat=repeat, number=n)) / n
        t_vec = min(timeit.repeat(lambda: vec(*args, **kw), repeat=repeat, number=n)) / n
        rows.append((name, t_loop, t_vec))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    label = "numba" if NUMBA_AVAILABLE else "python"
    print(f"{'kernel':28s} {label + ' (us)':>14s} {'numpy (us)':>12s} {'speedup':>8s}")
    for name, t_loop, t_vec in bench(args.repeat):
        print(f"{name:28s} {t_loop * 1e6:14.1f} {t_vec * 1e6:12.1f} {t_vec / t_loop:8.2f}")


if __name__ == "__main__":
    main()
