#!/usr/bin/env python
"""Self-avoiding walk counts, ratio estimates of the connective constant, and
timing of the two enumerators."""

import argparse
import time

from hfloc.saw import BUDGET, connective_estimate, enumerate_walks, susceptibility

p = argparse.ArgumentParser()
p.add_argument("--d", type=int, nargs="*", default=[2, 3])
p.add_argument("--N", type=int, help="defaults to the per-dimension budget")
p.add_argument("--gamma", type=float, default=0.1)
args = p.parse_args()

for d in args.d:
    N = args.N or BUDGET[d]
    times = {}
    for method in ("hashset", "bitboard"):
        t0 = time.perf_counter()
        table = enumerate_walks(d, N, method=method)
        times[method] = time.perf_counter() - t0
    est = connective_estimate(table)
    chi = susceptibility(d, args.gamma, N, table=table)
    print(f"\nd={d}  N_max={N}  " + "  ".join(f"{k} {v:.2f}s" for k, v in times.items()))
    print(f"{'N':>3} {'C_N':>14} {'C_N/C_N-1':>10} {'C_N^(1/N)':>10}")
    for n in range(1, N + 1):
        ratio = f"{est.ratios[n - 2]:10.5f}" if n >= 2 else " " * 10
        print(f"{n:3d} {table.C(n):14d} {ratio} {est.roots[n - 1]:10.5f}")
    print(f"mu_hat={est.mu_hat:.5f} (estimate)  bracket=({est.bracket[0]:.4f}, {est.bracket[1]:.4f})"
          f"  parity-monotone={est.parity_monotone}")
    print(f"chi({args.gamma}) = {chi.value:.10f} + tail <= {chi.tail_bound:.2e}  diverges={chi.diverges}")
