#!/usr/bin/env python
"""Nested-box convergence of the effective potential at the centre and near the edge."""

import argparse

from hfloc.config import named
from hfloc.fracmom import volume_convergence

p = argparse.ArgumentParser()
p.add_argument("--config", default="finite_volume")
p.add_argument("--L", type=int, nargs="*", default=[3, 5, 7, 9, 11])
p.add_argument("--seeds", type=int, default=3)
args = p.parse_args()

spec = named(args.config).to_spec()
for seed in range(args.seeds):
    for n in [(0,), (2,)]:
        vc = volume_convergence(spec, args.L, n=n, seed=seed)
        print(f"\nseed={seed} n={n} L_ref={vc.L_ref} delta={vc.delta:.3f} C={vc.C:.3g}"
              f" green max ratio={vc.green_max_ratio:.3f}")
        for r in vc.rows:
            rate = "" if r.rate is None else f"{r.rate:.3f}"
            print(f"  L={r.L:3d} dist={r.boundary_distance:3.0f} diff={r.diff:.3e} bound={r.bound:.3e} rate={rate}")
