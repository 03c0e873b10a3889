#!/usr/bin/env python
"""Fractional-moment and correlator decay against distance at strong disorder.

Prints both decay tables and the fitted exponential rates.
"""

import argparse

import numpy as np

from hfloc.config import named
from hfloc.fracmom import decay_fit, mc_correlator_profile, mc_moment_profile
from hfloc.regularity import analytic_M_infinity
from hfloc.threshold import s0

p = argparse.ArgumentParser()
p.add_argument("--samples", type=int, default=2000)
p.add_argument("--lam", type=float, nargs="*", default=[50.0])
p.add_argument("--L", type=int, default=12)
args = p.parse_args()

cfg = named("localization")
for lam in args.lam:
    spec = cfg.to_spec().replace(lam=lam, L=args.L)
    M = analytic_M_infinity(spec).analytic
    s = s0(lam, M) if lam / (2 * M) > np.e else 0.5
    ns = [(k,) for k in range(args.L + 1)]
    mom = mc_moment_profile(spec, (0,), ns, 1e-3j, s, args.samples, cfg.seed)
    cor = mc_correlator_profile(spec, (0,), ns, None, args.samples, cfg.seed)
    print(f"\nlam={lam:g}  M_inf={M:.4f}  s={s:.4f}")
    print(f"{'k':>3} {'E|G|^s':>12} {'se':>10} {'E Q':>12} {'se':>10}")
    for a, b in zip(mom, cor):
        print(f"{a.distance:3d} {a.mean:12.4e} {a.stderr:10.2e} {b.mean:12.4e} {b.stderr:10.2e}")
    for label, est in (("moment", mom), ("correlator", cor)):
        try:
            f = decay_fit([e.distance for e in est], [e.mean for e in est], [e.stderr for e in est])
            print(f"{label:>10}: rate {f.rate:.4f}  95% CI ({f.ci[0]:.4f}, {f.ci[1]:.4f})  R2 {f.r2:.4f}"
                  f"  points {int(f.used.sum())}")
        except ValueError as exc:
            print(f"{label:>10}: no fit ({exc})")
