#!/usr/bin/env python
"""Interacting threshold against the coupling g, next to the Anderson threshold."""

import argparse

from hfloc.config import named
from hfloc.threshold import stability_sweep

p = argparse.ArgumentParser()
p.add_argument("--config", default="weak_coupling")
p.add_argument("--g", type=float, nargs="*", default=[1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 0.0])
args = p.parse_args()

cfg = named(args.config)
rows = stability_sweep(cfg.to_spec(), args.g)
print(f"{'g':>8} {'theta':>10} {'vartheta':>10} {'M_inf':>10} {'lam_HF':>10} {'lam_And':>10} {'gap':>10}")
for r in rows:
    print(f"{r['g']:8.1e} {float(r['theta']):10.4g} {float(r['vartheta']):10.4g} {r['M_inf']:10.5f}"
          f" {r['lambda_HF']:10.5f} {r['lambda_And']:10.5f} {r['gap']:10.3e}")
