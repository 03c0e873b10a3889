#!/usr/bin/env python
"""Run every CLI subcommand on the shipped configs, writing into out/<config>/."""

import argparse
import sys
from pathlib import Path

from hfloc.cli import main

ROOT = Path(__file__).resolve().parents[1]

PLAN = [
    ("canonical", ["validate", "solve-effpot", "cond-density", "threshold"]),
    ("weak_coupling", ["validate", "cond-density", "stability-sweep"]),
    ("finite_volume", ["volume-convergence"]),
    ("weak_disorder", ["weak-threshold"]),
    ("localization", ["frac-moment", "correlator"]),
]


def run(out_root: Path, samples: int | None) -> int:
    status = 0
    for name, commands in PLAN:
        out = out_root / name
        for cmd in commands + ["report"]:
            argv = [cmd, "--config", str(ROOT / "configs" / f"{name}.json"), "--out", str(out)]
            if samples is not None:
                argv += ["--samples", str(samples)]
            print(f"[{name}] {cmd}", flush=True)
            rc = main(argv)
            # exit status 3 flags a failed check (for example an inadmissible
            # config or a decay fit without enough points); keep going
            status = status or rc
    return status


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(ROOT / "out"))
    p.add_argument("--samples", type=int, help="override Monte Carlo sample counts (quick runs)")
    a = p.parse_args()
    sys.exit(run(Path(a.out), a.samples))
