"""Command line entry point: ``hfloc <subcommand> --config cfg.json``.

Every subcommand writes into ``--out`` (default: the config's ``out``) and
stamps config hash, code version and seed into each file.  On failure the
exit status is nonzero and a JSON error document goes to stderr and to
``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import disorder as dis
from .config import ExperimentConfig
from .outputs import header, read_csv, write_csv, write_dat, write_json

EXIT_FAILED_CHECK = 3


def _grid(cfg: ExperimentConfig, key: str, default):
    return cfg.grids.get(key, default)


def _linspace(spec):
    if isinstance(spec, (list, tuple)) and len(spec) == 3 and isinstance(spec[2], int):
        return np.linspace(spec[0], spec[1], spec[2])
    return np.asarray(spec, dtype=float)


def _centre(spec):
    return spec.box.locate((0,) * spec.d)


# subcommands ---------------------------------------------------------------------


def cmd_validate(cfg, args, out):
    from .effpot import validity_check

    rep = validity_check(cfg.to_spec())
    meta = header(cfg.hash(), cfg.seed)
    rows = [(k, v, lim, rep.admissible[k]) for k, (v, lim) in rep.products.items()]
    write_csv(out / "validity.csv", meta, ["condition", "value", "limit", "passed"], rows)
    flat = rep.to_flat()
    flat.update(all_pass=rep.all_pass, binding=rep.binding(), **meta)
    write_json(out / "validity.json", flat)
    print(f"all_pass={rep.all_pass} binding={rep.binding()} nu={rep.nu} theta={rep.theta:.6g} vartheta={rep.vartheta:.6g}")
    return 0 if rep.all_pass else EXIT_FAILED_CHECK


def cmd_solve_effpot(cfg, args, out):
    from .effpot import solve_fixed_point

    spec = cfg.to_spec()
    real = dis.sample(spec.model, cfg.seed, spec.box)
    sol = solve_fixed_point(spec, real, tol=float(_grid(cfg, "tol", 1e-12)))
    meta = header(cfg.hash(), cfg.seed, {"iterations": sol.iterations, "residual": sol.residual,
                                         "contraction_bound": sol.contraction_bound, "empirical_rate": sol.empirical_rate})
    rows = [tuple(spec.box.sites[i]) + (real.values[i], sol.v_eff[i]) for i in range(len(spec.box))]
    cols = [f"x{j}" for j in range(spec.d)] + ["omega", "v_eff"]
    write_csv(out / "effpot.csv", meta, cols, rows)
    write_csv(out / "effpot_residuals.csv", meta, ["iteration", "residual"], list(enumerate(sol.residuals, 1)))
    print(f"iterations={sol.iterations} residual={sol.residual:.3e}")
    return 0


def cmd_cond_density(cfg, args, out):
    from .regularity import analytic_M_infinity, conditional_density

    spec = cfg.to_spec()
    real = dis.sample(spec.model, cfg.seed, spec.box)
    v = _linspace(_grid(cfg, "v_grid", [-8.0, 8.0, 33]))
    n0s = [spec.box.locate(tuple(np.atleast_1d(n)) if spec.d > 1 else (int(n),)) for n in _grid(cfg, "n0", [0])]
    M = analytic_M_infinity(spec)
    rows = []
    for n0 in n0s:
        est = conditional_density(spec, real, n0, v, check_integral=True)
        for vi, p in zip(est.v, est.density):
            rows.append((n0, vi, p, float(spec.model.density(vi))))
        print(f"n0={n0} integral={est.integral:.10f} max={est.density.max():.6g} M_inf={M.analytic:.6g}")
    meta = header(cfg.hash(), cfg.seed, {"M_inf": M.analytic})
    write_csv(out / "cond_density.csv", meta, ["n0", "v", "density", "rho"], rows)
    return 0


def cmd_saw(cfg, args, out):
    from .saw import connective_estimate, enumerate_walks

    d = int(_grid(cfg, "saw_d", cfg.d))
    N = int(_grid(cfg, "N_max", {1: 30, 2: 12, 3: 8}.get(d, 5)))
    table = enumerate_walks(d, N, method=_grid(cfg, "saw_method", "hashset"))
    meta = header(cfg.hash(), cfg.seed, {"d": d})
    write_csv(out / "saw.csv", meta, ["N", "C_N"], table.rows())
    if N >= 2:
        est = connective_estimate(table)
        write_json(out / "connective.json", dict(meta, mu_hat=est.mu_hat, bracket=est.bracket,
                                                 parity_monotone=est.parity_monotone, estimate=True))
        print(f"d={d} N_max={N} C_N={table.counts[-1]} mu_hat={est.mu_hat:.6f} (estimate)")
    return 0


def cmd_threshold(cfg, args, out):
    from .regularity import analytic_M_infinity
    from .threshold import connective_input, solve_threshold

    spec = cfg.to_spec()
    if "two_M" in cfg.grids:
        Ms = [0.5 * float(x) for x in cfg.grids["two_M"]]
    else:
        Ms = [float(x) for x in _grid(cfg, "M", [analytic_M_infinity(spec).analytic])]
    mus = _grid(cfg, "mu", None)
    mus = [connective_input(spec.d)[0]] if mus is None else [float(x) for x in mus]
    rows = []
    for M in Ms:
        for mu in mus:
            r = solve_threshold(M, mu)
            rows.append((M, 2 * M, mu, r.lambda_star, r.residual, r.x, r.certificate, r.on_larger_branch))
            print(f"2M={2 * M:.6g} mu={mu:.6g} lambda_star={r.lambda_star!r} residual={r.residual:.2e}")
    write_csv(out / "threshold.csv", header(cfg.hash(), cfg.seed),
              ["M", "two_M", "mu", "lambda_star", "residual", "x", "certificate", "larger_branch"], rows)
    return 0


def cmd_weak_threshold(cfg, args, out):
    from .regularity import estimate_D_s1
    from .threshold import weak_threshold

    spec = cfg.to_spec()
    s_grid = [float(s) for s in _grid(cfg, "s_grid", [0.25, 0.5, 0.75])]
    mu_grid = [float(m) for m in _grid(cfg, "mu_grid", [0.0, 0.05, 0.1])]
    interval = _grid(cfg, "interval", [2 * spec.d + 2.0, 2 * spec.d + 3.0])
    D = estimate_D_s1(spec, spec.model, s_grid)
    res = weak_threshold(spec.d, interval, D, s_grid, mu_grid)
    meta = header(cfg.hash(), cfg.seed, {"interval": tuple(interval), "lambda0": res.lambda0})
    cols = ["s", "mu", "D", "E", "lambda_hat", "delta_monotone"]
    write_csv(out / "weak_threshold.csv", meta, cols, res.table)
    print(f"lambda0={res.lambda0:.6g} at s={res.s} mu={res.mu} E={res.E_binding}")
    return 0


def _moment_setup(cfg, spec):
    from .regularity import analytic_M_infinity
    from .threshold import s0

    M = analytic_M_infinity(spec).analytic
    s = _grid(cfg, "s", None)
    if s is None:
        s = s0(spec.lam, M) if spec.lam / (2 * M) > math.e else 0.5
    z = _grid(cfg, "z", [0.0, 1e-3])
    ks = [int(k) for k in _grid(cfg, "distances", range(spec.L + 1))]
    ns = [(k,) + (0,) * (spec.d - 1) for k in ks]
    return M, float(s), complex(z[0], z[1]), ks, ns


def _fit_and_report(ests, meta, path, prefix=""):
    """Exponential fit of a decay profile; a fit without enough usable points is
    recorded in the JSON and reported through the exit status."""
    from .fracmom import decay_fit

    try:
        fit = decay_fit([e.distance for e in ests], [e.mean for e in ests], [e.stderr for e in ests])
    except ValueError as exc:
        write_json(path, dict(meta, status="no_fit", message=str(exc)))
        print(f"{prefix}no fit: {exc}")
        return EXIT_FAILED_CHECK
    write_json(path, dict(meta, status="ok", rate=fit.rate, rate_se=fit.rate_se, ci=fit.ci, r2=fit.r2,
                          prefactor=fit.prefactor, positive=fit.positive, used=fit.distances[fit.used]))
    print(f"{prefix}rate={fit.rate:.4f} ci=({fit.ci[0]:.4f}, {fit.ci[1]:.4f}) R2={fit.r2:.4f}")
    return 0 if fit.positive else EXIT_FAILED_CHECK


def cmd_frac_moment(cfg, args, out):
    from .fracmom import mc_moment_profile

    spec = cfg.to_spec()
    M, s, z, ks, ns = _moment_setup(cfg, spec)
    ests = mc_moment_profile(spec, (0,) * spec.d, ns, z, s, cfg.samples, cfg.seed)
    meta = header(cfg.hash(), cfg.seed, {"s": s, "z": z, "M_inf": M})
    rows = [(e.distance, e.mean, e.stderr, e.samples, cfg.seed) for e in ests]
    write_csv(out / "frac_moment.csv", meta, ["distance", "mean", "stderr", "samples", "seed"], rows)
    write_dat(out / "frac_moment_decay.dat", meta, ["distance", "mean", "stderr"], [r[:3] for r in rows])
    return _fit_and_report(ests, meta, out / "frac_moment_fit.json", f"s={s:.4g} ")


def cmd_correlator(cfg, args, out):
    from .fracmom import mc_correlator_profile

    spec = cfg.to_spec()
    _, _, _, ks, ns = _moment_setup(cfg, spec)
    interval = _grid(cfg, "interval", None)
    ests = mc_correlator_profile(spec, (0,) * spec.d, ns, interval, cfg.samples, cfg.seed)
    meta = header(cfg.hash(), cfg.seed, {"interval": "R" if interval is None else tuple(interval)})
    rows = [(e.distance, e.mean, e.stderr, len(e.values), cfg.seed) for e in ests]
    write_csv(out / "correlator.csv", meta, ["distance", "mean", "stderr", "samples", "seed"], rows)
    write_dat(out / "correlator_decay.dat", meta, ["distance", "mean", "stderr"], [r[:3] for r in rows])
    return _fit_and_report(ests, meta, out / "correlator_fit.json")


def cmd_volume_convergence(cfg, args, out):
    from .fracmom import volume_convergence

    spec = cfg.to_spec()
    vc = volume_convergence(spec, [int(x) for x in _grid(cfg, "L_list", [3, 5, 7, 9])], seed=cfg.seed)
    meta = header(cfg.hash(), cfg.seed, {"L_ref": vc.L_ref, "delta": vc.delta, "C": vc.C,
                                         "green_max_ratio": vc.green_max_ratio, "green_violations": vc.green_violations})
    rows = [(r.L, r.boundary_distance, r.v_eff, r.diff, r.bound, r.rate) for r in vc.rows]
    write_csv(out / "volume_convergence.csv", meta, ["L", "boundary_distance", "v_eff", "diff", "bound", "rate"], rows)
    print(f"monotone={vc.monotone} min_rate={vc.min_rate:.4f} delta={vc.delta:.4f} within_bound={vc.within_bound}")
    return 0


def cmd_stability_sweep(cfg, args, out):
    from .threshold import stability_sweep

    spec = cfg.to_spec()
    gs = [float(g) for g in _grid(cfg, "g_values", [0.1, 0.01, 0.001, 0.0001])]
    rows = stability_sweep(spec, gs, mu=_grid(cfg, "mu_d", None))
    cols = ["g", "theta", "vartheta", "M_inf", "rho_sup", "mu_d", "lambda_HF", "lambda_And", "gap"]
    write_csv(out / "stability_sweep.csv", header(cfg.hash(), cfg.seed), cols, rows)
    for r in rows:
        print(f"g={r['g']:.0e} M_inf={r['M_inf']:.6g} lambda_HF={r['lambda_HF']:.6g} gap={r['gap']:.3e}")
    return 0


def cmd_report(cfg, args, out):
    """Summarize every CSV in the output directory; decay tables also go to .dat."""
    lines = [f"report for {cfg.name} (config {cfg.hash()}, version {__version__})", ""]
    for path in sorted(out.glob("*.csv")):
        meta, rows = read_csv(path)
        lines.append(f"== {path.name}: {len(rows)} rows")
        for k, v in meta.items():
            lines.append(f"   {k}: {v}")
        if rows:
            cols = list(rows[0])
            lines.append("   " + " | ".join(cols))
            for r in rows[:12]:
                lines.append("   " + " | ".join(r[c] for c in cols))
            if len(rows) > 12:
                lines.append(f"   ... {len(rows) - 12} more")
            if cols[:3] == ["distance", "mean", "stderr"]:
                write_dat(out / (path.stem + "_plot.dat"), meta, cols[:3], [[r[c] for c in cols[:3]] for r in rows])
        lines.append("")
    from .outputs import _atomic_write

    _atomic_write(out / "report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "solve-effpot": cmd_solve_effpot,
    "cond-density": cmd_cond_density,
    "saw": cmd_saw,
    "threshold": cmd_threshold,
    "weak-threshold": cmd_weak_threshold,
    "frac-moment": cmd_frac_moment,
    "correlator": cmd_correlator,
    "volume-convergence": cmd_volume_convergence,
    "stability-sweep": cmd_stability_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hfloc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config; defaults are used when omitted")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--out")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        over = list(args.override)
        if args.seed is not None:
            over.append(f"seed={args.seed}")
        if args.samples is not None:
            over.append(f"samples={args.samples}")
        if args.out is not None:
            over.append(f"out={json.dumps(args.out)}")
        cfg = cfg.with_overrides(over)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").unlink(missing_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](cfg, args, out)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error document
        doc = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc),
               "traceback": traceback.format_exc().splitlines()[-6:]}
        print(json.dumps(doc, indent=2), file=sys.stderr)
        if out is not None:
            try:
                out.mkdir(parents=True, exist_ok=True)
                write_json(out / "error.json", doc)
            except OSError:
                pass
        return 1


if __name__ == "__main__":
    sys.exit(main())
