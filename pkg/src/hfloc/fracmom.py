"""Monte-Carlo fractional moments, eigenfunction correlators, decay fits and
finite-volume convergence of the effective potential.

Sample ``i`` of a run with ``base_seed`` uses the disorder
``sample(model, base_seed, box, stream=i)``, so every number is reproducible
from the pair ``(base_seed, i)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import disorder as dis
from .effpot import ConvergenceError, solve_fixed_point, validity_check
from .hamiltonian import HamiltonianSpec, assemble

MAX_FAILURE_FRACTION = 0.01


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> float:
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return math.nan
    nb = min(n_batches, n)
    size = n // nb
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(nb))


@dataclass
class MomentEstimate:
    m: tuple
    n: tuple
    z: complex
    s: float
    samples: int
    mean: float
    stderr: float
    base_seed: int
    streams: list = field(repr=False, default_factory=list)
    failures: int = 0

    @property
    def distance(self) -> int:
        return int(np.abs(np.subtract(self.m, self.n)).sum())

    @property
    def rel_se(self) -> float:
        return self.stderr / self.mean if self.mean > 0 else math.inf


def _realization_solutions(spec: HamiltonianSpec, samples: int, base_seed: int, tol: float = 1e-12):
    """Yield ``(stream, realization, v_eff)``; failed solves yield ``v_eff=None``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i in range(samples):
            real = dis.sample(spec.model, base_seed, spec.box, stream=i)
            if spec.g == 0:
                yield i, real, np.zeros(len(spec.box))
                continue
            try:
                sol = solve_fixed_point(spec, real, tol=tol)
            except (ConvergenceError, np.linalg.LinAlgError):
                yield i, real, None
                continue
            yield i, real, sol.v_eff


def _check_failures(failures: int, samples: int):
    if failures > MAX_FAILURE_FRACTION * samples:
        raise RuntimeError(f"{failures} of {samples} samples failed, above the {MAX_FAILURE_FRACTION:.0%} limit")


def mc_moment_profile(spec: HamiltonianSpec, m, ns, z: complex, s: float, samples: int = 2000,
                      base_seed: int = 0, n_batches: int = 20) -> list[MomentEstimate]:
    """``E |G(m, n; z)|^s`` for several n from one set of realizations."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    z = complex(z)
    if z.imag == 0:
        raise ValueError("need Im z != 0")
    box = spec.box
    m = tuple(int(c) for c in m)
    ns = [tuple(int(c) for c in n) for n in ns]
    rows = [box.locate(n) for n in ns]
    vals = []
    streams = []
    failures = 0
    for i, real, v in _realization_solutions(spec, samples, base_seed):
        if v is None:
            failures += 1
            continue
        op = assemble(spec, real, v)
        try:
            col = op.resolvent_column(op.row(m), z)
        except (np.linalg.LinAlgError, FloatingPointError):
            failures += 1
            continue
        vals.append(np.abs(col[rows]) ** s)
        streams.append(i)
    _check_failures(failures, samples)
    vals = np.array(vals)
    return [MomentEstimate(m, n, z, s, len(vals), float(vals[:, j].mean()), batch_means_se(vals[:, j], n_batches),
                           base_seed, streams, failures) for j, n in enumerate(ns)]


def mc_frac_moment(spec: HamiltonianSpec, m, n, z: complex, s: float, samples: int = 2000,
                   base_seed: int = 0) -> MomentEstimate:
    return mc_moment_profile(spec, m, [n], z, s, samples, base_seed)[0]


def depleted_moment_check(spec: HamiltonianSpec, m, n, z: complex, s: float, M: float, samples: int = 500,
                          base_seed: int = 0) -> dict:
    """One step of the depleted-resolvent expansion in expectation.

    ``E|G(m,n)|^s <= Gamma(s) sum_{m' ~ m} E|G^{minus m}(m', n)|^s``, compared
    with both sides estimated from the same realizations.
    """
    from .threshold import gamma

    z = complex(z)
    m = tuple(int(c) for c in m)
    n = tuple(int(c) for c in n)
    lhs, rhs = [], []
    failures = 0
    for _, real, v in _realization_solutions(spec, samples, base_seed):
        if v is None:
            failures += 1
            continue
        op = assemble(spec, real, v)
        lhs.append(abs(op.resolvent_column(op.row(n), z)[op.row(m)]) ** s)
        rest = op.without(m)
        col = rest.resolvent_column(rest.row(n), z)
        total = 0.0
        for b in op.box.neighbours(op.box.locate(m)):
            if int(b) in rest.position:
                total += abs(col[rest.position[int(b)]]) ** s
        rhs.append(total)
    _check_failures(failures, samples)
    lhs, rhs = np.array(lhs), np.array(rhs)
    G = gamma(s, spec.lam, M)
    out = dict(lhs=float(lhs.mean()), lhs_se=batch_means_se(lhs), rhs=G * float(rhs.mean()),
               rhs_se=G * batch_means_se(rhs), gamma=G, samples=len(lhs))
    out["holds"] = out["lhs"] <= out["rhs"] + 3 * math.hypot(out["lhs_se"], out["rhs_se"])
    return out


# eigenfunction correlator ---------------------------------------------------------


def correlator(spec: HamiltonianSpec, realization, subset=None, interval=None, m=None, n=None,
               v_eff=None, degeneracy_tol: float = 1e-10) -> float:
    """``sum_{k: E_k in I} |psi_k(m)| |psi_k(n)|`` on the restriction to ``subset``.

    ``interval=None`` is the whole real line.  ``v_eff`` defaults to the
    full-box fixed point.
    """
    if v_eff is None:
        v_eff = np.zeros(len(spec.box)) if spec.g == 0 else solve_fixed_point(spec, realization).v_eff
    op = assemble(spec, realization, v_eff, subset)
    return _correlator_from(op, interval, [m], [n], degeneracy_tol)[0]


def _correlator_from(op, interval, ms, ns, degeneracy_tol=1e-10) -> np.ndarray:
    E, Q = op.eigh
    sel = np.ones(len(E), dtype=bool) if interval is None else (E >= interval[0]) & (E <= interval[1])
    Es = E[sel]
    if len(Es) > 1 and np.min(np.diff(Es)) < degeneracy_tol * max(1.0, np.abs(E).max()):
        warnings.warn("near-degenerate eigenvalues: the correlator depends on the eigenbasis choice", RuntimeWarning)
    A = np.abs(Q[:, sel])
    return np.array([float(A[op.row(a)] @ A[op.row(b)]) for a, b in zip(ms, ns)])


@dataclass
class CorrelatorEstimate:
    m: tuple
    n: tuple
    interval: tuple | None
    values: np.ndarray = field(repr=False)
    mean: float = 0.0
    stderr: float = 0.0

    @property
    def distance(self) -> int:
        return int(np.abs(np.subtract(self.m, self.n)).sum())


def mc_correlator_profile(spec: HamiltonianSpec, m, ns, interval=None, samples: int = 2000,
                          base_seed: int = 0) -> list[CorrelatorEstimate]:
    m = tuple(int(c) for c in m)
    ns = [tuple(int(c) for c in n) for n in ns]
    vals = []
    failures = 0
    for _, real, v in _realization_solutions(spec, samples, base_seed):
        if v is None:
            failures += 1
            continue
        op = assemble(spec, real, v)
        vals.append(_correlator_from(op, interval, [m] * len(ns), ns))
    _check_failures(failures, samples)
    vals = np.array(vals)
    return [CorrelatorEstimate(m, n, None if interval is None else tuple(interval), vals[:, j],
                               float(vals[:, j].mean()), batch_means_se(vals[:, j])) for j, n in enumerate(ns)]


# decay fits ----------------------------------------------------------------------


@dataclass
class DecayFit:
    distances: np.ndarray
    log_means: np.ndarray
    rate: float
    rate_se: float
    ci: tuple
    prefactor: float
    r2: float
    used: np.ndarray

    @property
    def positive(self) -> bool:
        return self.ci[0] > 0


def decay_fit(distances, means, stderr=None, max_rel_se: float = 0.25, confidence: float = 0.95,
              min_points: int = 4) -> DecayFit:
    """Weighted least squares of ``log mean`` on distance; ``mean ~ C exp(-rate k)``.

    Points with relative standard error at or above ``max_rel_se`` are dropped.
    Weights are ``(mean / stderr)^2``, the inverse variance of the log; exact
    data (zero errors) gets equal weights, and a zero-error point among noisy
    ones is weighted like the most precise noisy point.
    """
    k = np.asarray(distances, dtype=float)
    y = np.asarray(means, dtype=float)
    se = np.zeros_like(y) if stderr is None else np.asarray(stderr, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(y > 0, se / y, np.inf)
    used = (y > 0) & (rel < max_rel_se)
    if used.sum() < min_points:
        raise ValueError(f"only {int(used.sum())} usable distances, need {min_points}")
    kk, ly, rr = k[used], np.log(y[used]), rel[used]
    tiny = rr < 1e-12
    if tiny.all():
        w = np.ones_like(kk)
    else:
        # deterministic points (e.g. Q(m, m) = 1) get the weight of the best measured one
        w = 1.0 / np.maximum(rr, rr[~tiny].min()) ** 2
    X = np.column_stack([np.ones_like(kk), kk])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], ly * sw, rcond=None)
    resid = ly - X @ coef
    dof = len(kk) - 2
    ss_res = float(np.sum(w * resid**2))
    ybar = np.sum(w * ly) / np.sum(w)
    ss_tot = float(np.sum(w * (ly - ybar) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    sigma2 = ss_res / dof if dof > 0 else 0.0
    cov = sigma2 * np.linalg.inv((X * w[:, None]).T @ X)
    rate = -float(coef[1])
    rate_se = float(math.sqrt(max(cov[1, 1], 0.0)))
    t = stats.t.ppf(0.5 + confidence / 2, dof) if dof > 0 else math.inf
    return DecayFit(k, np.log(np.where(y > 0, y, np.nan)), rate, rate_se, (rate - t * rate_se, rate + t * rate_se),
                    float(math.exp(coef[0])), float(r2), used)


# finite-volume convergence -------------------------------------------------------


@dataclass
class VolumeRow:
    L: int
    boundary_distance: float
    v_eff: float
    diff: float
    bound: float
    rate: float  # decay rate of diff from the previous L, per unit boundary distance


@dataclass
class VolumeConvergence:
    n: tuple
    L_ref: int
    delta: float
    C: float
    rows: list
    green_max_ratio: float = math.nan
    green_violations: int = 0

    @property
    def monotone(self) -> bool:
        d = [r.diff for r in self.rows]
        return all(b < a for a, b in zip(d[:-1], d[1:]))

    @property
    def min_rate(self) -> float:
        rates = [r.rate for r in self.rows[1:]]
        return min(rates) if rates else math.nan

    @property
    def within_bound(self) -> bool:
        return all(r.diff <= r.bound for r in self.rows)


def _boundary_distance(spec: HamiltonianSpec, L: int, n) -> float:
    # the augmented boundary contains the outermost layer of the box, at l1 distance L - |n|_inf
    k = L - int(np.max(np.abs(n))) if len(n) else L
    return float(spec.metric.radial(k))


def volume_convergence(spec: HamiltonianSpec, L_list=(3, 5, 7, 9), n=None, seed: int = 0, stream: int = 0,
                       L_ref: int | None = None, kappa: float = 1.0, t: float = 0.0,
                       tol: float = 1e-15) -> VolumeConvergence:
    """``|V_eff,L(n) - V_eff,L_ref(n)|`` along nested boxes sharing one disorder draw.

    The largest box stands in for the infinite volume.  Next to it the
    Green's-function analogue at ``t + i kappa`` on each ``Lambda_L``.
    """
    n = tuple([0] * spec.d) if n is None else tuple(n)
    L_list = sorted(L_list)
    L_ref = L_ref if L_ref is not None else L_list[-1] + 10
    big = spec.replace(L=L_ref)
    real = dis.sample(spec.model, seed, big.box, stream=stream)
    rep = validity_check(spec.replace(L=L_list[0]))
    delta = rep.delta0
    C = rep.volume_C
    S_nu = rep.S["-nu"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ref = solve_fixed_point(big, real, tol=tol).v_eff
    rows = []
    g_ratio, g_viol = 0.0, 0
    prev = None
    for L in L_list:
        sp = spec.replace(L=L)
        r = real.restrict(sp.box)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            v = solve_fixed_point(sp, r, tol=tol).v_eff
        idx_ref = [big.box.locate(x) for x in sp.box.sites]
        bd = _boundary_distance(sp, L, n)
        diff = abs(v[sp.box.locate(n)] - ref[big.box.locate(n)])
        rate = math.nan
        if prev is not None:
            rate = -math.log(diff / prev[1]) / (bd - prev[0]) if diff > 0 else math.inf
        rows.append(VolumeRow(L, bd, float(v[sp.box.locate(n)]), float(diff), C * math.exp(-delta * bd), rate))
        prev = (bd, diff)
        # Green's functions of Lambda_L with the reference and the box potential
        z = complex(t, kappa)
        G_inf = assemble(sp, r, ref[idx_ref]).resolvent(z)
        G_L = assemble(sp, r, v).resolvent(z)
        dist = spec.metric.on_box(sp.box)
        bdist = np.array([_boundary_distance(sp, L, x) for x in sp.box.sites])
        bound = 4 * C / kappa**2 * np.exp(-rep.nu * dist - delta * bdist[None, :]) * S_nu
        gap = np.abs(G_inf - G_L)
        ratio = np.divide(gap, bound, out=np.where(gap > 0, np.inf, 0.0), where=bound > 0)
        g_ratio = max(g_ratio, float(ratio.max()))
        g_viol += int(np.sum(ratio > 1))
    return VolumeConvergence(n, L_ref, delta, C, rows, g_ratio, g_viol)
