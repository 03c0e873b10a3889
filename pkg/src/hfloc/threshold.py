"""Large-disorder thresholds, the weak-disorder threshold and the g -> 0 sweep.

The large-disorder equation ``lam = 2 M mu e ln(lam / 2M)`` is solved in the
reduced variable ``x = lam / 2M``, where it reads ``x = mu e ln x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import brentq

from .hamiltonian import free_ct_constants, free_green_table, spectral_distance
from .lattice import sphere_counts


class NoRootError(ValueError):
    pass


class DivergenceError(ValueError):
    pass


def gamma(s: float, lam: float, M: float) -> float:
    """``(2M)^s / ((1 - s) lam^s)``, the a-priori fractional moment bound."""
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    if lam <= 0 or M <= 0:
        raise ValueError("lam and M must be positive")
    return (2 * M / lam) ** s / (1 - s)


def s0(lam: float, M: float) -> float:
    """Minimizer ``1 - 1/ln(lam/2M)`` of ``s -> Gamma(s)``."""
    if lam <= 0 or M <= 0:
        raise ValueError("lam and M must be positive")
    r = math.log(lam / (2 * M))
    if r <= 1:
        raise ValueError(f"need lam/2M > e, got lam/2M = {lam / (2 * M):.6g}")
    return 1 - 1 / r


@dataclass(frozen=True)
class ThresholdResult:
    lambda_star: float
    residual: float
    M: float
    mu: float
    x: float
    bracket: tuple
    certificate: float  # h'(x) = 1 - mu e / x, nonnegative on the larger root

    @property
    def on_larger_branch(self) -> bool:
        return self.certificate >= 0 and self.x >= math.e * (1 - 1e-15)

    @property
    def gamma_at_s0(self) -> float:
        # e ln(x) / x, equal to 1/mu at the root
        return math.e * math.log(self.x) / self.x


def _reduced_root(mu: float) -> tuple[float, tuple]:
    if mu < 1:
        raise NoRootError(f"x = mu e ln x has no root for mu = {mu} < 1")
    if mu == 1:
        return math.e, (math.e, math.e)
    lo = mu * math.e  # h(x) = x - mu e ln x has its minimum here, h(lo) < 0
    h = lambda x: x - mu * math.e * math.log(x)  # noqa: E731
    hi = 2 * lo
    while h(hi) <= 0:
        hi *= 2
    x = brentq(h, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return x, (lo, hi)


def solve_threshold(M: float, mu: float) -> ThresholdResult:
    """Larger root of ``lam = 2 M mu e ln(lam / 2M)``."""
    if M <= 0:
        raise ValueError("M must be positive")
    x, br = _reduced_root(mu)
    lam = 2 * M * x
    res = abs(lam - 2 * M * mu * math.e * math.log(x))
    return ThresholdResult(lam, res, M, mu, x, (2 * M * br[0], 2 * M * br[1]), 1 - mu * math.e / x)


def threshold_interval(M: float, mu_bracket) -> tuple[float, float]:
    """Thresholds at the ends of a bracket for mu; the root increases with mu."""
    lo, hi = sorted(mu_bracket)
    return solve_threshold(M, max(lo, 1.0)).lambda_star, solve_threshold(M, max(hi, 1.0)).lambda_star


def connective_input(d: int, mu: float | None = None, N_max: int | None = None) -> tuple[float, tuple]:
    """The connective constant used by the thresholds, with a bracket.

    A user value is returned as is.  Otherwise the ratio estimate from exact
    enumeration; d=1 is exactly 1.
    """
    if mu is not None:
        return float(mu), (float(mu), float(mu))
    if d == 1:
        return 1.0, (1.0, 1.0)
    from .saw import connective_estimate, enumerate_walks

    N = N_max if N_max is not None else {2: 14, 3: 8}.get(d, 5)
    est = connective_estimate(enumerate_walks(d, N))
    return est.mu_hat, est.bracket


# weak disorder -----------------------------------------------------------------


@dataclass
class WeightedSum:
    E: float
    s: float
    mu: float
    value: float  # upper bound on sup_delta sum_v |G0(0, v; E + i delta)|^s e^{mu |v|}
    per_delta: dict
    in_box: dict
    tail: dict
    R: int
    delta_monotone: bool


def _sphere_tail(d: int, R: int, C: float, s: float, rate: float) -> float:
    """``C^s sum_{k > R} N_k e^{-rate k}`` with a ratio bound on the remainder."""
    if rate <= 0:
        return math.inf
    K = R + 1 + int(math.ceil(60.0 / rate)) + 4 * d
    k = np.arange(R + 1, K + 1)
    terms = sphere_counts(d, k) * np.exp(-rate * k)
    q = ((K + 1) / K) ** (d - 1) * math.exp(-rate)
    rem = terms[-1] * q / (1 - q) if q < 1 else math.inf
    return C**s * (float(terms.sum()) + rem)


def _best_tail(d: int, z: complex, R: int, s: float, mu: float) -> tuple[float, float]:
    gap = spectral_distance(d, z)
    rmax = math.log1p(gap / (2 * d))
    if s * rmax <= mu:
        raise DivergenceError(f"mu={mu} exceeds s times the Combes-Thomas rate {rmax:.4g} at z={z}")
    best = (math.inf, float("nan"))
    for frac in (0.3, 0.5, 0.7, 0.85, 0.95):
        rate = mu / s + frac * (rmax - mu / s)
        C, r = free_ct_constants(d, z, rate)
        t = _sphere_tail(d, R, C, s, s * r - mu)
        if t < best[0]:
            best = (t, r)
    return best


def _default_radius(d: int, E: float, s: float, mu: float) -> int:
    gap = spectral_distance(d, complex(E, 0))
    rate = s * math.log1p(gap / (2 * d)) - mu
    cap = {1: 4000, 2: 150, 3: 25}.get(d, 8)
    return int(min(cap, max(10, math.ceil(40 / max(rate, 1e-3)))))


def weighted_green_sum(d: int, E: float, s: float, mu: float, deltas=(1e-1, 1e-2, 1e-3),
                       R: int | None = None, _tables: dict | None = None) -> WeightedSum:
    """Certified upper bound on the weighted fractional Green's function sum.

    Sites with ``|v|_1 <= R`` use the computed column plus its truncation error;
    the rest are bounded with a Combes-Thomas tail.  ``u = 0`` by translation
    invariance.
    """
    if spectral_distance(d, complex(E, 0)) <= 0:
        raise ValueError(f"E={E} lies in the free spectrum [-{2 * d}, {2 * d}]")
    R = R if R is not None else _default_radius(d, E, s, mu)
    per, inbox, tails = {}, {}, {}
    for delta in deltas:
        z = complex(E, delta)
        _best_tail(d, z, R, s, mu)
        key = (z, R)
        tab = _tables.get(key) if _tables is not None else None
        if tab is None:
            tab = free_green_table(d, z, R)
            if _tables is not None:
                _tables[key] = tab
        tails[delta] = float(_best_tail(d, z, R, s, mu)[0])
        l1 = tab.l1
        m = l1 <= R
        upper = (np.abs(tab.values[m]) + tab.error_bound[m]) ** s * np.exp(mu * l1[m])
        inbox[delta] = float(upper.sum())
        per[delta] = inbox[delta] + tails[delta]
    vals = [per[dl] for dl in sorted(per, reverse=True)]
    mono = all(b >= a * (1 - 1e-9) for a, b in zip(vals[:-1], vals[1:]))
    return WeightedSum(E, s, mu, max(per.values()), per, inbox, tails, R, mono)


def _decoupling(D, s: float) -> float:
    if callable(D):
        return float(D(s))
    if hasattr(D, "value"):
        return D.value(s)
    return float(D)


def lambda_hat(d: int, E: float, s: float, mu: float, D, **kw) -> float:
    """``(D_{s,1} sup_delta sum_v |G0|^s e^{mu|v|})^{-1/s}``, a lower bound since the sum is an upper bound."""
    S = weighted_green_sum(d, E, s, mu, **kw)
    return float((_decoupling(D, s) * S.value) ** (-1.0 / s))


@dataclass
class WeakThresholdResult:
    lambda0: float
    s: float
    mu: float
    E_binding: float
    table: list = field(repr=False)
    delta_monotone: bool = True


def weak_threshold(d: int, interval, D, s_grid=(0.25, 0.5, 0.75), mu_grid=(0.0, 0.05, 0.1),
                   n_energies: int = 5, deltas=(1e-1, 1e-2, 1e-3), R: int | None = None) -> WeakThresholdResult:
    """``sup_s sup_mu inf_E lambda_hat`` with E on a grid including the interval ends.

    Pairs ``(s, mu)`` outside the Combes-Thomas range are skipped; if none is
    usable a DivergenceError is raised.
    """
    a, b = sorted(interval)
    if not (b < -2 * d or a > 2 * d):
        raise ValueError("interval must lie outside the free spectrum")
    Es = np.linspace(a, b, n_energies) if b > a else np.array([a])
    cache: dict = {}
    rows = []
    best = None
    for s in s_grid:
        Ds = _decoupling(D, s)
        for mu in mu_grid:
            try:
                sums = [weighted_green_sum(d, float(E), s, mu, deltas, R, cache) for E in Es]
            except DivergenceError:
                continue
            lam = [float((Ds * w.value) ** (-1.0 / s)) for w in sums]
            i = int(np.argmin(lam))
            row = dict(s=s, mu=mu, D=Ds, E=float(Es[i]), lambda_hat=lam[i],
                       delta_monotone=all(w.delta_monotone for w in sums))
            rows.append(row)
            if best is None or lam[i] > best["lambda_hat"]:
                best = row
    if best is None:
        raise DivergenceError("no (s, mu) pair lies inside the Combes-Thomas range")
    return WeakThresholdResult(best["lambda_hat"], best["s"], best["mu"], best["E"], rows,
                               all(r["delta_monotone"] for r in rows))


# stability in g -----------------------------------------------------------------


def stability_sweep(spec, g_values, mu: float | None = None, model=None) -> list[dict]:
    """``lambda_HF(g)`` from the analytic M_inf bound next to ``lambda_And`` from sup rho."""
    from .regularity import analytic_M_infinity

    model = model if model is not None else spec.model
    mu_d, bracket = connective_input(spec.d, mu)
    rho_sup = model.sup_density
    lam_and = solve_threshold(rho_sup, mu_d).lambda_star
    rows = []
    for g in g_values:
        s_g = spec.replace(g=float(g))
        m = analytic_M_infinity(s_g, model)
        lam_hf = solve_threshold(m.analytic, mu_d).lambda_star if math.isfinite(m.analytic) else math.inf
        rows.append(dict(g=float(g), theta=m.theta, vartheta=m.vartheta, M_inf=m.analytic, rho_sup=rho_sup,
                         mu_d=mu_d, lambda_HF=lam_hf, lambda_And=lam_and, gap=abs(lam_hf - lam_and)))
    return rows
