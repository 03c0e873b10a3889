"""Change of variables omega -> U, conditional densities of U(n0) and regularity constants.

``U(n) = omega(n) + (g/lam) V_eff(n)`` on a sub-volume ``Lambda'``.  The law
of U has density ``prod rho(omega(n)) / det(I + (g/lam) D)`` at ``omega =
T^{-1} U`` with D the omega-derivative of V_eff restricted to ``Lambda'``;
conditioning on ``{U(n)}_{n != n0}`` and normalizing in the remaining variable
gives the conditional density of ``U(n0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from . import disorder as dis
from .effpot import derivative_matrix, inverse_map, resample_map, solve_fixed_point, validity_check
from .hamiltonian import HamiltonianSpec


def _subset(spec: HamiltonianSpec, subset) -> np.ndarray:
    n = len(spec.box)
    if subset is None:
        return np.arange(n)
    idx = np.array(sorted({int(i) for i in subset}), dtype=int)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
        raise IndexError("sub-volume indices outside the box")
    return idx


@dataclass
class ChangeOfVariables:
    sites: np.ndarray
    omega: np.ndarray
    U: np.ndarray
    jacobian: np.ndarray
    solution: object = field(repr=False)

    @property
    def log_det(self) -> float:
        sign, val = np.linalg.slogdet(self.jacobian)
        if sign <= 0:
            raise ArithmeticError("Jacobian determinant is not positive")
        return float(val)

    @property
    def det(self) -> float:
        return math.exp(self.log_det)

    def det_window(self) -> tuple[float, float]:
        """``[e^-x, e^x]`` with ``x`` the entrywise l1 norm of ``J - I``."""
        x = float(np.abs(self.jacobian - np.eye(len(self.sites))).sum())
        return math.exp(-x), math.exp(x)


def forward_map(spec: HamiltonianSpec, realization, subset=None, solution=None,
                check: bool = True) -> ChangeOfVariables:
    idx = _subset(spec, subset)
    if check:
        rep = validity_check(spec)
        if not rep.admissible["shift_sum"]:
            raise ValueError(f"(|g|/lam) C1 = {rep.products['shift_sum'][0]:.3g} is not below 1/2")
    omega = np.asarray(getattr(realization, "values", realization), dtype=float)
    sol = solution if solution is not None else solve_fixed_point(spec, omega, tol=1e-13)
    if sol.derivative is None:
        sol.derivative = derivative_matrix(spec, omega, sol)
    J = np.eye(len(idx)) + (spec.g / spec.lam) * sol.derivative[np.ix_(idx, idx)]
    return ChangeOfVariables(idx, omega, sol.full_potential, J, sol)


def inverse_forward(spec: HamiltonianSpec, U, omega_guess, subset=None, tol: float = 1e-13) -> np.ndarray:
    """``T^{-1}``: omega on the sub-volume with the given U; other sites keep ``omega_guess``."""
    idx = _subset(spec, subset)
    omega, _ = inverse_map(spec, U, omega_guess, subset=idx, tol=tol)
    return omega


def log_joint(spec: HamiltonianSpec, model, cov: ChangeOfVariables) -> float:
    """Log density of U on the sub-volume at ``T omega``."""
    return float(np.sum(model.log_density(cov.omega[cov.sites]))) - cov.log_det


# conditional density ---------------------------------------------------------------


@dataclass
class ConditionalDensityEstimate:
    n0: int
    subset: np.ndarray
    conditioned: np.ndarray
    v: np.ndarray
    density: np.ndarray
    normalizer: float
    normalization_residual: float
    nodes: int
    log_unnormalized: np.ndarray = field(repr=False, default=None)
    integral: float = math.nan

    def rows(self):
        return list(zip(self.v.tolist(), self.density.tolist()))


class _Conditional:
    """Unnormalized conditional density ``alpha -> N(alpha)`` with memoized resamples."""

    def __init__(self, spec, model, realization, n0, subset):
        self.spec, self.model, self.n0 = spec, model, int(n0)
        self.idx = _subset(spec, subset)
        if self.n0 not in set(self.idx.tolist()):
            raise IndexError("n0 must lie in the sub-volume")
        self.omega = np.asarray(getattr(realization, "values", realization), dtype=float)
        self.sol = solve_fixed_point(spec, self.omega, tol=1e-13)
        self.U = self.sol.full_potential
        self._cache: dict[float, float] = {}

    def log_N(self, alpha: float) -> float:
        alpha = float(alpha)
        if alpha not in self._cache:
            w, sa = resample_map(self.spec, self.omega, self.sol, self.n0, alpha, subset=self.idx)
            cov = forward_map(self.spec, w, self.idx, solution=sa, check=False)
            self._cache[alpha] = log_joint(self.spec, self.model, cov)
        return self._cache[alpha]

    def kink(self) -> float | None:
        """Value of alpha where omega_alpha(n0) crosses the nonsmooth point of rho."""
        if self.model.kind not in ("two_sided_exponential", "perturbed_exponential"):
            return None
        r = self.spec.g / self.spec.lam
        a = r * self.sol.v_eff[self.n0]
        for _ in range(30):
            w, sa = resample_map(self.spec, self.omega, self.sol, self.n0, a, subset=self.idx)
            new = r * sa.v_eff[self.n0]
            if abs(new - a) < 1e-15:
                break
            a = new
        return a

    def adaptive_integral(self, Z: float) -> float:
        """``int N(v) dv / Z`` by adaptive quadrature in v, independent of the nodes used for Z."""
        k = self.kink()
        pts = [0.0 if k is None else k]
        f = lambda v: math.exp(self.log_N(v)) / Z  # noqa: E731
        # rho carries at most 2e-13 of mass outside this window
        lo, hi = (float(x) for x in self.model.quantile(np.array([1e-13, 1 - 1e-13])))
        edges = [lo, *pts, hi]
        return sum(integrate.quad(f, a, b, epsabs=1e-10, epsrel=1e-9, limit=200)[0]
                   for a, b in zip(edges[:-1], edges[1:]))

    def normalizer(self, nodes: int) -> float:
        """``int N(alpha) d alpha`` in the quantile variable of rho, Gauss-Legendre."""
        edges = [0.0, 1.0]
        k = self.kink()
        if k is not None:
            edges = [0.0, float(self.model.cdf(k)), 1.0]
        x, w = np.polynomial.legendre.leggauss(nodes)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            u = 0.5 * (b - a) * x + 0.5 * (a + b)
            alpha = self.model.quantile(u)
            ratio = np.exp([self.log_N(al) for al in alpha] - self.model.log_density(alpha))
            total += 0.5 * (b - a) * float(np.dot(w, ratio))
        return total


def conditional_density(spec: HamiltonianSpec, realization, n0: int, v_grid=None, subset=None,
                        nodes: int = 24, model=None, check_integral: bool = False) -> ConditionalDensityEstimate:
    """Conditional density of ``U(n0)`` given the other U values of the realization.

    The residual compares the normalizer against a rule with twice the nodes;
    ``check_integral`` also integrates the normalized density adaptively.
    """
    model = model if model is not None else spec.model
    if model is None:
        raise ValueError("a disorder model is required")
    cond = _Conditional(spec, model, realization, n0, subset)
    v = np.linspace(-8, 8, 33) if v_grid is None else np.asarray(v_grid, dtype=float)
    Z = cond.normalizer(nodes)
    Z2 = cond.normalizer(2 * nodes)
    logN = np.array([cond.log_N(x) for x in v])
    dens = np.exp(logN) / Z2
    others = np.delete(cond.U, n0)
    total = cond.adaptive_integral(Z2) if check_integral else math.nan
    return ConditionalDensityEstimate(int(n0), cond.idx, others, v, dens, Z2, abs(Z - Z2) / Z2, nodes,
                                      logN - math.log(Z2), total)


def conditional_density_function(spec: HamiltonianSpec, realization, n0: int, subset=None, nodes: int = 24,
                                 model=None):
    """Callable ``v -> rho_eff(v)`` sharing one normalization."""
    model = model if model is not None else spec.model
    cond = _Conditional(spec, model, realization, n0, subset)
    Z = cond.normalizer(2 * nodes)

    def f(v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return np.exp([cond.log_N(x) for x in v]) / Z

    return f


# determinant and product sandwiches ----------------------------------------


def det_ratio_bounds(spec: HamiltonianSpec, realization, n0: int, alpha: float, subset=None) -> dict:
    """Jacobian ratio ``J_{U_alpha} / J_U`` against its two-sided bounds.

    ``J`` is the determinant of the inverse change of variables, so the
    ratio is ``det(I + A) / det(I + B)`` in the notation with ``A, B = -(g/lam) D``.
    """
    idx = _subset(spec, subset)
    rep = validity_check(spec)
    omega = np.asarray(getattr(realization, "values", realization), dtype=float)
    sol = solve_fixed_point(spec, omega, tol=1e-13, derivative=True)
    shift = abs(alpha - sol.full_potential[n0])
    w, sa = resample_map(spec, omega, sol, n0, alpha, subset=idx)
    r = spec.g / spec.lam
    A = -r * sol.derivative[np.ix_(idx, idx)]
    Db = derivative_matrix(spec, w, sa)
    B = -r * Db[np.ix_(idx, idx)]
    I = np.eye(len(idx))
    ratio = math.exp(np.linalg.slogdet(I - A)[1] - np.linalg.slogdet(I - B)[1])
    # bounds on |det(I+B)/det(I+A)|, in the sign convention of the determinant-ratio inequality
    Ap, Bp = -A, -B
    direct = math.exp(np.linalg.slogdet(I + Bp)[1] - np.linalg.slogdet(I + Ap)[1])
    lower = math.exp(-np.abs((Ap - Bp) @ np.linalg.inv(I + Bp)).sum())
    upper = math.exp(np.abs((Bp - Ap) @ np.linalg.inv(I + Ap)).sum())
    k = 4 * rep.C2 * rep.S["-delta_diff/2"] ** 2 * shift
    # product of rho ratios over n != n0
    others = np.setdiff1d(idx, [n0])
    model = spec.model
    prod = float(np.sum(model.log_density(w[others]) - model.log_density(omega[others])))
    vmax = float(np.abs(sol.v_eff).max())
    c1 = model.c1_value
    pk = 2 * r * c1 * rep.C1 * (shift + 2 * abs(r) * vmax)
    return {
        "ratio": ratio, "bound_lower": math.exp(-k), "bound_upper": math.exp(k),
        "direct": direct, "trace_lower": lower, "trace_upper": upper,
        "log_product": prod, "product_bound": pk,
    }


# M_infinity ------------------------------------------------------------------


@dataclass
class MInfinity:
    analytic: float
    fluctuation_bound: float
    envelope_bound: float
    theta: float
    vartheta: float
    empirical: float = math.nan
    samples: int = 0

    @property
    def consistent(self) -> bool:
        return not (self.empirical > self.analytic)


def _sup_fluctuation(model, eps: float) -> float:
    if eps == 0:
        return model.sup_density
    if model.kind == "two_sided_exponential":
        # the smoothed denominator grows with |v|, so the sup sits at 0
        return np.asarray(dis.fluctuation_ratio(model, eps, 0.0)).item()
    grid = np.linspace(-30, 30, 241)
    vals = [np.asarray(dis.fluctuation_ratio(model, eps, x)).item() for x in grid]
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda x: -np.asarray(dis.fluctuation_ratio(model, eps, x)).item(), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10})
    return max(vals[i], -res.fun)


def analytic_M_infinity(spec: HamiltonianSpec, model=None) -> MInfinity:
    """Upper bound on every conditional density from the parameters alone.

    The smaller of the assumption-(6) bound ``e^vartheta sup rho / (rho * e^{-theta|.|})``
    and, when the exponential envelope is available, ``e^vartheta (c_rho + eps) / 2``.
    """
    model = model if model is not None else spec.model
    rep = validity_check(spec)
    if not (rep.admissible["conditional_ratio"] and rep.admissible["jacobian"]):
        return MInfinity(math.inf, math.inf, math.inf, rep.theta, rep.vartheta)
    b6 = math.exp(rep.vartheta) * _sup_fluctuation(model, rep.theta)
    benv = math.inf
    if rep.envelope.get("passed") and model.kind == "two_sided_exponential":
        benv = math.exp(rep.vartheta) * (model.c_rho + rep.envelope["eps"]) / 2
    return MInfinity(min(b6, benv), b6, benv, rep.theta, rep.vartheta)


def estimate_M_infinity(spec: HamiltonianSpec, n_realizations: int = 4, n0_sample=None, v_grid=None,
                        seed: int = 0, subset=None, nodes: int = 16) -> MInfinity:
    """Empirical max of conditional densities next to the analytic bound."""
    out = analytic_M_infinity(spec)
    box = spec.box
    centre = box.locate((0,) * spec.d)
    n0s = [centre] if n0_sample is None else list(n0_sample)
    v = np.linspace(-3, 3, 25) if v_grid is None else np.asarray(v_grid)
    best = 0.0
    count = 0
    for i in range(n_realizations):
        real = dis.sample(spec.model, seed, box, stream=i)
        for n0 in n0s:
            est = conditional_density(spec, real, n0, v, subset=subset, nodes=nodes)
            best = max(best, float(est.density.max()))
            count += 1
    out.empirical = best
    out.samples = count
    return out


# envelope and ratio checks ---------------------------------------------------


def envelope_check(est: ConditionalDensityEstimate, model, rep) -> dict:
    """Exponential envelope around the conditional density on its grid."""
    if not rep.envelope.get("passed"):
        return {"available": False, "passed": False}
    c, eps, vt = model.c_rho, rep.envelope["eps"], rep.vartheta
    av = np.abs(est.v)
    lower = math.exp(-vt) * (c - eps) / 2 * np.exp(-(c + eps) * av)
    upper = math.exp(vt) * (c + eps) / 2 * np.exp((-c + eps) * av)
    literal_upper = math.exp(vt) * (c - eps) / 2 * np.exp((-c + eps) * av)
    ok = bool(np.all(est.density >= lower) and np.all(est.density <= upper))
    return {"available": True, "passed": ok, "lower": lower, "upper": upper,
            "literal_upper_holds": bool(np.all(est.density <= literal_upper))}


def ratio_check(est: ConditionalDensityEstimate, c1: float, vartheta: float, pairs: int = 1000,
                seed: int = 0) -> dict:
    """Pointwise ratio bound on random grid pairs.

    The symmetric form ``exp(+-c1 (1 + vartheta)|v - v'|)`` is checked; the
    literal lower constant ``(1 - vartheta)`` is reported separately.
    """
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(est.v), pairs)
    j = rng.integers(0, len(est.v), pairs)
    logd = np.log(est.density)
    lr = logd[i] - logd[j]
    dv = np.abs(est.v[i] - est.v[j])
    sym = c1 * (1 + vartheta) * dv
    lit = c1 * (1 - vartheta) * dv
    return {
        "pairs": pairs,
        "violations": int(np.sum(np.abs(lr) > sym + 1e-12)),
        "literal_lower_violations": int(np.sum(lr < -lit - 1e-12)),
        "max_slope": float(np.max(np.abs(lr)[dv > 0] / dv[dv > 0])) if np.any(dv > 0) else 0.0,
    }


def tau_regularity_check(v, density, c1: float, vartheta: float, deltas=(0.05, 0.1, 0.25, 0.5, 1.0),
                         qs=(1, 2, 4)) -> dict:
    """1-regularity and q-decay of a density tabulated on a uniform grid.

    Interval masses come from the cumulative trapezoid rule; the centres u are
    grid points at least 1 away from the grid ends.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(density, dtype=float)
    cum = integrate.cumulative_trapezoid(p, v, initial=0.0)

    def mass(a, b):
        return np.interp(b, v, cum) - np.interp(a, v, cum)

    us = v[(v >= v[0] + 1) & (v <= v[-1] - 1)]
    bound = math.exp(2 * c1 * (1 + vartheta))
    worst = 0.0
    violations = 0
    for u in us:
        ref = mass(u - 1, u + 1)
        for dl in deltas:
            ratio = mass(u - dl, u + dl) / (dl * ref)
            worst = max(worst, ratio)
            violations += ratio > bound
    qdecay = {}
    for q in qs:
        s = np.array([(1 + abs(u) ** q) * mass(u - 1, u + 1) for u in us])
        qdecay[q] = {"C": float(s.max()), "tail_decreasing": bool(s[-1] <= s.max() and s[0] <= s.max())}
    return {"bound": bound, "worst_ratio": worst, "violations": int(violations), "passed": violations == 0,
            "q_decay": qdecay}


# D_{s,1} ---------------------------------------------------------------------


def _pieces(points):
    pts = sorted(set(float(p) for p in points))
    edges = [-np.inf, *pts, np.inf]
    return list(zip(edges[:-1], edges[1:]))


def moment_ratio(density, s: float, z: complex, kinks=(0.0,), epsabs: float = 1e-12) -> tuple[float, float]:
    """``(psi_s(z), phi_s(z))`` for a density callable on the real line.

    For real z the pieces touching z use algebraic endpoint weights for the
    ``|v - z|^-s`` singularity.
    """
    z = complex(z)
    zr = z.real
    real_z = abs(z.imag) <= 1e-14 * max(1.0, abs(z))

    def psi_f(x):
        return abs(x) ** s * float(density(x)) / abs(x - z) ** s

    def phi_f(x):
        return float(density(x)) / abs(x - z) ** s

    def quad(f, a, b, **kw):
        return integrate.quad(f, a, b, epsabs=epsabs, epsrel=1e-10, limit=200, **kw)[0]

    if not real_z:
        psi = phi = 0.0
        for a, b in _pieces(list(kinks) + [zr]):
            psi += quad(psi_f, a, b)
            phi += quad(phi_f, a, b)
        return psi, phi
    others = [k for k in kinks if k != zr]
    w = min([1.0] + [abs(zr - k) for k in others])
    psi = phi = 0.0
    for a, b in _pieces(list(others) + [zr - w, zr, zr + w]):
        if (a, b) == (zr - w, zr) or (a, b) == (zr, zr + w):
            wvar = (0.0, -s) if b == zr else (-s, 0.0)
            psi += quad(lambda x: abs(x) ** s * float(density(x)), a, b, weight="alg", wvar=wvar)
            phi += quad(lambda x: float(density(x)), a, b, weight="alg", wvar=wvar)
        else:
            psi += quad(psi_f, a, b)
            phi += quad(phi_f, a, b)
    return psi, phi


def z_grid(n_mod: int = 25, n_ang: int = 9) -> np.ndarray:
    """Log-spaced moduli in [1e-3, 1e3] at angles in [0, pi], plus z = 0.

    Conjugation leaves both integrals unchanged, so Im z >= 0 suffices.
    """
    r = np.logspace(-3, 3, n_mod)
    ang = np.linspace(0, math.pi, n_ang)
    zs = np.concatenate([[0.0], (r[:, None] * np.exp(1j * ang[None, :])).ravel()])
    zs.imag[np.abs(zs.imag) < 1e-12 * np.abs(zs)] = 0.0
    return zs


@dataclass
class DecouplingTable:
    s: np.ndarray
    sup: np.ndarray
    argsup: np.ndarray
    at_zero: np.ndarray
    large_z: np.ndarray

    def value(self, s: float) -> float:
        i = int(np.argmin(np.abs(self.s - s)))
        if abs(self.s[i] - s) > 1e-12:
            raise KeyError(f"s={s} not in the table")
        return float(self.sup[i])


def estimate_D_s1(spec: HamiltonianSpec | None, model, s_grid, density=None, zs=None,
                  refine: bool = True, require_envelope: bool = True) -> DecouplingTable:
    """Supremum of ``psi_s / phi_s`` over a z-grid for each s.

    ``density`` defaults to the disorder density, which is the conditional
    density exactly when g = 0.
    """
    if require_envelope and model.c_rho is None:
        raise ValueError(f"{model.kind} has no exponential envelope; the ratio need not stay bounded")
    if density is None:
        density = lambda x: float(model.density(x))  # noqa: E731
    kinks = (0.0,) if model.kind in ("two_sided_exponential", "perturbed_exponential") else ()
    zs = z_grid() if zs is None else np.asarray(zs)
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    sup, arg, zero, big = [], [], [], []
    for s in s_grid:
        if s == 0:
            sup.append(1.0)
            arg.append(0.0)
            zero.append(1.0)
            big.append(1.0)
            continue
        vals = []
        for z in zs:
            psi, phi = moment_ratio(density, s, z, kinks)
            vals.append(psi / phi)
        vals = np.array(vals)
        k = int(np.argmax(vals))
        best, zbest = float(vals[k]), complex(zs[k])
        if refine and zbest.imag == 0:
            # the maximum sits on the real axis: polish along it
            step = 0.8 * abs(zbest.real) + 1e-3
            res = optimize.minimize_scalar(lambda x: -np.divide(*moment_ratio(density, s, x, kinks)),
                                           bounds=(zbest.real - step, zbest.real + step), method="bounded",
                                           options={"xatol": 1e-8})
            if -res.fun > best:
                best, zbest = float(-res.fun), complex(res.x)
        elif refine:
            def neg(p):
                a, b = moment_ratio(density, s, complex(p[0], abs(p[1])), kinks)
                return -a / b
            res = optimize.minimize(neg, [zbest.real, zbest.imag], method="Nelder-Mead",
                                    options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 200})
            if -res.fun > best:
                best, zbest = float(-res.fun), complex(res.x[0], abs(res.x[1]))
        sup.append(best)
        arg.append(zbest)
        zero.append(float(vals[0]) if zs[0] == 0 else math.nan)
        m = sum(integrate.quad(lambda x: abs(x) ** s * float(density(x)), a, b, limit=200)[0]
                for a, b in _pieces(kinks or (0.0,)))
        big.append(m)
    return DecouplingTable(s_grid, np.array(sup), np.array(arg), np.array(zero), np.array(big))


def exponential_moment_limits(c: float, s: float) -> tuple[float, float]:
    """Ratio at z = 0 and as |z| -> infinity for the two-sided exponential law."""
    return 1.0 / (special.gamma(1 - s) * c**s), special.gamma(1 + s) / c**s
