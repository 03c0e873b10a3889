"""Self-consistent effective potential and its smallness constants.

``V(n) = sum_m a(n, m) F(H)_{mm}`` with ``H = A + lam omega + g V`` is solved by
Picard iteration.  ``F(H)`` comes from the eigendecomposition; the contour
representation over the lines ``Im z = +-eta`` is kept as a cross-check.
The omega-derivative of the fixed point uses the Daleckii-Krein formula for
the derivative of ``F(H)_{mm}`` with respect to the diagonal of H.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from .hamiltonian import HamiltonianSpec, assemble, choose_nu
from .lattice import Box, Metric, exp_sum

SQ2 = math.sqrt(2.0)


# the function F -------------------------------------------------------------


@dataclass(frozen=True)
class FSpec:
    """Analytic function on the strip ``|Im z| < eta``, real on the real axis.

    ``fermi_dirac``: ``1 / (1 + exp(beta (z - mu_bar)))``, poles at
    ``mu_bar + i pi (2k+1) / beta``.  ``lorentzian``: ``A w^2 / (w^2 + z^2)``,
    poles at ``+-i w``.  ``constant``: ``value``.
    """

    kind: str
    eta: float
    beta: float = 1.0
    mu_bar: float = 0.0
    amplitude: float = 1.0
    width: float = 1.0
    value: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("strip width eta must be positive")
        if self.kind == "fermi_dirac":
            if not self.beta > 0:
                raise ValueError("beta must be positive")
            if not self.eta < math.pi / self.beta:
                raise ValueError(f"eta={self.eta} reaches the Fermi-Dirac pole at pi/beta={math.pi / self.beta}")
        elif self.kind == "lorentzian":
            if not self.eta < self.width:
                raise ValueError("lorentzian needs eta < width")
        elif self.kind != "constant":
            raise ValueError(f"unknown F kind {self.kind!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "fermi_dirac":
            return special.expit(-self.beta * (x - self.mu_bar))
        if self.kind == "lorentzian":
            w = self.width
            return self.amplitude * w * w / (w * w + x * x)
        return np.full(x.shape, float(self.value))

    def complex_eval(self, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "fermi_dirac":
            w = self.beta * (z - self.mu_bar)
            out = np.empty(w.shape, dtype=complex)
            # stable on both sides of the Fermi level
            lo = w.real <= 0
            out[lo] = 1 / (1 + np.exp(w[lo]))
            e = np.exp(-w[~lo])
            out[~lo] = e / (1 + e)
            return out
        if self.kind == "lorentzian":
            w = self.width
            return self.amplitude * w * w / (w * w + z * z)
        return np.full(z.shape, complex(self.value))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "fermi_dirac":
            p = self(x)
            return -self.beta * p * (1 - p)
        if self.kind == "lorentzian":
            w = self.width
            return -2 * self.amplitude * w * w * x / (w * w + x * x) ** 2
        return np.zeros(x.shape)

    def features(self) -> list[float]:
        """Real points around which F changes on its natural scale."""
        if self.kind == "fermi_dirac":
            return [self.mu_bar + k / self.beta for k in (-20, -5, 0, 5, 20)]
        if self.kind == "lorentzian":
            return [-self.width, 0.0, self.width]
        return []

    @property
    def sup_norm(self) -> float:
        """``||F||_inf`` on the closed strip."""
        if self.kind == "fermi_dirac":
            be = self.beta * self.eta
            return 1.0 if be <= math.pi / 2 else 1.0 / math.sin(be)
        if self.kind == "lorentzian":
            w = self.width
            return abs(self.amplitude) * w * w / (w * w - self.eta**2)
        return abs(self.value)

    def divided_differences(self, E: np.ndarray) -> np.ndarray:
        """Matrix ``(F(E_i) - F(E_j)) / (E_i - E_j)``, with ``F'(E_i)`` on ties."""
        E = np.asarray(E, dtype=float)
        diff = E[:, None] - E[None, :]
        if self.kind == "fermi_dirac":
            # F = (1 - tanh(a))/2 with a = beta (E - mu)/2; the tanh difference
            # is sinh(a_i - a_j) sech(a_i) sech(a_j), stable for close arguments
            a = 0.5 * self.beta * (E - self.mu_bar)
            x = a[:, None] - a[None, :]
            ax = np.abs(a)
            sech = 2 * np.exp(-ax) / (1 + np.exp(-2 * ax))
            with np.errstate(invalid="ignore", divide="ignore"):
                shc = np.where(np.abs(x) < 1e-4, 1 + x * x / 6, np.sinh(x) / np.where(x == 0, 1, x))
                big = np.abs(x) > 30
                th = np.tanh(a)
                out = -0.25 * self.beta * shc * sech[:, None] * sech[None, :]
                tdiff = -0.5 * (th[:, None] - th[None, :]) / np.where(diff == 0, 1, diff)
            return np.where(big, tdiff, out)
        F = self(E)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (F[:, None] - F[None, :]) / diff
        close = np.abs(diff) < 1e-7 * np.maximum(1.0, np.abs(E)[:, None])
        mid = 0.5 * (E[:, None] + E[None, :])
        return np.where(close, self.derivative(mid), out)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def fermi_dirac(beta: float, eta: float, mu_bar: float = 0.0) -> FSpec:
    return FSpec("fermi_dirac", eta, beta=beta, mu_bar=mu_bar)


def poisson_kernel(u, eta: float):
    u = np.asarray(u, dtype=float)
    return eta / (math.pi * (eta * eta + u * u))


class TransformedF:
    """``f = F_+ + F_- - D * F`` on the real line, ``D`` the Poisson kernel of width eta.

    With this ``f`` the Poisson smoothing of ``f`` returns ``F``, which is what
    the contour representation of ``F(H)`` needs.
    """

    def __init__(self, fspec: FSpec, epsabs: float = 1e-13):
        self.fspec = fspec
        self.eta = fspec.eta
        self.epsabs = epsabs
        self._cache: dict[float, float] = {}

    def boundary_sum(self, t):
        """``F(t + i eta) + F(t - i eta) = 2 Re F(t + i eta)``."""
        t = np.asarray(t, dtype=float)
        return 2 * self.fspec.complex_eval(t + 1j * self.eta).real

    def smoothed(self, t) -> np.ndarray:
        """``(D * F)(t) = (1/pi) int_{-pi/2}^{pi/2} F(t + eta tan phi) dphi``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.shape)
        for i, x in enumerate(t.ravel()):
            key = float(x)
            if key not in self._cache:
                # break the angle range where F varies (Fermi level, Lorentzian centre)
                cuts = sorted({math.atan((c - x) / self.eta) for c in self.fspec.features()})
                edges = [-math.pi / 2, *cuts, math.pi / 2]
                val = 0.0
                for a, b in zip(edges[:-1], edges[1:]):
                    part, _ = integrate.quad(lambda p: float(self.fspec(x + self.eta * math.tan(p))),
                                             a, b, epsabs=self.epsabs, epsrel=1e-13, limit=200)
                    val += part
                if not np.isfinite(val):
                    raise ArithmeticError(f"smoothing quadrature failed at t={x}")
                self._cache[key] = val / math.pi
            out.ravel()[i] = self._cache[key]
        return out

    def __call__(self, t):
        return self.boundary_sum(t) - self.smoothed(t)

    def table(self, grid):
        grid = np.asarray(grid, dtype=float)
        return grid, self(grid)


def transform_f(fspec: FSpec) -> TransformedF:
    return TransformedF(fspec)


def fermi_smoothed_exact(fspec: FSpec, t):
    """Closed form of the Poisson-smoothed Fermi function via the digamma function."""
    t = np.asarray(t, dtype=float)
    z = 0.5 + fspec.beta * (fspec.eta - 1j * (t - fspec.mu_bar)) / (2 * math.pi)
    return 0.5 + special.psi(z).imag / math.pi


# interaction kernel ---------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Interaction kernel with ``|a(m,n)| <= C_a exp(-gamma_a d(m,n))``.

    ``kronecker`` is the identity; ``nearest_neighbor`` puts ``strength`` on
    neighbour pairs; ``exponential`` is ``C_a exp(-gamma_a d)``, which becomes a
    power law under the scaled-log metric.
    """

    kind: str = "kronecker"
    gamma_a: float = 20.0
    C_a: float = 1.0
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("kronecker", "nearest_neighbor", "exponential"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not (self.gamma_a > 0 and self.C_a > 0):
            raise ValueError("kernel needs gamma_a > 0 and C_a > 0")

    def constant(self, metric: Metric) -> float:
        """Effective C_a (the neighbour strength fixes it for nearest_neighbor)."""
        if self.kind == "nearest_neighbor":
            return max(self.C_a, abs(self.strength) * math.exp(self.gamma_a * metric.neighbour_distance()))
        return self.C_a

    def matrix(self, box: Box, metric: Metric) -> np.ndarray:
        if self.kind == "kronecker":
            return np.eye(len(box))
        if self.kind == "nearest_neighbor":
            return self.strength * box.adjacency
        return self.C_a * np.exp(-self.gamma_a * metric.on_box(box))

    def check(self, box: Box, metric: Metric) -> bool:
        a = self.matrix(box, metric)
        bound = self.constant(metric) * np.exp(-self.gamma_a * metric.on_box(box))
        return bool(np.all(np.abs(a) <= bound * (1 + 1e-12)) and np.array_equal(a, a.T))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


# F(H) -----------------------------------------------------------------------


def F_of_H(fspec: FSpec, op, route: str = "eig") -> np.ndarray:
    """Diagonal ``<delta_m, F(H) delta_m>`` of an assembled operator."""
    if route == "eig":
        E, Q = op.eigh
        return (Q * Q) @ fspec(E)
    if route == "contour":
        return F_of_H_contour(fspec, op)
    raise ValueError(f"unknown route {route!r}")


def F_of_H_contour(fspec: FSpec, op, epsabs: float = 1e-11) -> np.ndarray:
    """``(1/2 pi i) int [(H - t - i eta)^-1 - (H - t + i eta)^-1]_{mm} f(t) dt``.

    Resolvents by direct inversion, f by quadrature; independent of the
    eigendecomposition route.
    """
    H = op.matrix
    n = len(H)
    eta = fspec.eta
    tf = transform_f(fspec)
    I = np.eye(n)

    def integrand(t):
        Rp = np.linalg.inv(H - (t + 1j * eta) * I)
        Rm = np.linalg.inv(H - (t - 1j * eta) * I)
        # the bracket is 2i Im R_+, so divide by 2 pi i to get Im R_+ / pi
        return np.diag(Rp - Rm).imag / (2 * math.pi) * float(tf(t)[0])

    lo, hi = float(H.diagonal().min()) - 2 * n - 10 * eta, float(H.diagonal().max()) + 2 * n + 10 * eta
    total = np.zeros(n)
    for a, b in [(-np.inf, lo), (lo, hi), (hi, np.inf)]:
        val, err = integrate.quad_vec(integrand, a, b, epsabs=epsabs, epsrel=1e-12, limit=400)
        total += val
    return total


# the fixed-point map ----------------------------------------------------------


def _omega(realization) -> np.ndarray:
    return np.asarray(realization.values if hasattr(realization, "values") else realization, dtype=float)


def phi_map(spec: HamiltonianSpec, realization, V) -> np.ndarray:
    """``Phi(V)(n) = sum_m a(n,m) F(A + lam omega + g V)_{mm}``."""
    op = assemble(spec, _omega(realization), V)
    a = spec.kernel.matrix(spec.box, spec.metric)
    return a @ F_of_H(spec.fspec, op)


@dataclass
class EffectivePotentialSolution:
    v_eff: np.ndarray
    iterations: int
    residuals: list
    contraction_bound: float
    empirical_rate: float
    admissible: bool
    derivative: np.ndarray | None = None
    omega: np.ndarray | None = field(default=None, repr=False)
    full_potential: np.ndarray | None = field(default=None, repr=False)

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0

    def to_rows(self, box: Box):
        return [(tuple(box.site(i)), float(v)) for i, v in enumerate(self.v_eff)]


class ConvergenceError(RuntimeError):
    pass


def contraction_bound(spec: HamiltonianSpec) -> float:
    """``|g| (72 sqrt2 / eta) S_{delta - nu} S_{-gamma_a} C_a ||F||`` with delta = nu/100."""
    fs, ker, met = spec.fspec, spec.kernel, spec.metric
    nu = choose_nu(met, spec.d, fs.eta)
    if nu <= 0:
        return math.inf
    dc = 0.01 * nu
    S1 = exp_sum(met, dc - nu, d=spec.d).upper
    S2 = exp_sum(met, -ker.gamma_a, d=spec.d).upper
    return abs(spec.g) * (72 * SQ2 / fs.eta) * S1 * S2 * ker.constant(met) * fs.sup_norm


def solve_fixed_point(spec: HamiltonianSpec, realization, tol: float = 1e-12, V0=None,
                      max_iter: int = 500, derivative: bool = False) -> EffectivePotentialSolution:
    """Iterate ``V <- Phi(V)`` from ``V0`` (default 0) until successive iterates agree to ``tol``."""
    omega = _omega(realization)
    b = contraction_bound(spec)
    admissible = b < 1
    if not admissible:
        warnings.warn(f"contraction bound {b:.3g} >= 1: outside the proven regime", RuntimeWarning, stacklevel=2)
    V = np.zeros(len(omega)) if V0 is None else np.asarray(V0, dtype=float).copy()
    residuals = []
    if spec.g == 0:
        # Phi does not depend on V: one application is the fixed point
        V = phi_map(spec, omega, V)
        residuals.append(0.0)
        it = 1
    else:
        it = 0
        while True:
            new = phi_map(spec, omega, V)
            r = float(np.max(np.abs(new - V)))
            V = new
            it += 1
            residuals.append(r)
            if r < tol:
                break
            # stalled at roundoff: further iterations only shuffle the last bits
            floor = 512 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(V))),
                                                    abs(spec.lam) * float(np.max(np.abs(omega))))
            if r < floor and len(residuals) > 2 and r >= residuals[-2]:
                break
            if it >= max_iter or not np.isfinite(r):
                raise ConvergenceError(f"no convergence after {it} iterations (residual {r:.3e})")
    ratios = [r1 / r0 for r0, r1 in zip(residuals[:-1], residuals[1:]) if r0 > 0 and r1 > 0]
    rate = float(np.median(ratios)) if ratios else 0.0
    U = omega + (spec.g / spec.lam) * V if spec.lam != 0 else None
    sol = EffectivePotentialSolution(V, it, residuals, b, rate, admissible, omega=omega, full_potential=U)
    if derivative:
        sol.derivative = derivative_matrix(spec, omega, sol)
    return sol


def diagonal_response(fspec: FSpec, op) -> np.ndarray:
    """``R(m, k) = d F(H)_{mm} / d H_{kk}`` by the Daleckii-Krein formula."""
    E, Q = op.eigh
    phi = fspec.divided_differences(E)
    # R[m, k] = sum_ij Q_mi Q_ki phi_ij Q_mj Q_kj
    W = Q[:, None, :] * Q[None, :, :]
    return np.einsum("mki,ij,mkj->mk", W, phi, W, optimize=True)


def response_contour(fspec: FSpec, op, epsabs: float = 1e-12) -> np.ndarray:
    """``r(u, v) = (1/2 pi i) int [G(u,v;t-i eta)^2 - G(u,v;t+i eta)^2] f(t) dt``.

    Validation route for the diagonal response: ``r = -R``.
    """
    H = op.matrix
    n = len(H)
    eta = fspec.eta
    tf = transform_f(fspec)
    I = np.eye(n)

    def integrand(t):
        Gm = np.linalg.inv(H - (t - 1j * eta) * I)
        Gp = np.linalg.inv(H - (t + 1j * eta) * I)
        return ((Gm * Gm.T - Gp * Gp.T) / (2j * math.pi)).real * float(tf(t)[0])

    lo, hi = float(H.diagonal().min()) - 2 * n - 10 * eta, float(H.diagonal().max()) + 2 * n + 10 * eta
    total = np.zeros((n, n))
    for a, b in [(-np.inf, lo), (lo, hi), (hi, np.inf)]:
        val, _ = integrate.quad_vec(integrand, a, b, epsabs=epsabs, epsrel=1e-12, limit=400)
        total += val
    return total


def derivative_matrix(spec: HamiltonianSpec, realization, solution) -> np.ndarray:
    """``D(n, l) = dV(n)/d omega(l)`` from ``(I - g a R) D = lam a R``."""
    omega = _omega(realization)
    op = assemble(spec, omega, solution.v_eff)
    R = diagonal_response(spec.fspec, op)
    aR = spec.kernel.matrix(spec.box, spec.metric) @ R
    if spec.g == 0:
        return spec.lam * aR
    M = np.eye(len(omega)) - spec.g * aR
    cond = np.linalg.cond(M)
    if cond > 1e12:
        raise np.linalg.LinAlgError(f"derivative system is near-singular (cond {cond:.2e})")
    return np.linalg.solve(M, spec.lam * aR)


# smallness constants -----------------------------------------------------------


@dataclass
class ValidityReport:
    nu: float
    eta: float
    F_sup: float
    C_a: float
    gamma_a: float
    delta_sum: float
    delta0: float
    delta_diff: float
    S: dict
    C1: float
    C2: float
    b1: float
    b2: float
    products: dict
    theta: float
    vartheta: float
    eps2: float
    v_eff_bound: float
    contraction: float
    volume_C: float
    admissible: dict
    envelope: dict

    @property
    def all_pass(self) -> bool:
        return all(self.admissible.values())

    def binding(self) -> str:
        """Name of the hypothesis closest to failing (largest product/limit)."""
        return max(self.products, key=lambda k: self.products[k][0] / self.products[k][1])

    def to_flat(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    if isinstance(vv, (tuple, list)):
                        out[f"{k}.{kk}"] = vv[0]
                    else:
                        out[f"{k}.{kk}"] = vv
            else:
                out[k] = v
        return out


def validity_check(spec: HamiltonianSpec) -> ValidityReport:
    """Evaluate every smallness hypothesis and proof constant from the parameters alone."""
    fs, ker, met, d = spec.fspec, spec.kernel, spec.metric, spec.d
    lam, g = abs(spec.lam), abs(spec.g)
    Fn, eta = fs.sup_norm, fs.eta
    Ca, ga = ker.constant(met), ker.gamma_a
    nu = choose_nu(met, d, eta)
    model = spec.model
    c1 = model.c1_value if model is not None else math.inf

    def S(beta):
        return exp_sum(met, beta, d=d).upper

    delta_sum = 0.9 * min(ga, 2 * nu)
    delta0 = min(nu, ga)
    delta_diff = 0.5 * delta0
    Ss = {
        "delta_sum-gamma": S(delta_sum - ga),
        "delta_sum-2nu": S(delta_sum - 2 * nu),
        "(delta_diff-delta0)/2": S((delta_diff - delta0) / 2),
        "-delta0/2": S(-delta0 / 2),
        "delta_diff-gamma": S(delta_diff - ga),
        "delta_diff-nu": S(delta_diff - nu),
        "-nu": S(-nu),
        "-gamma": S(-ga),
        "-delta_diff/2": S(-delta_diff / 2),
        "nu/100-nu": S(0.01 * nu - nu),
    }
    base = Ca * 72 * SQ2 * Fn / eta
    b2 = base * g * Ss["delta_sum-gamma"] * Ss["delta_sum-2nu"]
    b1 = base * lam * Ss["delta_sum-gamma"] * Ss["delta_sum-2nu"]
    C1 = 2 * b1
    C2 = (48 * Fn * Ca / eta**2) * Ss["(delta_diff-delta0)/2"] * Ss["-nu"] * (lam * g + g * g * C1)
    theta = 2 * (g / lam) * c1 * C1 + 4 * C2 * Ss["-delta_diff/2"] ** 2 if lam else math.inf
    vbound = Ss["-gamma"] * 18 * SQ2 * Fn
    vartheta = (2 * c1 * g / lam + 4 * c1 * C1 * g * g / lam**2) * vbound if lam else math.inf
    contraction = g * (72 * SQ2 / eta) * Ss["nu/100-nu"] * Ss["-gamma"] * Ca * Fn
    lem14 = 3 * SQ2 * g * Fn * Ss["-nu"] / eta
    products = {
        "derivative_sum": (b2, 0.5),
        "shift_sum": ((g / lam) * C1 if lam else math.inf, 0.5),
        "jacobian": ((g / lam) * C1 if lam else math.inf, 0.25),
        "derivative_difference": (g * base * Ss["(delta_diff-delta0)/2"] * Ss["-delta0/2"], 0.5),
        "conditional_ratio": (g * base * Ss["delta_diff-gamma"] * Ss["delta_diff-nu"], 0.5),
        "finite_volume": (lem14, 0.5),
        "contraction": (contraction, 1.0),
    }
    admissible = {k: bool(nu > 0 and v < lim) for k, (v, lim) in products.items()}
    # exponential-envelope regime: needs the declared envelope and theta < eps2/2 < c_rho/4
    env = {"available": False, "passed": False}
    eps2 = math.nan
    if model is not None and model.c_rho is not None:
        eps2 = max(model.eps2_value, 2.02 * theta)
        env = {"available": True, "passed": bool(theta < eps2 / 2 and eps2 < model.c_rho / 2),
               "eps": 1.5 * eps2}
    return ValidityReport(nu, eta, Fn, Ca, ga, delta_sum, delta0, delta_diff, Ss, C1, C2, b1, b2,
                          products, theta, vartheta, eps2, vbound, contraction,
                          432 * Ca * Fn * g * Ss["-nu"] / eta, admissible, env)


# resampling ----------------------------------------------------------------------


def inverse_map(spec: HamiltonianSpec, U_target, omega_start, subset=None, tol: float = 1e-13,
                max_iter: int = 200, V_start=None):
    """Solve ``omega + (g/lam) V_eff(omega) = U`` on ``subset``; other sites keep ``omega_start``.

    Returns ``(omega, solution)``.
    """
    omega = np.asarray(omega_start, dtype=float).copy()
    idx = np.arange(len(omega)) if subset is None else np.asarray(subset, dtype=int)
    U_target = np.asarray(U_target, dtype=float)
    ratio = spec.g / spec.lam
    V = None if V_start is None else np.asarray(V_start, dtype=float)
    for _ in range(max_iter):
        sol = solve_fixed_point(spec, omega, tol=min(tol, 1e-13), V0=V)
        V = sol.v_eff
        new = omega.copy()
        new[idx] = U_target[idx] - ratio * V[idx]
        step = float(np.max(np.abs(new - omega)))
        omega = new
        if step < tol:
            sol = solve_fixed_point(spec, omega, tol=min(tol, 1e-13), V0=V)
            return omega, sol
    raise ConvergenceError(f"inverse map did not converge (last step {step:.2e})")


def resample_map(spec: HamiltonianSpec, realization, solution, n0: int, alpha: float, subset=None,
                 tol: float = 1e-13):
    """Disorder ``omega_alpha`` whose full potential equals U except ``U(n0) = alpha``."""
    omega = _omega(realization)
    U = omega + (spec.g / spec.lam) * solution.v_eff
    if alpha == U[n0]:
        return omega.copy(), solution
    U_alpha = U.copy()
    U_alpha[n0] = alpha
    start = omega.copy()
    start[n0] = alpha - (spec.g / spec.lam) * solution.v_eff[n0]
    return inverse_map(spec, U_alpha, start, subset=subset, tol=tol, V_start=solution.v_eff)
