"""Assembly of ``H = A + lam * diag(omega) + g * diag(V)`` on boxes and sub-volumes.

Also: Green's functions, the free Green's function on Z^d with a truncation
certificate, the Combes-Thomas check, and the depleted-resolvent expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Box, Metric, make_box


@dataclass(frozen=True)
class HamiltonianSpec:
    """All parameters fixing ``H_{omega,L}`` apart from the disorder draw."""

    d: int
    L: int
    lam: float
    g: float
    fspec: object
    kernel: object
    metric: Metric = Metric()
    model: object = None

    def __post_init__(self):
        Box(self.d, self.L)  # shape checks only; sites stay lazy
        if not (math.isfinite(self.lam) and math.isfinite(self.g)):
            raise ValueError("lam and g must be finite")

    @cached_property
    def box(self) -> Box:
        return make_box(self.d, self.L)

    def replace(self, **kw) -> "HamiltonianSpec":
        data = {f: getattr(self, f) for f in ("d", "L", "lam", "g", "fspec", "kernel", "metric", "model")}
        data.update(kw)
        return HamiltonianSpec(**data)


@dataclass
class AssembledOperator:
    """Dense symmetric matrix on a subset of a box.

    ``index`` lists the box indices of the rows, in box order.
    """

    box: Box
    index: np.ndarray
    matrix: np.ndarray
    v_eff: np.ndarray | None = None
    _lu: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.index)

    @cached_property
    def position(self) -> dict[int, int]:
        return {int(b): i for i, b in enumerate(self.index)}

    def row(self, site) -> int:
        b = self.box.locate(site)
        try:
            return self.position[b]
        except KeyError:
            raise IndexError(f"site {tuple(site)} is not in the sub-volume") from None

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        E, Q = np.linalg.eigh(self.matrix)
        return E, Q

    def restrict(self, keep) -> "AssembledOperator":
        """Sub-volume given as box indices or sites; deletes the other rows/columns."""
        keep_idx = _as_box_indices(self.box, keep)
        rows = np.array([self.position[int(b)] for b in keep_idx], dtype=int)
        order = np.argsort(self.index[rows])
        rows = rows[order]
        return AssembledOperator(self.box, self.index[rows], self.matrix[np.ix_(rows, rows)].copy(), self.v_eff)

    def without(self, site) -> "AssembledOperator":
        b = self.box.locate(site)
        return self.restrict([i for i in self.index if i != b])

    def factor(self, z: complex):
        z = complex(z)
        if z not in self._lu:
            M = self.matrix.astype(complex) - z * np.eye(len(self))
            if z.imag == 0:
                E = self.eigh[0]
                if len(E) and np.min(np.abs(E - z.real)) < 1e-13 * max(1.0, np.abs(E).max()):
                    raise np.linalg.LinAlgError(f"z={z} is an eigenvalue")
            self._lu[z] = sla.lu_factor(M)
        return self._lu[z]

    def resolvent_column(self, n_row: int, z: complex) -> np.ndarray:
        e = np.zeros(len(self), dtype=complex)
        e[n_row] = 1.0
        x = sla.lu_solve(self.factor(z), e)
        resid = (self.matrix - z * np.eye(len(self))) @ x - e
        if np.max(np.abs(resid)) > 1e-10 * max(1.0, np.max(np.abs(x))):
            raise FloatingPointError(f"resolvent residual {np.max(np.abs(resid)):.3e}")
        return x

    def resolvent(self, z: complex) -> np.ndarray:
        """Full ``(H - z)^{-1}`` from the eigendecomposition."""
        E, Q = self.eigh
        return (Q / (E - z)) @ Q.T

    def dump_triplets(self, path) -> None:
        i, j = np.nonzero(self.matrix)
        with open(path, "w") as fh:
            for a, b in zip(i, j):
                fh.write(f"{self.index[a]} {self.index[b]} {self.matrix[a, b]!r}\n")


def _as_box_indices(box: Box, sites) -> np.ndarray:
    if sites is None:
        return np.arange(len(box))
    out = []
    for s in sites:
        if np.ndim(s) == 0:
            i = int(s)
            if not 0 <= i < len(box):
                raise IndexError(f"box index {i} out of range")
            out.append(i)
        else:
            out.append(box.locate(s))
    return np.array(sorted(set(out)), dtype=int)


def assemble(spec: HamiltonianSpec, realization, v_eff=None, subset=None) -> AssembledOperator:
    """``1_S (A + lam omega + g V) 1_S`` with V the full-box effective potential."""
    box = spec.box
    omega = np.asarray(realization.values if hasattr(realization, "values") else realization, dtype=float)
    if omega.shape != (len(box),):
        raise ValueError(f"disorder has shape {omega.shape}, box needs ({len(box)},)")
    v = np.zeros(len(box)) if v_eff is None else np.asarray(v_eff, dtype=float)
    if v.shape != (len(box),):
        raise ValueError(f"v_eff has shape {v.shape}, box needs ({len(box)},)")
    idx = _as_box_indices(box, subset)
    H = box.adjacency[np.ix_(idx, idx)].copy()
    H[np.diag_indices_from(H)] = spec.lam * omega[idx] + spec.g * v[idx]
    return AssembledOperator(box, idx, H, v)


def green(op: AssembledOperator, m, n, z: complex) -> complex:
    """``<delta_m, (H - z)^{-1} delta_n>`` by LU solve."""
    z = complex(z)
    col = op.resolvent_column(op.row(n), z)
    val = complex(col[op.row(m)])
    if z.imag != 0 and abs(val) > (1 + 1e-9) / abs(z.imag):
        raise FloatingPointError(f"|G|={abs(val):.3e} exceeds 1/|Im z|")
    return val


# free Green's function -----------------------------------------------------


def spectral_distance(d: int, z: complex) -> float:
    """Distance from z to the spectrum ``[-2d, 2d]`` of the adjacency operator."""
    x, y = z.real, z.imag
    dx = max(abs(x) - 2 * d, 0.0)
    return math.hypot(dx, y)


def free_ct_constants(d: int, z: complex, rate: float | None = None) -> tuple[float, float]:
    """``(C, mu)`` with ``|G0(x, y; z)| <= C exp(-mu |x - y|_1)``.

    From the weighted-hopping perturbation bound: the weighted adjacency differs
    from A by at most ``2d (e^mu - 1)`` in norm.  Default ``mu`` halves the gap.
    """
    gap = spectral_distance(d, z)
    if gap <= 0:
        raise ValueError(f"z={z} lies in the free spectrum")
    mu = math.log1p(gap / (4 * d)) if rate is None else rate
    denom = gap - 2 * d * math.expm1(mu)
    if denom <= 0:
        raise ValueError(f"rate {mu} exceeds the Combes-Thomas range for z={z}")
    return 1.0 / denom, mu


def _free_box_matrix(d: int, R: int) -> sp.csr_matrix:
    n = 2 * R + 1
    path = sp.diags([np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="csr")
    eye = sp.identity(n, format="csr")
    A = sp.csr_matrix((n**d, n**d))
    for axis in range(d):
        term = None
        for j in range(d):
            f = path if j == axis else eye
            term = f if term is None else sp.kron(term, f, format="csr")
        A = A + term
    return A.tocsc()


@dataclass(frozen=True)
class FreeGreenTable:
    """Column ``G0(0, v; z)`` on the box ``[-R, R]^d`` with an entrywise error bound."""

    d: int
    z: complex
    R: int
    values: np.ndarray
    error_bound: np.ndarray

    def at(self, v) -> complex:
        n = 2 * self.R + 1
        flat = 0
        for c in v:
            if abs(c) > self.R:
                raise IndexError(f"site {v} outside radius {self.R}")
            flat = flat * n + (int(c) + self.R)
        return complex(self.values[flat])

    @cached_property
    def l1(self) -> np.ndarray:
        return make_box(self.d, self.R, cap=self.values.size).sites.__abs__().sum(axis=1)


def _truncation_error(d: int, z: complex, R: int, l1) -> np.ndarray:
    """Entrywise bound on ``|G0 - G0_R|`` optimized over the Combes-Thomas rate."""
    gap = spectral_distance(d, z)
    mu_max = math.log1p(gap / (2 * d))
    # G - G_R = sum over cut bonds (b, b') of G_R(0, b) G(b', v); |b| >= R, |b'| = |b| + 1
    bonds = 2 * d * (2 * R + 1) ** (d - 1)
    mus = mu_max * np.linspace(0.02, 0.98, 49)
    denom = gap - 2 * d * np.expm1(mus)
    logs = math.log(bonds) - 2 * np.log(denom)[:, None] - mus[:, None] * (2 * R + 1 - np.atleast_1d(l1))[None, :]
    return np.exp(logs.min(axis=0))


def certified_radius(d: int, z: complex, k: int, accuracy: float) -> int:
    """Smallest radius whose truncation bound at l1 distance ``k`` is below ``accuracy``."""
    R = max(k + 1, 4)
    while _truncation_error(d, z, R, k)[0] >= accuracy:
        R = int(R * 1.25) + 1
    return R


def free_green_table(d: int, z: complex, R: int) -> FreeGreenTable:
    z = complex(z)
    n = 2 * R + 1
    A = _free_box_matrix(d, R)
    rhs = np.zeros(n**d, dtype=complex)
    centre = sum(R * n**j for j in range(d))
    rhs[centre] = 1.0
    x = spla.spsolve((A - z * sp.identity(n**d, format="csc")).tocsc(), rhs)
    l1 = np.abs(np.array(np.unravel_index(np.arange(n**d), (n,) * d)).T - R).sum(axis=1)
    return FreeGreenTable(d, z, R, x, _truncation_error(d, z, R, l1))


def free_green(d: int, u, v, z: complex, accuracy: float = 1e-10, radius_cap: int | None = None) -> complex:
    """``<delta_u, (A - z)^{-1} delta_v>`` on Z^d by certified large-box truncation.

    The radius comes from the truncation bound; a second solve at a larger
    radius must agree within ``accuracy``.
    """
    z = complex(z)
    w = np.asarray(v, dtype=int) - np.asarray(u, dtype=int)
    if w.shape != (d,):
        raise ValueError("site dimension does not match d")
    if spectral_distance(d, z) <= 0:
        raise ValueError(f"z={z} lies in the free spectrum")
    cap = radius_cap or {1: 200_000, 2: 600, 3: 60}.get(d, 12)
    R = certified_radius(d, z, int(np.abs(w).sum()), accuracy)
    if R > cap:
        raise RuntimeError(f"free Green's function needs radius {R} > cap {cap}")
    vals = [free_green_table(d, z, r).at(w) for r in (R, min(int(1.25 * R) + 1, max(cap, R)))]
    if abs(vals[0] - vals[1]) >= accuracy:
        raise RuntimeError(f"free Green's function unstable between radii: {abs(vals[0] - vals[1]):.2e}")
    return vals[1]


def free_green_1d_exact(v: int, z: complex) -> complex:
    """Closed form ``-x^|v| / sqrt(z^2 - 4)`` with ``|x| < 1``, ``x + 1/x = z``."""
    z = complex(z)
    root = np.sqrt(z * z - 4)
    x = (z - root) / 2
    if abs(x) > 1:
        root = -root
        x = (z - root) / 2
    return complex(-(x ** abs(v)) / root)


# Combes-Thomas -------------------------------------------------------------


def neighbour_weight_sum(metric: Metric, d: int, nu: float) -> float:
    """``sup_n sum_{|n'-n|=1} exp(nu d(n, n'))``."""
    return 2 * d * math.exp(nu * metric.neighbour_distance())


def choose_nu(metric: Metric, d: int, eta: float, margin: float = 0.9, step: float = 1e-3) -> float:
    """Largest ``nu`` on a grid with neighbour sum ``<= margin * eta / 2``; 0 if none."""
    ratio = margin * eta / (4 * d)
    if ratio <= 1:
        return 0.0
    nu_max = math.log(ratio) / metric.neighbour_distance()
    nu = math.floor(nu_max / step) * step
    while nu > 0 and neighbour_weight_sum(metric, d, nu) > margin * eta / 2:
        nu -= step
    return round(max(nu, 0.0), 12)


@dataclass
class CTCertificate:
    passed: bool
    nu: float
    eta: float
    max_ratio: float
    violations: list

    @property
    def slack(self) -> float:
        return 1.0 - self.max_ratio


def combes_thomas_check(op: AssembledOperator, eta: float, metric: Metric, nu: float | None = None,
                        t_grid=None, rtol: float = 1e-10) -> CTCertificate:
    """Check ``|G(u, v; t +- i eta)| <= (2/eta) exp(-nu d(u, v))`` for all pairs."""
    d = op.box.d
    if nu is None:
        nu = choose_nu(metric, d, eta)
    if not neighbour_weight_sum(metric, d, nu) < eta / 2:
        raise ValueError(f"nu={nu} is not admissible for eta={eta}")
    E, _ = op.eigh
    if t_grid is None:
        t_grid = np.linspace(E.min() - eta, E.max() + eta, 21)
    sites = op.box.sites[op.index]
    k = np.abs(sites[:, None, :] - sites[None, :, :]).sum(axis=-1)
    bound = (2 / eta) * np.exp(-nu * metric.radial(k))
    worst = 0.0
    violations = []
    for t in t_grid:
        for sgn in (1, -1):
            G = np.abs(op.resolvent(t + sgn * 1j * eta))
            ratio = G / bound
            worst = max(worst, float(ratio.max()))
            for a, b in zip(*np.nonzero(ratio > 1 + rtol)):
                violations.append((float(t), sgn, int(op.index[a]), int(op.index[b]), float(ratio[a, b])))
    return CTCertificate(not violations, nu, eta, worst, violations)


# depleted resolvent --------------------------------------------------------


def depleted_expansion(op: AssembledOperator, m, n, z: complex) -> tuple[complex, complex]:
    """Both sides of ``G(m,n) = -G(m,m) sum_{m' ~ m} G^{minus m}(m', n)``."""
    if tuple(m) == tuple(n):
        raise ValueError("identity needs m != n")
    lhs = green(op, m, n, z)
    gmm = green(op, m, m, z)
    rest = op.without(m)
    total = 0j
    for b in op.box.neighbours(op.box.locate(m)):
        if int(b) in rest.position:
            total += green(rest, op.box.site(int(b)), n, z)
    return lhs, -gmm * total
