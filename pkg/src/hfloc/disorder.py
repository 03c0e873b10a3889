"""Single-site disorder densities and their regularity constants.

Every density has full support except the test-only ``uniform`` model, which
exists so the support check has something to reject.  Log-densities are used
throughout because the exponential tails underflow long before the grids end.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc

from .lattice import Box

KINDS = ("cauchy", "two_sided_exponential", "perturbed_exponential", "uniform")


@dataclass(frozen=True)
class DisorderModel:
    """Density family plus declared regularity constants.

    ``c1`` and ``eps1`` bound the log-ratio and the smoothed-ratio supremum of
    the density; ``c_rho`` and ``eps2`` describe the exponential envelope
    ``rho = h exp(-c_rho |v|)`` where one exists.
    """

    kind: str
    scale: float = 1.0
    c_rho: float | None = None
    alpha: float = 0.0
    k: float = 2.0
    eps: float = 0.0
    c1: float | None = None
    eps1: float = 1.0
    eps2: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown disorder kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.kind in ("two_sided_exponential", "perturbed_exponential"):
            if self.c_rho is None or not self.c_rho > 0:
                raise ValueError(f"{self.kind} needs c_rho > 0")
        if self.kind == "perturbed_exponential":
            if not (self.alpha > 0 and self.k > 1 and self.eps >= 0):
                raise ValueError("perturbed_exponential needs alpha > 0, k > 1, eps >= 0")
        if self.eps2 is not None and self.c_rho is not None and not 0 < self.eps2 < self.c_rho / 2:
            raise ValueError(f"eps2={self.eps2} must lie in (0, c_rho/2) with c_rho={self.c_rho}")

    # constants -----------------------------------------------------------

    @property
    def rate(self) -> float:
        """Total exponential decay rate of the density."""
        if self.kind == "two_sided_exponential":
            return self.c_rho
        if self.kind == "perturbed_exponential":
            return self.c_rho + self.alpha
        raise AttributeError(f"{self.kind} has no exponential rate")

    @property
    def normalizer(self) -> float:
        if self.kind == "perturbed_exponential":
            a = self.rate
            return 1.0 / (2.0 * (1.0 / a + self.eps * gamma_fn(self.k + 1) / a ** (self.k + 1)))
        if self.kind == "two_sided_exponential":
            return self.c_rho / 2
        if self.kind == "cauchy":
            return 1.0 / (math.pi * self.scale)
        return 1.0 / (2 * self.scale)

    @property
    def sup_density(self) -> float:
        """``||rho||_inf``; all built-in densities peak at the origin."""
        return float(self.density(0.0))

    @property
    def log_lipschitz(self) -> float:
        """Smallest c1 with ``rho(v1)/rho(v2) >= exp(-c1 |v1 - v2|)``."""
        if self.kind == "cauchy":
            return 1.0 / self.scale
        if self.kind == "two_sided_exponential":
            return self.c_rho
        if self.kind == "perturbed_exponential":
            return max(self.rate, self._poly_slope_max() - self.rate)
        return math.inf

    @property
    def envelope_slope(self) -> float:
        """Smallest eps2 with ``h(v1)/h(v2) >= exp(-eps2 |v1 - v2|)``."""
        if self.kind == "two_sided_exponential":
            return 0.0
        if self.kind == "perturbed_exponential":
            return max(self.alpha, self._poly_slope_max() - self.alpha)
        return math.inf

    def _poly_slope_max(self) -> float:
        # max over v >= 0 of d/dv log(1 + eps v^k), attained at v^k = (k-1)/eps
        if self.eps == 0:
            return 0.0
        vstar = ((self.k - 1) / self.eps) ** (1 / self.k)
        return self.eps * vstar ** (self.k - 1)

    @property
    def c1_value(self) -> float:
        return self.c1 if self.c1 is not None else self.log_lipschitz

    @property
    def eps2_value(self) -> float:
        if self.eps2 is not None:
            return self.eps2
        if self.c_rho is None:
            return math.inf
        # halfway between the measured slope and the c_rho/2 ceiling
        return 0.5 * (self.envelope_slope + self.c_rho / 2) if self.envelope_slope < self.c_rho / 2 else math.inf

    # density / cdf --------------------------------------------------------

    def log_density(self, v):
        v = np.asarray(v, dtype=float)
        a = np.abs(v)
        if self.kind == "cauchy":
            s = self.scale
            return -np.log(math.pi * s) - np.log1p((v / s) ** 2)
        if self.kind == "two_sided_exponential":
            return math.log(self.c_rho / 2) - self.c_rho * a
        if self.kind == "perturbed_exponential":
            return math.log(self.normalizer) + np.log1p(self.eps * a**self.k) - self.rate * a
        with np.errstate(divide="ignore"):
            return np.where(a <= self.scale, -math.log(2 * self.scale), -np.inf)

    def density(self, v):
        return np.exp(self.log_density(v))

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "cauchy":
            return 0.5 + np.arctan(v / self.scale) / math.pi
        if self.kind == "two_sided_exponential":
            c = self.c_rho
            return np.where(v < 0, 0.5 * np.exp(c * np.minimum(v, 0)), 1 - 0.5 * np.exp(-c * np.maximum(v, 0)))
        if self.kind == "perturbed_exponential":
            a, k = self.rate, self.k
            x = a * np.abs(v)
            half = self.normalizer * (-np.expm1(-x) / a + self.eps * gamma_fn(k + 1) * gammainc(k + 1, x) / a ** (k + 1))
            return 0.5 + np.sign(v) * half
        return np.clip((v + self.scale) / (2 * self.scale), 0.0, 1.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "cauchy":
            return self.scale * np.tan(math.pi * (u - 0.5))
        if self.kind == "two_sided_exponential":
            c = self.c_rho
            lo = np.log(2 * np.minimum(u, 0.5)) / c
            hi = -np.log(2 * (1 - np.maximum(u, 0.5))) / c
            return np.where(u < 0.5, lo, hi)
        if self.kind == "uniform":
            return self.scale * (2 * u - 1)
        return self._bisect_quantile(u)

    def _bisect_quantile(self, u, iters: int = 80):
        # symmetric: solve cdf(x) = 1/2 + |u - 1/2| on x >= 0
        target = 0.5 + np.abs(u - 0.5)
        hi = np.full(u.shape, 1.0)
        while True:
            short = self.cdf(hi) < target
            if not short.any():
                break
            hi[short] *= 2
        lo = np.zeros(u.shape)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return np.sign(u - 0.5) * 0.5 * (lo + hi)

    # serialization ---------------------------------------------------------

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def cauchy(scale: float = 1.0, **kw) -> DisorderModel:
    return DisorderModel("cauchy", scale=scale, **kw)


def two_sided_exponential(c_rho: float = 1.0, **kw) -> DisorderModel:
    kw.setdefault("eps2", c_rho / 4)
    return DisorderModel("two_sided_exponential", c_rho=c_rho, **kw)


def perturbed_exponential(c: float = 1.0, alpha: float = 0.2, k: float = 2.0, eps: float = 0.1, **kw) -> DisorderModel:
    return DisorderModel("perturbed_exponential", c_rho=c, alpha=alpha, k=k, eps=eps, **kw)


def uniform(half_width: float = 1.0) -> DisorderModel:
    """Test-only: violates the full-support requirement."""
    return DisorderModel("uniform", scale=half_width)


# sampling -------------------------------------------------------------------


def _zigzag(c: int) -> int:
    return 2 * c if c >= 0 else -2 * c - 1


def site_uniforms(seed: int, coords: np.ndarray, stream: int = 0) -> np.ndarray:
    """One uniform in (0, 1) per site from a stream keyed by its coordinates.

    Keying by coordinates rather than box index makes nested boxes share the
    disorder on their common sites.
    """
    out = np.empty(len(coords))
    for i, c in enumerate(coords):
        key = (int(stream),) + tuple(_zigzag(int(x)) for x in c)
        state = np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0]
        out[i] = ((int(state) >> 11) + 0.5) * 2.0**-53
    return out


@dataclass(frozen=True)
class Realization:
    box: Box
    values: np.ndarray = field(repr=False)
    seed: int | None = None
    stream: int = 0

    def restrict(self, box: Box) -> "Realization":
        """Disorder of a sub-box (coupled sampling of nested volumes)."""
        idx = [self.box.locate(s) for s in box.sites]
        return Realization(box, self.values[idx].copy(), self.seed, self.stream)

    def with_values(self, values) -> "Realization":
        return Realization(self.box, np.asarray(values, dtype=float), self.seed, self.stream)


def sample(model: DisorderModel, seed: int, box: Box, stream: int = 0) -> Realization:
    """i.i.d. draws on the box by inverse CDF, deterministic in (seed, stream, site)."""
    u = site_uniforms(seed, box.sites, stream)
    return Realization(box, np.asarray(model.quantile(u), dtype=float), seed, stream)


def draw(model: DisorderModel, rng: np.random.Generator, size) -> np.ndarray:
    """Bulk i.i.d. draws from a caller-owned generator."""
    return np.asarray(model.quantile(rng.random(size)), dtype=float)


# assumption checks ---------------------------------------------------------


@dataclass
class AssumptionReport:
    passed: bool
    constants: dict
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)


def _pair_grid(limit: float, n: int):
    v = np.linspace(-limit, limit, n)
    v1, v2 = np.meshgrid(v, v, indexing="ij")
    mask = v1 != v2
    return v1[mask], v2[mask]


def fluctuation_ratio(model: DisorderModel, eps: float, v) -> np.ndarray:
    """``rho(v) / int rho(a) exp(-eps |v - a|) da`` on a grid of v."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    out = np.empty(v.shape)
    for i, x in enumerate(v):
        lx = model.log_density(x)
        if not np.isfinite(lx):
            out[i] = 0.0
            continue

        def integrand(a):
            return math.exp(float(model.log_density(a)) - lx - eps * abs(x - a))

        pieces = [(-np.inf, min(x, 0.0)), (min(x, 0.0), max(x, 0.0)), (max(x, 0.0), np.inf)]
        total = 0.0
        for lo, hi in pieces:
            if lo < hi:
                total += integrate.quad(integrand, lo, hi, limit=200, epsabs=0, epsrel=1e-11)[0]
        out[i] = 1.0 / total
    return out


def support_check(model: DisorderModel, limit: float = 200.0, n: int = 4001) -> bool:
    return bool(np.all(np.isfinite(model.log_density(np.linspace(-limit, limit, n)))))


def check_assumption6(model: DisorderModel, limit: float = 30.0, n: int = 241, ratio_grid=None) -> AssumptionReport:
    """Grid certificate for the log-ratio bound and the smoothed-ratio supremum."""
    notes = []
    if not support_check(model):
        return AssumptionReport(False, {"c1": math.inf, "eps1": model.eps1}, notes=["support is not all of R"])
    v1, v2 = _pair_grid(limit, n)
    # adjacent fine pairs capture the local slope
    fine = np.linspace(-limit, limit, 20 * n)
    v1 = np.concatenate([v1, fine[:-1]])
    v2 = np.concatenate([v2, fine[1:]])
    slope = (model.log_density(v2) - model.log_density(v1)) / np.abs(v1 - v2)
    c1_found = float(slope.max())
    c1 = model.c1_value
    bad = np.flatnonzero(model.log_density(v1) - model.log_density(v2) < -c1 * np.abs(v1 - v2) - 1e-12)
    violations = [(float(v1[i]), float(v2[i])) for i in bad[:20]]
    grid = np.linspace(-limit, limit, 121) if ratio_grid is None else ratio_grid
    ratio = fluctuation_ratio(model, model.eps1, grid)
    sup_ratio = float(ratio.max())
    if not np.isfinite(sup_ratio):
        notes.append("smoothed ratio is unbounded on the grid")
    passed = not violations and np.isfinite(sup_ratio) and c1_found <= c1 + 1e-9
    return AssumptionReport(
        bool(passed),
        {"c1": c1, "c1_grid": c1_found, "eps1": model.eps1, "sup_ratio": sup_ratio},
        violations,
        notes,
    )


def check_assumption7(model: DisorderModel, c_rho: float | None = None, limit: float = 30.0, n: int = 241) -> AssumptionReport:
    """Grid certificate for the exponential envelope ``h = rho exp(c_rho |v|)``.

    Models without a declared envelope are probed with ``c_rho`` (default 1).
    """
    c = model.c_rho if c_rho is None else c_rho
    notes = []
    if c is None:
        c = 1.0
        notes.append("no declared envelope; probed with c_rho = 1")
    if not support_check(model):
        return AssumptionReport(False, {"c_rho": c, "eps2": math.inf}, notes=notes + ["support is not all of R"])
    v1, v2 = _pair_grid(limit, n)
    fine = np.linspace(-limit, limit, 20 * n)
    v1 = np.concatenate([v1, fine[:-1]])
    v2 = np.concatenate([v2, fine[1:]])

    def log_h(v):
        return model.log_density(v) + c * np.abs(v)

    slope = np.abs(log_h(v2) - log_h(v1)) / np.abs(v1 - v2)
    eps2_found = float(slope.max())
    eps2 = model.eps2 if (model.eps2 is not None and c == model.c_rho) else eps2_found
    bad = np.flatnonzero(log_h(v1) - log_h(v2) < -eps2 * np.abs(v1 - v2) - 1e-12)
    violations = [(float(v1[i]), float(v2[i])) for i in bad[:20]]
    if eps2_found >= c / 2:
        notes.append(f"envelope slope {eps2_found:.4g} is not below c_rho/2 = {c / 2:.4g}")
    passed = not violations and eps2_found < c / 2 and eps2 < c / 2
    return AssumptionReport(bool(passed), {"c_rho": c, "eps2": eps2, "eps2_grid": eps2_found}, violations, notes)


def normalization_error(model: DisorderModel) -> float:
    f = lambda v: float(model.density(v))
    if model.kind == "uniform":
        total = integrate.quad(f, -model.scale, model.scale)[0]
    else:
        total = sum(integrate.quad(f, lo, hi, limit=400, epsabs=1e-13, epsrel=1e-12)[0]
                    for lo, hi in [(-np.inf, 0.0), (0.0, np.inf)])
    return abs(total - 1.0)
