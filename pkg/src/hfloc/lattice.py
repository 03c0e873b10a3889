"""Finite boxes of Z^d, lattice metrics and exponential sums.

Sites are integer tuples.  A :class:`Box` enumerates ``[-L, L]^d`` in
lexicographic order, which fixes the row/column order of every matrix and
the order of every random draw in the package.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import comb

MAX_SITES = 20_000

Site = tuple[int, ...]


@dataclass(frozen=True)
class Box:
    """The box ``Lambda_L = [-L, L]^d ∩ Z^d``."""

    d: int
    L: int
    cap: int = field(default=MAX_SITES, compare=False, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.L < 0:
            raise ValueError(f"half-width must be >= 0, got {self.L}")
        if (2 * self.L + 1) ** self.d > self.cap:
            raise OverflowError(
                f"box with d={self.d}, L={self.L} has {(2 * self.L + 1) ** self.d} "
                f"sites, above the cap of {self.cap}"
            )

    @cached_property
    def sites(self) -> np.ndarray:
        side = range(-self.L, self.L + 1)
        return np.array(list(itertools.product(side, repeat=self.d)), dtype=np.int64)

    @cached_property
    def index(self) -> dict[Site, int]:
        return {tuple(int(c) for c in s): i for i, s in enumerate(self.sites)}

    def __len__(self):
        return (2 * self.L + 1) ** self.d

    def site(self, i: int) -> Site:
        return tuple(int(c) for c in self.sites[i])

    def locate(self, site) -> int:
        key = tuple(int(c) for c in site)
        try:
            return self.index[key]
        except KeyError:
            raise IndexError(f"site {key} is not in the box of half-width {self.L}") from None

    def contains(self, site) -> bool:
        return len(site) == self.d and all(abs(int(c)) <= self.L for c in site)

    @cached_property
    def l1_distances(self) -> np.ndarray:
        diff = self.sites[:, None, :] - self.sites[None, :, :]
        return np.abs(diff).sum(axis=-1)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Adjacency matrix of the box (hopping 1 between nearest neighbours)."""
        return (self.l1_distances == 1).astype(float)

    def neighbours(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.l1_distances[i] == 1)


def make_box(d: int, L: int, cap: int = MAX_SITES) -> Box:
    return Box(d, L, cap)


@dataclass(frozen=True)
class Metric:
    """Translation-invariant metric on Z^d built from the l1 distance ``k``.

    ``ell1`` is ``k`` itself; ``scaled_log`` is ``kappa * log(1 + k)``, for which
    ``exp(-gamma * d)`` decays polynomially like ``(1 + k)^(-gamma * kappa)``.
    """

    kind: str = "ell1"
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ell1", "scaled_log"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "scaled_log" and not self.kappa > 0:
            raise ValueError("scaled_log metric needs kappa > 0")

    def radial(self, k):
        k = np.asarray(k, dtype=float)
        if self.kind == "ell1":
            return k
        return self.kappa * np.log1p(k)

    def __call__(self, m, n) -> float:
        m, n = np.asarray(m), np.asarray(n)
        if m.shape != n.shape:
            raise ValueError(f"dimension mismatch: {m.shape} vs {n.shape}")
        return float(self.radial(np.abs(m - n).sum()))

    def on_box(self, box: Box) -> np.ndarray:
        """Pairwise distance matrix between the sites of ``box``."""
        return self.radial(box.l1_distances)

    def neighbour_distance(self) -> float:
        return float(self.radial(1))

    def to_dict(self):
        return {"kind": self.kind, "kappa": self.kappa}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def sphere_counts(d: int, k) -> np.ndarray:
    """Number of points of Z^d at l1 distance exactly ``k`` from the origin."""
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    out = np.zeros(k.shape, dtype=float)
    pos = k > 0
    for j in range(1, d + 1):
        out[pos] += 2.0**j * comb(d, j) * comb(k[pos] - 1, j - 1)
    out[k == 0] = 1.0
    return out


@dataclass(frozen=True)
class ExpSum:
    """Value of ``sum_v exp(beta d(u, v))`` with a certified truncation bound."""

    value: float
    tail_bound: float
    radius: int | None
    converged: bool = True

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound


def _tail_bound(metric: Metric, d: int, beta: float, R: int) -> float:
    if metric.kind == "ell1":
        # |sphere_k| <= 2^d C(k+d-1, d-1); its growth ratio is (k+d)/(k+1)
        q = math.exp(beta) * (R + 1 + d) / (R + 2)
        if q >= 1.0:
            return math.inf
        first = 2.0**d * comb(R + d, d - 1) * math.exp(beta * (R + 1))
        return first / (1.0 - q)
    p = -beta * metric.kappa - d + 1.0
    if p <= 1.0:
        return math.inf
    return 2.0**d * (R + 1.0) ** (1.0 - p) / (p - 1.0)


@lru_cache(maxsize=512)
def _lattice_exp_sum(metric: Metric, d: int, beta: float, tol: float, radius_cap: int) -> ExpSum:
    if beta == -math.inf:
        return ExpSum(1.0, 0.0, 0)
    R = 16
    while True:
        k = np.arange(R + 1)
        value = float(np.sum(sphere_counts(d, k) * np.exp(beta * metric.radial(k))))
        bound = _tail_bound(metric, d, beta, R)
        if bound <= tol:
            return ExpSum(value, bound, R)
        if R >= radius_cap:
            return ExpSum(value, bound, R, converged=False)
        R = min(2 * R, radius_cap)


def exp_sum(
    metric: Metric,
    beta: float,
    d: int | None = None,
    box: Box | None = None,
    center=None,
    tol: float = 1e-10,
    radius_cap: int = 1 << 22,
) -> ExpSum:
    """Exponential sum ``S_beta = sup_u sum_v exp(beta d(u, v))``.

    With ``box`` the sum runs over the box (sup over centres in the box unless
    ``center`` is given).  Without it the sum is over all of Z^d, truncated at
    a radius where the analytic tail bound drops below ``tol``; both metrics are
    translation invariant so the centre is irrelevant there.
    """
    if box is not None:
        dist = metric.on_box(box)
        if center is not None:
            row = dist[box.locate(center)]
            return ExpSum(float(np.exp(beta * row).sum()), 0.0, None)
        return ExpSum(float(np.exp(beta * dist).sum(axis=1).max()), 0.0, None)
    if d is None:
        raise ValueError("d is required for an infinite-lattice sum")
    if not beta < 0:
        return ExpSum(math.inf, math.inf, None, converged=False)
    return _lattice_exp_sum(metric, d, float(beta), float(tol), int(radius_cap))


def augmented_boundary(box: Box) -> set[Site]:
    """Sites at graph distance 1 from the box or from its complement."""
    L, d = box.L, box.d
    out = set()
    side = range(-L - 1, L + 2)
    for u in itertools.product(side, repeat=d):
        excess = sum(max(abs(c) - L, 0) for c in u)
        if excess == 1:
            out.add(u)
        elif excess == 0 and max(abs(c) for c in u) == L:
            out.add(u)
    return out


def distance_to_set(metric: Metric, site, sites) -> float:
    site = np.asarray(site)
    arr = np.asarray(list(sites))
    k = np.abs(arr - site).sum(axis=1)
    return float(metric.radial(k.min()))
