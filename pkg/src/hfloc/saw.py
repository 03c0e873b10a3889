"""Self-avoiding walks on Z^d: exact counts, endpoint histograms and generating functions.

Two independent enumerators: a depth-first search over a Python set of
integer-coded sites, and one keeping the visited sites in an integer bitmask.
Both use the symmetry under the hyperoctahedral group to fix the first step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import sphere_counts

BUDGET = {1: 10_000, 2: 16, 3: 11}


class BudgetExceeded(ValueError):
    pass


def _check_budget(d: int, N: int, budget: dict | None):
    lim = (budget or BUDGET).get(d, 6)
    if N > lim:
        raise BudgetExceeded(f"exhaustive enumeration with d={d} is capped at N={lim}, asked for {N}")


def _steps(d: int, W: int) -> list[int]:
    out = []
    for i in range(d):
        out += [W**i, -(W**i)]
    return out


def _dfs_hashset(d: int, N: int) -> list[int]:
    """Counts of first-step-fixed walks of each length 1..N (hash-set DFS)."""
    W = 2 * N + 3
    steps = _steps(d, W)
    origin = sum((N + 1) * W**i for i in range(d))
    counts = [0] * (N + 1)
    visited = {origin, origin + 1}

    def grow(pos, k):
        counts[k] += 1
        if k == N - 1:
            counts[N] += sum(1 for s in steps if pos + s not in visited)
            return
        for s in steps:
            nxt = pos + s
            if nxt not in visited:
                visited.add(nxt)
                grow(nxt, k + 1)
                visited.discard(nxt)

    if N >= 1:
        if N == 1:
            counts[1] = 1
        else:
            grow(origin + 1, 1)
    return counts


def _dfs_bitboard(d: int, N: int) -> list[int]:
    """Same counts with the visited set as bits of one integer, iterative stack."""
    W = 2 * N + 3
    steps = _steps(d, W)
    origin = sum((N + 1) * W**i for i in range(d))
    counts = [0] * (N + 1)
    if N == 0:
        return counts
    start = origin + 1
    stack = [(start, (1 << origin) | (1 << start), 1)]
    while stack:
        pos, mask, k = stack.pop()
        counts[k] += 1
        if k == N:
            continue
        for s in steps:
            nxt = pos + s
            bit = 1 << nxt
            if not mask & bit:
                stack.append((nxt, mask | bit, k + 1))
    return counts


def _from_fixed(d: int, fixed: list[int]) -> list[int]:
    return [1] + [2 * d * c for c in fixed[1:]]


def _orthogonal_images(d: int) -> list[np.ndarray]:
    """Signed permutation matrices g_j with g_j(e_1) running over the 2d unit vectors."""
    mats = []
    for i in range(d):
        for sign in (1, -1):
            P = np.eye(d, dtype=int)
            P[:, [0, i]] = P[:, [i, 0]]
            P[:, 0] *= sign
            mats.append(P)
    return mats


@dataclass
class SawTable:
    d: int
    N_max: int
    counts: list
    endpoints: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.counts[0] != 1:
            raise ValueError("C_0 must be 1")

    def C(self, N: int) -> int:
        return int(self.counts[N])

    def walks_to(self, m, N: int) -> int:
        """Number of N-step walks from 0 ending at m (needs endpoint histograms)."""
        if self.endpoints is None:
            raise ValueError("table was built without endpoint histograms")
        return int(self.endpoints[N].get(tuple(int(c) for c in m), 0))

    def nonbacktracking_bound(self, N: int) -> int:
        return 1 if N == 0 else 2 * self.d * (2 * self.d - 1) ** (N - 1)

    def rows(self):
        return [(n, int(c)) for n, c in enumerate(self.counts)]


def enumerate_walks(d: int, N_max: int, method: str = "hashset", endpoints: bool = False,
                    budget: dict | None = None) -> SawTable:
    """Exact ``C_N`` for ``N <= N_max``; optional endpoint histograms ``#S_N(m, 0)``."""
    if d < 1 or N_max < 0:
        raise ValueError("need d >= 1 and N_max >= 0")
    _check_budget(d, N_max, budget)
    if d == 1:
        # two straight walks; the search would only confirm this
        counts = [1] + [2] * N_max
        ends = None
        if endpoints:
            ends = [{(0,): 1}] + [{(N,): 1, (-N,): 1} for N in range(1, N_max + 1)]
        return SawTable(1, N_max, counts, ends)
    if endpoints:
        counts, ends = _dfs_endpoints(d, N_max)
        return SawTable(d, N_max, counts, ends)
    if method == "hashset":
        fixed = _dfs_hashset(d, N_max)
    elif method == "bitboard":
        fixed = _dfs_bitboard(d, N_max)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SawTable(d, N_max, _from_fixed(d, fixed), None)


def _dfs_endpoints(d: int, N: int):
    W = 2 * N + 3
    steps = _steps(d, W)
    origin = sum((N + 1) * W**i for i in range(d))
    hist = [dict() for _ in range(N + 1)]
    visited = {origin}

    def grow(pos, k):
        h = hist[k]
        h[pos] = h.get(pos, 0) + 1
        if k == N:
            return
        for s in steps:
            nxt = pos + s
            if nxt not in visited:
                visited.add(nxt)
                grow(nxt, k + 1)
                visited.discard(nxt)

    hist[0][origin] = 1
    if N >= 1:
        visited.add(origin + 1)
        grow(origin + 1, 1)

    def decode(code):
        out = []
        for _ in range(d):
            out.append(code % W - (N + 1))
            code //= W
        return np.array(out)

    images = _orthogonal_images(d)
    ends = [{(0,) * d: 1}]
    counts = [1]
    for k in range(1, N + 1):
        full: dict = {}
        for code, n in hist[k].items():
            x = decode(code)
            for P in images:
                y = tuple(int(c) for c in P @ x)
                full[y] = full.get(y, 0) + n
        ends.append(full)
        counts.append(sum(full.values()))
    return counts, ends


# generating functions ----------------------------------------------------------


@dataclass(frozen=True)
class SeriesValue:
    value: float
    tail_bound: float
    N_max: int
    diverges: bool = False
    partial_sums: tuple = ()

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound


def tail_bound(table: SawTable, gamma: float) -> float:
    """Bound on ``sum_{M > N} gamma^M C_M``.

    Exact geometric tail in d=1.  Otherwise submultiplicativity
    ``C_{kN+r} <= C_N^k C_r`` gives ``a b / (1 - a) - a`` with
    ``a = gamma^N C_N`` and ``b = sum_{r<N} gamma^r C_r``; infinite if ``a >= 1``.
    """
    g = abs(gamma)
    N = table.N_max
    if g == 0:
        return 0.0
    if table.d == 1:
        return math.inf if g >= 1 else 2 * g ** (N + 1) / (1 - g)
    if N == 0:
        return math.inf
    a = g**N * table.C(N)
    if a >= 1:
        return math.inf
    b = sum(g**r * table.C(r) for r in range(N))
    return max(a * b / (1 - a) - a, 0.0)


def susceptibility(d: int, gamma: float, N_max: int, table: SawTable | None = None) -> SeriesValue:
    """``chi(gamma) = sum_N C_N gamma^N`` truncated at N_max with a tail bound."""
    table = table if table is not None and table.N_max >= N_max else enumerate_walks(d, N_max)
    terms = [gamma**N * table.C(N) for N in range(N_max + 1)]
    partial = tuple(np.cumsum(terms).tolist())
    tb = tail_bound(SawTable(d, N_max, table.counts[: N_max + 1]), gamma)
    return SeriesValue(partial[-1], tb, N_max, _diverges(table, gamma, tb), partial)


def _diverges(table: SawTable, gamma: float, tb: float) -> bool:
    if not math.isfinite(tb):
        return True
    if table.N_max >= 2:
        return abs(gamma) * connective_estimate(table).mu_hat >= 1
    return False


def correlation(d: int, gamma: float, m, N_max: int, table: SawTable | None = None) -> SeriesValue:
    """``C_gamma(m) = sum_N gamma^N #S_N(m, 0)``; its tail is bounded by that of chi."""
    m = tuple(int(c) for c in m)
    if len(m) != d:
        raise ValueError("site dimension does not match d")
    if table is None or table.endpoints is None or table.N_max < N_max:
        table = enumerate_walks(d, N_max, endpoints=True)
    terms = [gamma**N * table.walks_to(m, N) for N in range(N_max + 1)]
    partial = tuple(np.cumsum(terms).tolist())
    tb = tail_bound(SawTable(d, N_max, table.counts[: N_max + 1]), gamma)
    if d == 1:
        # a walk on Z ending at m has length exactly |m|
        tb = 0.0 if abs(m[0]) <= N_max else tb
    return SeriesValue(partial[-1], tb, N_max, _diverges(table, gamma, tb), partial)


# connective constant ------------------------------------------------------------


@dataclass
class ConnectiveEstimate:
    mu_hat: float
    ratios: np.ndarray
    roots: np.ndarray
    bracket: tuple
    parity_monotone: bool
    estimate: bool = True


def connective_estimate(table: SawTable) -> ConnectiveEstimate:
    """Ratio and root sequences of ``C_N``; the estimate is the last ratio.

    The ratio sequence oscillates with the parity of N on Z^2, so monotonicity
    is diagnosed on the odd and even subsequences separately.
    """
    if table.N_max < 2:
        raise ValueError("need N_max >= 2")
    C = np.array([float(c) for c in table.counts])
    N = np.arange(1, len(C))
    ratios = C[2:] / C[1:-1]
    roots = C[1:] ** (1.0 / N)
    # ratio index j compares C_{j+2} / C_{j+1}
    ev, od = ratios[0::2], ratios[1::2]
    mono = bool(np.all(np.diff(ev) <= 1e-15) and np.all(np.diff(od) <= 1e-15))
    tail = ratios[-2:] if len(ratios) >= 2 else ratios
    return ConnectiveEstimate(float(ratios[-1]), ratios, roots, (float(tail.min()), float(tail.max())), mono)


def endpoint_check(table: SawTable) -> bool:
    """Histograms sum to ``C_N``, endpoints lie in the l1 ball of radius N with
    parity N, and every site of the sphere of radius N is reached."""
    if table.endpoints is None:
        return True
    for N, ends in enumerate(table.endpoints):
        if sum(ends.values()) != table.counts[N]:
            return False
        r = [sum(abs(c) for c in m) for m in ends]
        if any(x > N or (N - x) % 2 for x in r):
            return False
        if sum(1 for x in r if x == N) != int(sphere_counts(table.d, np.array([N]))[0]):
            return False
    return True
