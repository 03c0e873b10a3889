import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfloc.lattice import Metric, augmented_boundary, exp_sum, make_box, sphere_counts


def test_box_sizes():
    b = make_box(1, 1)
    assert [s for s in b.sites.ravel()] == [-1, 0, 1]
    assert len(make_box(2, 1)) == 9
    assert len(make_box(2, 5)) == 121
    assert make_box(2, 5).sites.shape == (121, 2)


def test_box_index_bijection():
    b = make_box(2, 2)
    for i in range(len(b)):
        assert b.locate(b.site(i)) == i
    with pytest.raises(IndexError):
        b.locate((3, 0))


def test_box_cap():
    with pytest.raises(OverflowError):
        make_box(3, 20)


def test_metric_values():
    assert Metric()((0, 0), (1, 2)) == 3
    assert Metric("scaled_log", 1.0)((0,), (3,)) == pytest.approx(math.log(4))
    assert Metric("scaled_log", 2.5)((1, 1), (1, 1)) == 0
    with pytest.raises(ValueError):
        Metric()((0, 0), (1,))


def _random_triples(rng, d, n):
    return rng.integers(-30, 31, size=(n, 3, d))


@pytest.mark.parametrize("metric", [Metric(), Metric("scaled_log", 0.7), Metric("scaled_log", 3.0)])
def test_triangle_inequality(metric):
    rng = np.random.default_rng(4)
    for d in (1, 2, 3):
        trip = _random_triples(rng, d, 10_000 // 3 + 1)
        k = lambda a, b: np.abs(a - b).sum(axis=1)
        x, y, z = trip[:, 0], trip[:, 1], trip[:, 2]
        dxz = metric.radial(k(x, z))
        dxy = metric.radial(k(x, y))
        dyz = metric.radial(k(y, z))
        assert np.all(dxz <= dxy + dyz + 1e-12)
        assert np.all(metric.radial(k(x, y)) == metric.radial(k(y, x)))


def test_exp_sum_d1_geometric():
    for beta in (-1.0, -2.0, -0.3):
        exact = (1 + math.exp(beta)) / (1 - math.exp(beta))
        res = exp_sum(Metric(), beta, d=1)
        assert abs(res.value - exact) < 1e-10
        assert res.tail_bound <= 1e-10
    # truncation at radius 60 agrees with the closed form
    k = np.arange(61)
    trunc = np.sum(sphere_counts(1, k) * np.exp(-k))
    assert trunc == pytest.approx((1 + math.exp(-1)) / (1 - math.exp(-1)), abs=1e-10)
    assert exp_sum(Metric(), -2.0, d=1).value == pytest.approx(1.3130352855, abs=1e-9)


def test_exp_sum_minus_infinity():
    assert exp_sum(Metric(), -math.inf, d=3).value == 1.0


def test_sphere_counts_bruteforce():
    for d in (1, 2, 3):
        R = 8
        pts = np.array(list(itertools.product(range(-R, R + 1), repeat=d)))
        norms = np.abs(pts).sum(axis=1)
        for k in range(R + 1):
            assert sphere_counts(d, k)[0] == np.sum(norms == k)


def test_exp_sum_d2_shells():
    res = exp_sum(Metric(), -1.0, d=2)
    # 1 + sum_k 4k e^{-k} in closed form
    q = math.exp(-1)
    exact = 1 + 4 * q / (1 - q) ** 2
    assert abs(res.value - exact) < 1e-10
    k = np.arange(41)
    trunc = np.sum(sphere_counts(2, k) * np.exp(-k))
    assert abs(trunc - exact) < 1e-10


def test_exp_sum_divergent_flag():
    res = exp_sum(Metric(), 0.0, d=2)
    assert not res.converged and math.isinf(res.value)
    slow = exp_sum(Metric("scaled_log", 1.0), -1.5, d=2)
    assert not slow.converged


def test_scaled_log_stabilizes():
    m = Metric("scaled_log", 2.0)
    a = exp_sum(m, -2.5, d=1, tol=1e-8)
    b = exp_sum(m, -2.5, d=1, tol=1e-9)
    assert a.converged and b.converged
    assert abs(a.value - b.value) < 1e-8


def test_exp_sum_on_box():
    b = make_box(1, 3)
    centre = exp_sum(Metric(), -1.0, box=b, center=(0,))
    sup = exp_sum(Metric(), -1.0, box=b)
    assert sup.value == pytest.approx(centre.value)
    assert centre.value == pytest.approx(1 + 2 * sum(math.exp(-k) for k in (1, 2, 3)))
    assert exp_sum(Metric(), 0.5, box=b).value > len(b)


@settings(max_examples=40, deadline=None)
@given(st.floats(-6.0, -0.05), st.floats(0.01, 3.0), st.integers(1, 3))
def test_exp_sum_monotone(beta, gap, d):
    lo = exp_sum(Metric(), beta - gap, d=d)
    hi = exp_sum(Metric(), beta, d=d)
    assert lo.upper <= hi.upper + 1e-12


def test_augmented_boundary():
    assert augmented_boundary(make_box(1, 2)) == {(-3,), (-2,), (2,), (3,)}
    assert augmented_boundary(make_box(1, 0)) == {(-1,), (0,), (1,)}
    b = augmented_boundary(make_box(2, 1))
    ring = {s for s in itertools.product(range(-1, 2), repeat=2) if s != (0, 0)}
    outside = {s for s in itertools.product(range(-2, 3), repeat=2)
               if max(abs(c) for c in s) == 2 and sum(max(abs(c) - 1, 0) for c in s) == 1}
    assert len(ring) == 8 and len(outside) == 12
    assert b == ring | outside


def test_augmented_boundary_bruteforce():
    for d, L in [(1, 3), (2, 2), (3, 1)]:
        box = make_box(d, L)
        inside = {tuple(s) for s in box.sites.tolist()}
        pts = list(itertools.product(range(-L - 3, L + 4), repeat=d))
        def dist(u, inset):
            cands = [p for p in pts if (p in inside) == inset]
            return min(sum(abs(a - b) for a, b in zip(u, p)) for p in cands)
        expect = {u for u in pts if max(abs(c) for c in u) <= L + 2
                  and (dist(u, True) == 1 or dist(u, False) == 1)}
        assert augmented_boundary(box) == expect
