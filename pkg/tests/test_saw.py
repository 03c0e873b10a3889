import math

import pytest
from hypothesis import given, settings, strategies as st

from hfloc.saw import (
    SawTable,
    BudgetExceeded,
    connective_estimate,
    correlation,
    endpoint_check,
    enumerate_walks,
    susceptibility,
    tail_bound,
)

KNOWN_2D = [1, 4, 12, 36, 100, 284, 780, 2172, 5916, 16268, 44100, 120292, 324932, 881500, 2374444, 6416596, 17245332]
KNOWN_3D = [1, 6, 30, 150, 726, 3534, 16926, 81390, 387966]


def test_d1_counts():
    t = enumerate_walks(1, 50)
    assert t.counts == [1] + [2] * 50


def test_d2_small_counts():
    assert enumerate_walks(2, 4).counts == [1, 4, 12, 36, 100]


@pytest.mark.parametrize("N", [0, 1, 2, 7, 12])
def test_two_enumerators_agree(N):
    a = enumerate_walks(2, N, method="hashset").counts
    b = enumerate_walks(2, N, method="bitboard").counts
    assert a == b == KNOWN_2D[: N + 1]


@pytest.mark.slow
def test_two_enumerators_agree_to_sixteen():
    a = enumerate_walks(2, 16, method="hashset").counts
    b = enumerate_walks(2, 16, method="bitboard").counts
    assert a == b == KNOWN_2D


def test_d3_counts():
    assert enumerate_walks(3, 8).counts == KNOWN_3D
    assert enumerate_walks(3, 6, method="bitboard").counts == KNOWN_3D[:7]


def test_budget_and_bad_args():
    with pytest.raises(BudgetExceeded):
        enumerate_walks(2, 17)
    with pytest.raises(BudgetExceeded):
        enumerate_walks(3, 12)
    with pytest.raises(ValueError):
        enumerate_walks(2, 4, method="pivot")
    with pytest.raises(ValueError):
        enumerate_walks(0, 3)


@pytest.mark.parametrize("d,N", [(2, 10), (3, 6), (4, 4)])
def test_nonbacktracking_bound(d, N):
    t = enumerate_walks(d, N)
    assert all(t.C(k) <= t.nonbacktracking_bound(k) for k in range(N + 1))
    assert t.C(1) == 2 * d


def test_endpoint_histograms():
    for d, N in [(1, 6), (2, 9), (3, 5)]:
        t = enumerate_walks(d, N, endpoints=True)
        assert endpoint_check(t)
    t = enumerate_walks(2, 9, endpoints=True)
    assert t.counts == KNOWN_2D[:10]
    # reflection symmetry of the histogram
    for m, n in t.endpoints[7].items():
        assert t.walks_to((-m[0], m[1]), 7) == n
        assert t.walks_to((m[1], m[0]), 7) == n


def test_submultiplicativity():
    C = KNOWN_2D
    for n in range(1, 9):
        for m in range(1, 9):
            assert C[n + m] <= C[n] * C[m]


# susceptibility and correlation


def test_d1_susceptibility():
    chi = susceptibility(1, 0.5, 60)
    assert chi.value + chi.tail_bound == pytest.approx(3.0, abs=1e-15)
    assert abs(chi.value - 3.0) <= chi.tail_bound
    exact = susceptibility(1, 0.5, 1000)
    assert exact.value == 3.0


@settings(max_examples=30, deadline=None)
@given(g=st.floats(0.0, 0.95))
def test_d1_susceptibility_closed_form(g):
    chi = susceptibility(1, g, 400)
    target = 1 + 2 * g / (1 - g)
    assert chi.value <= target + 1e-9 <= chi.upper + 2e-9


def test_gamma_zero():
    assert susceptibility(2, 0.0, 5).value == 1.0
    assert correlation(2, 0.0, (0, 0), 5).value == 1.0
    assert correlation(2, 0.0, (1, 0), 5).value == 0.0


def test_d2_susceptibility_stabilizes():
    t = enumerate_walks(2, 14)
    chi = susceptibility(2, 0.1, 14, table=t)
    inc = chi.partial_sums[-1] - chi.partial_sums[-2]
    assert inc < 1e-6 and not chi.diverges
    assert 0 < chi.tail_bound < 1e-6


def test_d2_gamma_point_three_has_not_stabilized():
    # 0.3 is below 1/mu_2 but the last increment at N=16 is still of order 0.1
    chi = susceptibility(2, 0.3, 16, table=SawTable(2, 16, list(KNOWN_2D)))
    assert chi.partial_sums[-1] - chi.partial_sums[-2] > 1e-2
    assert not chi.diverges and math.isfinite(chi.tail_bound)


def test_divergence_flag():
    t = enumerate_walks(2, 12)
    assert susceptibility(2, 0.4, 12, table=t).diverges
    assert susceptibility(1, 1.0, 12).diverges


@settings(max_examples=20, deadline=None)
@given(g=st.floats(0.01, 0.37), N=st.integers(2, 10))
def test_partial_sums_increase(g, N):
    s = susceptibility(2, g, N).partial_sums
    assert all(b > a for a, b in zip(s[:-1], s[1:]))


def test_tail_bound_covers_known_terms():
    t = enumerate_walks(2, 8)
    for g in (0.05, 0.1, 0.2):
        true_tail = sum(g**n * c for n, c in enumerate(KNOWN_2D) if n > 8)
        assert true_tail <= tail_bound(t, g)


def test_correlation_d1_example():
    val = correlation(1, 0.5, (3,), 20)
    assert val.value == 0.125 and val.tail_bound == 0.0


def test_correlation_origin_at_least_one():
    assert correlation(2, 0.2, (0, 0), 8).value >= 1


def test_correlation_sums_to_susceptibility():
    t = enumerate_walks(2, 9, endpoints=True)
    for g in (0.1, 0.3):
        sites = set().union(*t.endpoints)
        total = sum(correlation(2, g, m, 9, table=t).value for m in sites)
        assert total == pytest.approx(susceptibility(2, g, 9, table=t).value, rel=1e-13)


def test_correlation_dimension_mismatch():
    with pytest.raises(ValueError):
        correlation(2, 0.1, (1,), 4)


# connective constant


def test_connective_d1():
    est = connective_estimate(enumerate_walks(1, 20))
    assert est.mu_hat == 1.0


def test_connective_d2():
    est = connective_estimate(enumerate_walks(2, 14))
    assert 2.5 < est.mu_hat < 2.8
    assert est.parity_monotone and est.estimate
    assert est.mu_hat < 3


def test_connective_d3():
    est = connective_estimate(enumerate_walks(3, 8))
    assert est.mu_hat < 5 and est.bracket[0] <= est.mu_hat <= est.bracket[1]


def test_ratio_sequence_not_globally_monotone():
    # on Z^2 the ratios alternate, only the parity subsequences decrease
    r = connective_estimate(enumerate_walks(2, 12)).ratios
    assert any(b > a for a, b in zip(r[:-1], r[1:]))
