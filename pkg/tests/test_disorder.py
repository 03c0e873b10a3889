import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from hfloc.disorder import (
    cauchy, check_assumption6, check_assumption7, draw, fluctuation_ratio,
    normalization_error, perturbed_exponential, sample, two_sided_exponential, uniform,
)
from hfloc.lattice import make_box

MODELS = [cauchy(1.0), cauchy(0.5), two_sided_exponential(1.0), two_sided_exponential(2.5),
          perturbed_exponential(), perturbed_exponential(1.5, 0.3, 3.0, 0.05)]


def test_density_values():
    assert cauchy(1).density(0.0) == pytest.approx(1 / math.pi)
    assert two_sided_exponential(1).density(0.0) == pytest.approx(0.5)
    assert two_sided_exponential(1).density(2.0) == pytest.approx(math.exp(-2) / 2)
    m = perturbed_exponential(1.0, 0.2, 2.0, 0.1)
    v = 1.7
    expect = m.normalizer * (1 + 0.1 * v**2) * math.exp(-0.2 * v) * math.exp(-v)
    assert m.density(v) == pytest.approx(expect)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}")
def test_normalized(model):
    assert normalization_error(model) < 1e-8


def test_perturbed_normalizer_by_quadrature():
    m = perturbed_exponential(1.0, 0.2, 2.5, 0.1)
    raw = lambda v: (1 + 0.1 * abs(v) ** 2.5) * math.exp(-1.2 * abs(v))
    mass = 2 * integrate.quad(raw, 0, np.inf, epsabs=1e-14)[0]
    assert m.normalizer == pytest.approx(1 / mass, rel=1e-10)


def test_invalid_eps2():
    with pytest.raises(ValueError):
        two_sided_exponential(1.0, eps2=0.6)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}")
def test_cdf_matches_density(model):
    for v in (-3.0, -0.4, 0.0, 1.1, 5.0):
        lo = integrate.quad(lambda x: float(model.density(x)), -np.inf, v, epsabs=1e-13)[0]
        assert float(model.cdf(v)) == pytest.approx(lo, abs=1e-9)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}")
def test_quantile_inverts_cdf(model):
    u = np.linspace(1e-6, 1 - 1e-6, 101)
    back = model.cdf(model.quantile(u))
    assert np.max(np.abs(back - u)) < 1e-10


def test_sampling_deterministic_and_coupled():
    m = two_sided_exponential(1.0)
    big = make_box(2, 4)
    a = sample(m, 123, big)
    b = sample(m, 123, big)
    assert np.array_equal(a.values, b.values)
    small = make_box(2, 2)
    assert np.array_equal(sample(m, 123, small).values, a.restrict(small).values)
    assert not np.array_equal(sample(m, 124, big).values, a.values)
    assert not np.array_equal(sample(m, 123, big, stream=1).values, a.values)


def test_exponential_mean():
    rng = np.random.default_rng(7)
    x = draw(two_sided_exponential(1.0), rng, 1_000_000)
    # variance of the two-sided exponential is 2 / c^2
    assert abs(x.mean()) < 3 * math.sqrt(2 / x.size)


def test_cauchy_median():
    rng = np.random.default_rng(8)
    x = draw(cauchy(1.0), rng, 100_000)
    # asymptotic sd of the median is 1 / (2 rho(0) sqrt(n))
    sd = math.pi / (2 * math.sqrt(x.size))
    assert abs(np.median(x)) < 3 * sd


@pytest.mark.parametrize("model", MODELS[1:5], ids=lambda m: f"{m.kind}")
def test_ks(model):
    rng = np.random.default_rng(11)
    x = draw(model, rng, 100_000)
    res = stats.kstest(x, model.cdf)
    assert res.statistic < 1.628 / math.sqrt(x.size)


def test_site_sampler_ks():
    m = two_sided_exponential(1.0)
    vals = np.concatenate([sample(m, 5, make_box(2, 10), stream=s).values for s in range(25)])
    assert stats.kstest(vals, m.cdf).statistic < 1.628 / math.sqrt(vals.size)


def test_fluctuation_check():
    rep = check_assumption6(two_sided_exponential(1.3))
    assert rep.passed and rep.constants["c1"] == pytest.approx(1.3)
    assert rep.constants["c1_grid"] == pytest.approx(1.3, rel=1e-9)
    assert check_assumption6(cauchy(1.0)).passed
    assert check_assumption6(perturbed_exponential()).passed
    bad = check_assumption6(uniform(1.0))
    assert not bad.passed and "support" in bad.notes[0]


def test_fluctuation_check_declared_too_small():
    rep = check_assumption6(two_sided_exponential(1.0, c1=0.5))
    assert not rep.passed and rep.violations


def test_envelope_check_models():
    rep = check_assumption7(two_sided_exponential(1.0))
    assert rep.passed and rep.constants["eps2_grid"] == pytest.approx(0.0, abs=1e-12)
    assert check_assumption7(perturbed_exponential(1.0, 0.2, 2.0, 0.1)).passed
    bad = check_assumption7(cauchy(1.0))
    assert not bad.passed
    assert not check_assumption7(uniform()).passed


def test_fluctuation_ratio_exponential_origin():
    # at v=0 the smoothed ratio of (c/2)e^{-c|v|} is (c + eps)/2
    c, eps = 1.0, 0.3
    assert fluctuation_ratio(two_sided_exponential(c), eps, 0.0)[0] == pytest.approx((c + eps) / 2, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(-40, 40), st.floats(-40, 40))
def test_ratio_bound_property(v1, v2):
    for m in (two_sided_exponential(1.0), cauchy(1.0), perturbed_exponential()):
        lhs = m.log_density(v1) - m.log_density(v2)
        assert lhs >= -m.c1_value * abs(v1 - v2) - 1e-12
