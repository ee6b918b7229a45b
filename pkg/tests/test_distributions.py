import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bhlineage.distributions import (Deterministic, Exponential, Gamma, OffspringDistribution,
                                     RngStream, lifetime_from_dict, lifetime_tail, pgf_derivative,
                                     pgf_eval, sample_lifetime, sample_offspring)
from bhlineage.errors import ConfigError, DomainError

D3 = OffspringDistribution((0.25, 0.25, 0.5))


@st.composite
def offspring_laws(draw, k_max=6):
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=k_max + 1))
    w[-1] += 0.1
    probs = np.asarray(w) / math.fsum(w)
    probs[-1] = 1.0 - math.fsum(probs[:-1])
    return OffspringDistribution(tuple(max(p, 0.0) for p in probs))


def test_pgf_examples():
    assert pgf_eval(D3, 0.0) == 0.25
    assert pgf_eval(D3, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert pgf_eval(D3, 0.5) == pytest.approx(0.5, abs=1e-15)


def test_pgf_derivative_examples():
    assert pgf_derivative(OffspringDistribution((0.5, 0.0, 0.5)), 1.0) == pytest.approx(1.0)
    assert pgf_derivative(OffspringDistribution((0.0, 0.0, 1.0)), 1.0) == pytest.approx(2.0)
    assert pgf_derivative(D3, 0.5) == pytest.approx(0.75)


@pytest.mark.parametrize("s", [-0.1, 1.0001, float("nan")])
def test_pgf_domain(s):
    with pytest.raises(DomainError):
        pgf_eval(D3, s)
    with pytest.raises(DomainError):
        pgf_derivative(D3, s)


def test_offspring_validation():
    with pytest.raises(ConfigError):
        OffspringDistribution((0.5, 0.6))
    with pytest.raises(ConfigError):
        OffspringDistribution((1.2, -0.2))
    with pytest.raises(ConfigError):
        OffspringDistribution(())
    d = OffspringDistribution((0.5, 0.5, 0.0, 0.0))
    assert d.k_max == 1 and d.probs == (0.5, 0.5)
    # sums off by more than 1e-12 are refused rather than renormalised
    with pytest.raises(ConfigError):
        OffspringDistribution((0.5, 0.5 + 1e-10))
    assert OffspringDistribution.from_mapping({0: 0.5, 2: 0.5}).probs == (0.5, 0.0, 0.5)


@given(offspring_laws())
@settings(max_examples=60, deadline=None)
def test_pgf_monotone_convex(d):
    s = np.linspace(0.0, 1.0, 101)
    f = d.pgf(s)
    assert np.all(np.diff(f) >= -1e-15)
    assert np.all(np.diff(f, 2) >= -1e-13)
    assert np.all((f >= 0) & (f <= 1 + 1e-12))
    assert d.pgf_prime(1.0) == pytest.approx(d.mean, rel=1e-12, abs=1e-14)


@given(offspring_laws(), st.floats(1e-4, 1 - 1e-4))
@settings(max_examples=60, deadline=None)
def test_pgf_finite_difference(d, s):
    h = 1e-5
    fd = (pgf_eval(d, s + h) - pgf_eval(d, s - h)) / (2 * h)
    # truncation h^2 f'''/6 plus float cancellation in the difference
    assert abs(fd - pgf_derivative(d, s)) <= 10 * h * h + 1e-10


def test_sample_offspring_degenerate():
    rng = RngStream(1)
    assert {sample_offspring(OffspringDistribution((0.0, 1.0)), rng) for _ in range(200)} == {1}
    assert {sample_offspring(OffspringDistribution((0.0, 0.0, 1.0)), rng) for _ in range(200)} == {2}


def test_sample_offspring_frequency():
    d = OffspringDistribution((0.5, 0.0, 0.5))
    rng = RngStream(2)
    draws = np.array([d.sample(rng) for _ in range(10**6)])
    assert set(np.unique(draws)) == {0, 2}
    assert abs(np.mean(draws == 0) - 0.5) <= 0.002


def test_lifetime_examples():
    rng = RngStream(3)
    assert sample_lifetime(Deterministic(1.0), rng) == 1.0
    assert abs(Exponential(2.0).sample_many(rng, 10**6).mean() - 0.5) <= 0.0015
    assert abs(Gamma(2.0, 0.5).sample_many(rng, 10**6).mean() - 1.0) <= 0.003
    # scalar draws agree with the vectorised path in law
    scalar = np.array([Exponential(2.0).sample(rng) for _ in range(20000)])
    assert abs(scalar.mean() - 0.5) <= 3 * 0.5 / math.sqrt(20000)


def test_lifetime_tail_examples():
    assert lifetime_tail(Exponential(1.0), 0.0) == 1.0
    assert lifetime_tail(Deterministic(1.0), 0.999) == 1.0
    assert lifetime_tail(Deterministic(1.0), 1.0) == 0.0
    assert lifetime_tail(Exponential(2.0), 1.0) == pytest.approx(0.1353352832, abs=1e-10)


@pytest.mark.parametrize("law", [Exponential(0.7), Gamma(0.6, 2.0), Gamma(3.0, 0.4),
                                 Deterministic(2.5)])
def test_tail_properties(law):
    t = np.linspace(0.0, 30.0, 301)
    tail = np.asarray(law.tail(t), dtype=float)
    assert tail[0] == 1.0
    assert np.all(np.diff(tail) <= 0)
    assert tail[-1] < 1e-6
    assert law.mean > 0


@pytest.mark.parametrize("law", [Exponential(1.5), Gamma(0.7, 1.0), Gamma(2.0, 0.5)])
def test_lifetime_ks(law):
    x = law.sample_many(RngStream(4), 10**5)
    res = stats.kstest(x, law.cdf)
    # alpha = 0.001 asymptotic critical value
    assert res.statistic < 1.9495 / math.sqrt(x.size)


def test_partial_mean_matches_quadrature():
    from scipy import integrate
    for law in (Exponential(1.3), Gamma(0.7, 1.1), Gamma(2.5, 0.3)):
        for x in (0.2, 1.0, 3.0):
            ref = integrate.quad(lambda u: u * law.density(u), 0, x, limit=200)[0]
            assert law.partial_mean(x) == pytest.approx(ref, rel=1e-7, abs=1e-12)


def test_invalid_lifetimes():
    for bad in (lambda: Exponential(0.0), lambda: Deterministic(-1.0), lambda: Gamma(1.0, 0.0)):
        with pytest.raises(ConfigError):
            bad()
    with pytest.raises(ConfigError):
        lifetime_from_dict({"kind": "weibull", "shape": 2})


@pytest.mark.parametrize("law", [Exponential(1.5), Gamma(0.7, 1.0), Deterministic(1.0)])
def test_lifetime_dict_roundtrip(law):
    assert lifetime_from_dict(law.to_dict()) == law


def test_rng_streams():
    a = RngStream(99, 5).random(1000)
    b = RngStream(99, 5).random(1000)
    assert np.array_equal(a, b)
    x = RngStream(99, 0).random(10**5)
    y = RngStream(99, 1).random(10**5)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.01
    assert not np.array_equal(RngStream(98, 5).random(10), RngStream(99, 5).random(10)[:10])
    with pytest.raises(ConfigError):
        RngStream(1, -1)
