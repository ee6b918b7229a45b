import math

import numpy as np
import pytest
from scipy import integrate, stats

from bhlineage import genfun, theory
from bhlineage.distributions import (Deterministic, Exponential, Gamma, OffspringDistribution,
                                     RngStream)
from bhlineage.errors import DegenerateConditioning, DomainError
from bhlineage.theory import RenewalLaw, Thm1Query

SUPER = OffspringDistribution((0.2, 0.3, 0.5))


def test_renewal_sample_examples():
    arr, nxt = theory.renewal_sample(RenewalLaw(Deterministic(1.0)), 3.5, RngStream(0))
    assert list(arr) == [1.0, 2.0, 3.0] and nxt == 4.0


def test_renewal_counts_poisson():
    rate, T, n = 1.7, 2.0, 10**5
    counts = theory.renewal_counts(RenewalLaw(Exponential(rate)), T, n, RngStream(1))
    k = np.arange(counts.max() + 1)
    obs = np.bincount(counts)
    exp = stats.poisson.pmf(k, rate * T) * n
    # pool the upper tail into one cell with expected count >= 5
    cut = int(np.argmax((exp < 5) & (k > rate * T)))
    o = np.append(obs[:cut], obs[cut:].sum())
    e = np.append(exp[:cut], n - exp[:cut].sum())
    assert stats.chisquare(o, e).pvalue > 1e-3
    # the scalar sampler agrees in law
    scalar = [len(theory.renewal_sample(RenewalLaw(Exponential(rate)), T, RngStream(2, i))[0])
              for i in range(5000)]
    assert abs(np.mean(scalar) - rate * T) <= 3 * math.sqrt(rate * T / 5000)


def test_renewal_gamma_no_arrival():
    law = Gamma(2.0, 1.0)
    n = 10**5
    counts = theory.renewal_counts(RenewalLaw(law), 0.5, n, RngStream(3))
    p = float(law.tail(0.5))
    assert abs(np.mean(counts == 0) - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_renewal_interval_density_examples():
    assert theory.renewal_interval_density(RenewalLaw(Exponential(1.0)), [], 2.0) == \
        pytest.approx(math.exp(-2))
    rl = RenewalLaw(Exponential(2.0))
    gen = RngStream(4).generator
    for _ in range(20):
        t = sorted(gen.uniform(0, 1, 2))
        assert theory.renewal_interval_density(rl, t, 1.0) == 4 * math.exp(-2)
    with pytest.raises(DomainError):
        theory.renewal_interval_density(RenewalLaw(Deterministic(1.0)), [1.0], 2.0)
    with pytest.raises(DomainError):
        theory.renewal_interval_density(rl, [0.5, 0.2], 1.0)


def test_renewal_interval_density_gamma_mc():
    # one-arrival density integrated over [a, b] vs simulated frequency
    law = Gamma(2.0, 0.6)
    rl = RenewalLaw(law)
    T, n = 1.5, 10**5
    a, b = 0.4, 0.9
    mass = integrate.quad(lambda t: theory.renewal_interval_density(rl, [t], T), a, b)[0]
    hits = 0
    for i in range(n):
        arr, _ = theory.renewal_sample(rl, T, RngStream(5, i))
        hits += len(arr) == 1 and a <= arr[0] < b
    p = hits / n
    assert abs(p - mass) <= 3 * math.sqrt(mass * (1 - mass) / n)


def test_renewal_vec_matches_scalar():
    law = Gamma(1.5, 0.7)
    rl = RenewalLaw(law)
    gen = RngStream(6).generator
    ts = np.sort(gen.uniform(0, 2, (50, 3)), axis=1)
    vec = theory._renewal_vec(law, [ts[:, 0], ts[:, 1], ts[:, 2]], 2.0)
    ref = [theory.renewal_interval_density(rl, row, 2.0) for row in ts]
    assert np.allclose(vec, ref, rtol=1e-12, atol=0)


def test_thm1_examples(yule):
    T = 1.0
    tab = genfun.build_markov(yule, 1.0, T)
    rl = RenewalLaw(Exponential(1.0))
    assert theory.thm1_density(Thm1Query((), (), 0.3, T), tab, yule, rl) == pytest.approx(math.exp(-T))
    assert theory.thm1_density(Thm1Query((0.4,), (2,), 1.0, T), tab, yule, rl) == \
        pytest.approx(2 * math.exp(-T), rel=1e-12)
    assert theory.thm1_density(Thm1Query((0.4,), (1,), 0.5, T), tab, yule, rl) == 0.0
    with pytest.raises(DomainError):
        Thm1Query((0.5, 0.3), (2, 2), 0.5, 1.0)
    with pytest.raises(DomainError):
        Thm1Query((0.5,), (0,), 0.5, 1.0)
    with pytest.raises(DomainError):
        Thm1Query((0.5,), (2,), 1.5, 1.0)


def test_thm1_factorises():
    tab = genfun.build_markov(SUPER, 1.0, 2.0)
    rl = RenewalLaw(Exponential(1.0))
    gen = RngStream(7).generator
    for _ in range(30):
        j = int(gen.integers(0, 4))
        times = tuple(sorted(gen.uniform(0, 2, j)))
        sizes = tuple(int(x) for x in gen.integers(1, 3, j))
        s = float(gen.uniform())
        direct = theory.renewal_interval_density(rl, times, 2.0) * math.prod(
            l * SUPER.p(l) * genfun.eval(tab, 2.0 - t, s) ** (l - 1) for t, l in zip(times, sizes))
        got = theory.thm1_density(Thm1Query(times, sizes, s, 2.0), tab, SUPER, rl)
        assert got == pytest.approx(direct, rel=1e-12, abs=1e-300)
        if j:
            sl = theory.thm1_slice(tab, SUPER, rl, sizes, 2.0)
            assert float(sl(*[np.array(t) for t in times], np.array(s))) == \
                pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("law", [Exponential(1.0), Gamma(2.0, 0.5)])
def test_thm1_total_mass(law):
    T = 1.5
    tab = genfun.build_table(SUPER, law, T, steps=600)
    rl = RenewalLaw(law)
    j_max = theory.event_count_quantile(rl, T, n=200_000, rng=RngStream(8))
    est, se = theory.thm1_total_mass(tab, SUPER, rl, T, j_max, 8000, RngStream(9))
    surv = 1 - genfun.extinction_prob(tab, T)
    assert abs(est - surv) <= 3 * se + 1e-4


def test_thm1_discrete_examples(critical):
    one = OffspringDistribution((0.0, 1.0))
    assert theory.thm1_discrete_exact((1, 1, 1), genfun.build_discrete(one, 3), one) == 1.0
    assert theory.thm1_discrete_exact((2,), genfun.build_discrete(critical, 1), critical) == \
        pytest.approx(0.5, abs=1e-15)
    assert theory.thm1_discrete_exact((2, 2), genfun.build_discrete(critical, 2), critical) == \
        pytest.approx(0.375, abs=1e-15)
    with pytest.raises(DomainError):
        theory.thm1_discrete_exact((2, 2), genfun.build_markov(critical, 1.0, 2.0), critical)


def test_rate_bias_examples(critical, critical_table):
    for t in (0.0, 0.7, 2.0):
        assert theory.rate_bias(critical_table, t, 2.0, 1) == pytest.approx(1.0, abs=1e-10)
    # t = T, l = 2: integral of s F'_T(s) against an adaptive-quadrature oracle
    fine = genfun.build_markov(critical, 1.0, 2.0, steps=2000, s_points=2001)
    surv = 1 - fine.F(2.0, 0.0)
    ref = integrate.quad(lambda s: s * fine.dF(2.0, s), 0, 1, limit=400)[0] / surv
    assert theory.rate_bias(critical_table, 2.0, 2.0, 2) == pytest.approx(ref, abs=1e-5)
    gaps = []
    for T in (5.0, 10.0, 20.0, 40.0):
        tab = genfun.build_markov(critical, 1.0, T)
        gaps.append(abs(theory.rate_bias(tab, T - 1.0, T, 2) - 1))
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_rate_bias_closed_form_yule(yule):
    # for the Yule process the integral has the closed form below
    T = 1.0
    tab = genfun.build_markov(yule, 1.0, T)
    for t in (0.3, 0.8):
        ref = integrate.quad(
            lambda s: (s * math.exp(-(T - t)) / (1 - s * (1 - math.exp(-(T - t))))) *
            math.exp(-T) / (1 - s * (1 - math.exp(-T))) ** 2, 0, 1)[0]
        assert theory.rate_bias(tab, t, T, 2) == pytest.approx(ref, rel=1e-5)


def test_rate_bias_errors(critical_table):
    with pytest.raises(DomainError):
        theory.rate_bias(critical_table, 2.5, 2.0, 2)
    with pytest.raises(DomainError):
        theory.rate_bias(critical_table, 1.0, 2.0, 0)
    dead = genfun.build_markov(OffspringDistribution((1.0,)), 1.0, 40.0)
    with pytest.raises(DegenerateConditioning):
        theory.rate_bias(dead, 1.0, 40.0, 1)


def test_s_density(critical_table):
    s = critical_table.s_grid
    dens = theory.s_density(critical_table, s)
    assert integrate.simpson(dens, x=s) == pytest.approx(1.0, abs=1e-6)
    one = OffspringDistribution((0.0, 1.0))
    flat = theory.s_density(genfun.build_markov(one, 1.0, 1.0), np.linspace(0, 1, 11))
    assert np.allclose(flat, 1.0)


def test_ancestral_rate(critical_table, critical):
    assert theory.ancestral_rate(critical_table, critical, 2.0, 0.5, 2.0, 1) == 0.0
    d = OffspringDistribution((0.2, 0.3, 0.5))
    tab = genfun.build_markov(d, 2.0, 1.0)
    assert theory.ancestral_rate(tab, d, 2.0, 0.5, 1.0, 1) == pytest.approx(2.0 * 0.3, abs=1e-10)


def test_thm2_examples(yule):
    T = 1.2
    tab = genfun.build_markov(yule, 1.0, T)
    rl = RenewalLaw(Exponential(1.0))
    mean = math.exp(T)
    assert theory.thm2_density((), (), T, yule, rl, tab) == pytest.approx(math.exp(-T) / mean, rel=1e-6)
    assert theory.thm2_density((0.5,), (2,), T, yule, rl, tab) == \
        pytest.approx(math.exp(-T) * 2 / mean, rel=1e-6)


def test_thm2_homogeneous_in_times():
    tab = genfun.build_markov(SUPER, 1.0, 2.0)
    rl = RenewalLaw(Exponential(1.0))
    gen = RngStream(10).generator
    for j in (1, 2, 3):
        sizes = (2,) * j
        vals = {theory.thm2_density(tuple(sorted(gen.uniform(0, 2, j))), sizes, 2.0, SUPER, rl, tab)
                for _ in range(10)}
        assert len(vals) == 1


def test_thm2_normalises():
    # sum over j and sizes of r^j e^{-rT} (sum l p_l)^j T^j / j! / E[N_T] = 1
    T = 1.5
    tab = genfun.build_markov(SUPER, 1.0, T)
    rl = RenewalLaw(Exponential(1.0))
    gen = RngStream(11).generator
    total = 0.0
    for j in range(0, 30):
        ts = tuple(sorted(gen.uniform(0, T, j)))
        per_sizes = sum(
            theory.thm2_density(ts, sizes, T, SUPER, rl, tab)
            for sizes in theory.lineage_outcomes(SUPER, j)) if j <= 6 else (
            theory.thm2_density(ts, (1,) * j, T, SUPER, rl, tab) * (SUPER.mean / 0.3) ** j)
        total += per_sizes * T ** j / math.factorial(j)
    assert total == pytest.approx(1.0, abs=2e-3)


def test_thm3_examples(yule):
    T, r = 1.3, 1.0
    tab = genfun.build_markov(yule, r, T)
    rl = RenewalLaw(Exponential(r))
    for t1 in (0.1, 0.9):
        assert theory.thm3_density((t1,), (2,), (0,), T, yule, rl, tab) == \
            pytest.approx(r * math.exp(-r * T), rel=1e-12)
        assert theory.thm3_density((t1,), (2,), (1,), T, yule, rl, tab) == 0.0
    with pytest.raises(DomainError):
        theory.thm3_density((0.5,), (2,), (2,), T, yule, rl, tab)


@pytest.mark.parametrize("law", [Exponential(1.0), Gamma(0.7, 1.0)])
def test_thm3_total_mass(law):
    T = 1.5
    tab = genfun.build_table(SUPER, law, T, steps=600)
    rl = RenewalLaw(law)
    j_max = theory.event_count_quantile(rl, T, n=200_000, rng=RngStream(12))
    est, se = theory.thm3_total_mass(tab, SUPER, rl, T, j_max, 20000, RngStream(13))
    surv = 1 - genfun.extinction_prob(tab, T)
    assert abs(est - surv) <= 3 * se + 1e-4


def test_discrete_thm2_thm3(critical):
    d = OffspringDistribution((0.3, 0.2, 0.5))
    assert sum(theory.thm2_discrete_exact(s, d) for s in theory.lineage_outcomes(d, 3)) == \
        pytest.approx(1.0, abs=1e-12)
    tab = genfun.build_discrete(d, 3)
    total = sum(theory.thm3_discrete_exact(s, k, tab, d)
                for s, k in theory.lineage_outcomes(d, 3, with_ks=True))
    assert total == pytest.approx(1 - tab.coeffs[3][0], abs=1e-12)
    with pytest.raises(DomainError):
        theory.thm3_discrete_exact((2, 2, 2), (0, 2, 0), tab, d)


def test_poisson_count_quantile():
    assert theory.poisson_count_quantile(1.3, 3.0) >= 12
