from collections import Counter

import numpy as np
import pytest
from scipy import stats

from bhlineage import acceptance as acc
from bhlineage import genfun
from bhlineage.acceptance import (first_survivor_skip_check, max_mark_check,
                                  random_groups_max_mark_check)
from bhlineage.distributions import (Deterministic, Exponential, OffspringDistribution,
                                     RngStream)
from bhlineage.errors import ConfigError
from bhlineage.experiment import palm_gap_uniforms
from bhlineage.sampling import (Scheme, sample, sample_leftmost, sample_palm,
                                sample_uniform_marker)
from bhlineage.simulator import Tree, TreeNode, simulate_tree
from bhlineage.stats import clustered_ks_test

SUPER = OffspringDistribution((0.2, 0.3, 0.5))


def _records_ok(rec, T):
    assert len(rec.times) == len(rec.sizes) == rec.J
    assert all(0 < t <= T for t in rec.times)
    assert all(a < b for a, b in zip(rec.times, rec.times[1:]))
    assert all(l >= 1 for l in rec.sizes)
    if rec.scheme is Scheme.LEFTMOST and rec.survived:
        assert all(0 <= k <= l - 1 for k, l in zip(rec.left_extinct, rec.sizes))
    if not rec.survived:
        assert rec.J == 0 and rec.sizes == ()


def test_scheme_parse():
    assert Scheme.parse("Palm") is Scheme.PALM
    assert Scheme.parse("UniformMarker") is Scheme.UNIFORM
    assert Scheme.parse(Scheme.LEFTMOST) is Scheme.LEFTMOST
    with pytest.raises(ConfigError):
        Scheme.parse("rightmost")


def test_record_invariants():
    for r in range(300):
        rng = RngStream(20, r)
        tree = simulate_tree(SUPER, Exponential(1.0), 2.5, rng)
        for scheme in Scheme:
            for rec in sample(tree, scheme, rng, r):
                _records_ok(rec, 2.5)
                assert rec.replicate == r


def test_single_alive_mark_is_uniform():
    marks = []
    for r in range(20000):
        rng = RngStream(21, r)
        tree = simulate_tree(OffspringDistribution((0.0, 1.0)), Exponential(1.0), 1.0, rng)
        marks.append(sample_uniform_marker(tree, rng).marker_S)
    assert stats.kstest(marks, "uniform").pvalue > 1e-3


def test_mark_density_given_alive_count():
    # conditioned on |alive| = l the mark is the max of l uniforms: CDF s^l
    by_size = {}
    for r in range(40000):
        rng = RngStream(22, r)
        tree = simulate_tree(SUPER, Exponential(1.0), 1.0, rng)
        if tree.size_at_horizon in (2, 3):
            by_size.setdefault(tree.size_at_horizon, []).append(
                sample_uniform_marker(tree, rng).marker_S)
    for ell, marks in by_size.items():
        assert len(marks) > 1000
        assert stats.kstest(marks, lambda s, ell=ell: np.clip(s, 0, 1) ** ell).pvalue > 1e-3


def test_unit_lifetime_lineage():
    tree = simulate_tree(OffspringDistribution((0.0, 1.0)), Deterministic(1.0), 4.0, RngStream(0))
    rec = sample_uniform_marker(tree, RngStream(1))
    # events at t <= T are on the lineage, so T = n gives exactly n events
    assert rec.J == 4 and rec.sizes == (1, 1, 1, 1) and rec.times == (1.0, 2.0, 3.0, 4.0)


def test_uniformity_on_fixed_tree():
    tree = None
    for r in range(1000):
        tree = simulate_tree(SUPER, Exponential(1.0), 2.0, RngStream(23, r))
        if tree.size_at_horizon >= 3:
            break
    k = tree.size_at_horizon
    picks = Counter(sample_uniform_marker(tree, RngStream(24, i)).node for i in range(10**4))
    assert set(picks) == set(tree.alive)
    counts = np.array([picks[v] for v in tree.alive])
    assert stats.chisquare(counts).pvalue > 1e-3
    assert k >= 3


def test_palm_examples():
    extinct = Tree([TreeNode(0, None, 0.0, 0.5, 0)], 1.0)
    assert sample_palm(extinct) == []
    for r in range(500):
        tree = simulate_tree(SUPER, Exponential(1.0), 2.0, RngStream(25, r))
        if tree.size_at_horizon == 3:
            break
    recs = sample_palm(tree)
    assert len(recs) == 3 and sum(r.weight for r in recs) == 3
    first = {r.times[0] for r in recs}
    assert len(first) == 1


def test_palm_total_weight_is_population():
    total, alive = 0.0, 0
    for r in range(2000):
        tree = simulate_tree(SUPER, Exponential(1.0), 2.0, RngStream(26, r))
        total += sum(rec.weight for rec in sample_palm(tree))
        alive += tree.size_at_horizon
    assert total == alive


def test_palm_pure_birth_gaps():
    # the size-biased lineage of a Yule tree is a Poisson process with rate 2 r
    rate, T = 1.5, 1.5
    records = []
    for r in range(3000):
        tree = simulate_tree(OffspringDistribution((0.0, 0.0, 1.0)), Exponential(rate), T,
                             RngStream(27, r))
        records.extend(sample_palm(tree, replicate=r))
    u, clusters = palm_gap_uniforms(records, T, 2 * rate)
    assert clustered_ks_test(u, clusters, RngStream(270)).p_value > 1e-3
    # a wrong rate is rejected
    u_bad, _ = palm_gap_uniforms(records, T, rate)
    assert clustered_ks_test(u_bad, clusters, RngStream(271)).p_value < 1e-3


def test_leftmost_examples():
    for r in range(200):
        tree = simulate_tree(OffspringDistribution((0.0, 0.0, 1.0)), Exponential(1.0), 2.0,
                             RngStream(28, r))
        assert set(sample_leftmost(tree).left_extinct) <= {0}
        tree = simulate_tree(OffspringDistribution((0.0, 1.0)), Exponential(1.0), 2.0,
                             RngStream(29, r))
        rec = sample_leftmost(tree)
        deaths = sum(1 for n in tree.nodes if n.death_time <= 2.0)
        assert rec.J == deaths and set(rec.sizes) <= {1} and set(rec.left_extinct) <= {0}


def test_leftmost_skip_matches_bruteforce():
    for r in range(300):
        tree = simulate_tree(SUPER, Exponential(1.0), 2.5, RngStream(30, r))
        rec = sample_leftmost(tree)
        if not rec.survived:
            continue
        path = tree.path_to(rec.node)
        for k, (a, b) in zip(rec.left_extinct, zip(path[:-1], path[1:])):
            kids = tree.nodes[a].children
            assert kids.index(b) == k
            assert not any(tree.survives(c) for c in kids[:k])


def test_leftmost_first_skip_law(critical):
    # P(K_1 = k | L_1 = 2, T_1 = t) is proportional to q^k with q = F_{T - t}(0)
    T = 2.0
    tab = genfun.build_markov(critical, 1.0, T)
    bins = np.linspace(0.0, T, 5)
    hits = np.zeros((4, 2))
    expected_ratio = np.zeros(4)
    records = []
    for r in range(60000):
        tree = simulate_tree(critical, Exponential(1.0), T, RngStream(31, r))
        rec = sample_leftmost(tree)
        if rec.survived and rec.J >= 1 and rec.sizes[0] == 2:
            records.append((rec.times[0], rec.left_extinct[0]))
    t1 = np.array([t for t, _ in records])
    k1 = np.array([k for _, k in records])
    for b in range(4):
        sel = (t1 >= bins[b]) & (t1 < bins[b + 1])
        hits[b] = [np.sum(sel & (k1 == 0)), np.sum(sel & (k1 == 1))]
        # E[q / (1 + q)] over the first-event times in the bin
        q = tab.F(T - t1[sel], 0.0)
        expected_ratio[b] = np.mean(q / (1 + q))
    n = hits.sum(axis=1)
    observed = hits[:, 1] / n
    se = np.sqrt(expected_ratio * (1 - expected_ratio) / n)
    assert np.all(np.abs(observed - expected_ratio) <= 3.5 * se)


def test_max_mark_fixed_groups():
    assert max_mark_check((0.35, 0.25, 0.25, 0.15), 3, 10**6, RngStream(40))["passed"]
    assert max_mark_check((0.0, 1.0), 5, 10**6, RngStream(41))["passed"]


def test_max_mark_check_has_power():
    # feed samples with the wrong group count: the TV check must reject them
    f = (0.35, 0.25, 0.25, 0.15)
    good = max_mark_check(f, 3, 10**6, RngStream(42))
    assert good["passed"]
    rng = RngStream(42)
    d = OffspringDistribution(f)
    counts = rng.generator.choice(4, size=(10**6, 2), p=d.probs)
    smax = acc._group_maxima(rng.generator, counts).max(axis=1)
    alive = counts.sum(axis=1) > 0
    obs = np.append(np.histogram(smax[alive], 20, (0, 1))[0] / 10**6, 1 - alive.mean())
    exp = np.append(acc._mark_masses(lambda s: 3 * d.pgf(s) ** 2 * d.pgf_prime(s), 20),
                    d.probs[0] ** 3)
    assert not acc._tv_check(obs, exp, 10**6)["passed"]


def test_max_mark_random_groups():
    assert random_groups_max_mark_check((0.35, 0.25, 0.25, 0.15), (0.2, 0.3, 0.3, 0.2),
                                        10**6, RngStream(43))["passed"]


def test_first_survivor_skip_law():
    assert first_survivor_skip_check((0.35, 0.25, 0.25, 0.15), 4, 10**6, RngStream(44))["passed"]
    assert first_survivor_skip_check((0.6, 0.4), 3, 10**6, RngStream(45))["passed"]
