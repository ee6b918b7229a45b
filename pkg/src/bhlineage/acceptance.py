"""Acceptance criteria, runnable from pytest and from ``bhlineage selftest``.

Every criterion returns a :class:`CriterionResult`; ``details`` holds only
seed-determined numbers so that artifacts are byte-reproducible, while the
wall-clock time is kept separately.
"""
from __future__ import annotations

import filecmp
import itertools
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from . import genfun, io, theory
from .distributions import Gamma, OffspringDistribution, RngStream
from .enumeration import enumerate_genealogies
from .experiment import (ExperimentConfig, _per_bin_rows, compare_palm_continuous,
                         compare_uniform_continuous, run_compare, simulate)
from .stats import Axis, expected_histogram, tv_mc_error

CRITICAL_BINARY = (0.5, 0.0, 0.5)
AC34_LAW = (0.3, 0.2, 0.5)
AC5_LAW = (0.2, 0.3, 0.5)


@dataclass
class CriterionResult:
    id: str
    title: str
    passed: bool
    details: dict
    budget_seconds: float
    seconds: float = 0.0

    @property
    def within_budget(self) -> bool:
        return self.seconds < self.budget_seconds

    @property
    def ok(self) -> bool:
        return self.passed and self.within_budget

    def line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        note = "" if self.within_budget else f" (over {self.budget_seconds:.0f}s budget)"
        return f"[{verdict}] {self.id} {self.title}: {self.seconds:.1f}s{note}"

    def artifact(self) -> dict:
        return {"id": self.id, "title": self.title, "passed": self.passed, "details": self.details}


def _timed(fn: Callable[..., CriterionResult], *args, **kwargs) -> CriterionResult:
    t0 = time.perf_counter()
    res = fn(*args, **kwargs)
    res.seconds = time.perf_counter() - t0
    return res


# -- AC-1 -------------------------------------------------------------------------

def ac1_genfun(seed: int = 0, threads: int = 1) -> CriterionResult:
    yule = OffspringDistribution((0.0, 0.0, 1.0))
    crit = OffspringDistribution(CRITICAL_BINARY)
    ty = genfun.build_markov(yule, 1.0, 1.0, steps=1000, s_points=201)
    t, s = np.meshgrid(ty.t_grid, ty.s_grid, indexing="ij")
    e = np.exp(-t)
    yule_err = float(np.max(np.abs(ty.values - s * e / (1.0 - s * (1.0 - e)))))
    tc = genfun.build_markov(crit, 1.0, 2.0, steps=1000, s_points=201)
    tt = tc.t_grid
    crit_err = float(np.max(np.abs(tc.values[:, 0] - tt / (tt + 2.0))))
    details = {"yule_sup_err": yule_err, "critical_extinction_sup_err": crit_err,
               "grid": [len(ty.t_grid) - 1, 201], "tolerance": 1e-6}
    return CriterionResult("AC-1", "generating functions vs closed forms",
                           yule_err <= 1e-6 and crit_err <= 1e-6, details, 10.0)


# -- AC-2 -------------------------------------------------------------------------

def ac2_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(offspring=list(CRITICAL_BINARY),
                            lifetime={"kind": "exponential", "rate": 1.0}, horizon=2.0,
                            scheme="uniform", replicates=200_000, base_seed=seed,
                            slice_j=1, slice_sizes=[2], t_bins=10, s_bins=10, marker_bins=20)


def ac2_uniform_lineage_continuous(seed: int = 20240601, threads: int = 1,
                            out_dir: Path = None) -> CriterionResult:
    cfg = ac2_config(seed)
    res = simulate(cfg, threads)
    table = genfun.build_markov(cfg.offspring_law, 1.0, 2.0)
    tests, (obs, exp, err) = compare_uniform_continuous(cfg, res, table, bin_sigma=4.0)
    if out_dir is not None:
        header = ["T1_lo", "S_lo", "observed", "expected", "error"]
        io.write_csv(Path(out_dir) / "ac2_bins.csv", header, _per_bin_rows(obs, exp, err))
    passed = all(t["verdict"] == "PASS" for t in tests)
    return CriterionResult("AC-2", "uniform-pick lineage slice and mark density (Monte Carlo)", passed,
                           {"simulation": res.summary(), "tests": tests}, 120.0)


# -- AC-3 / AC-4 ----------------------------------------------------------------------

def ac3_uniform_lineage_discrete(seed: int = 0, threads: int = 1) -> CriterionResult:
    d = OffspringDistribution(AC34_LAW)
    law = enumerate_genealogies(d, 3)
    table = genfun.build_discrete(d, 3)
    rows = {}
    worst = 0.0
    for sizes in itertools.product((1, 2), repeat=3):
        exact = law.uniform.get(sizes, 0.0)
        theo = theory.thm1_discrete_exact(sizes, table, d)
        worst = max(worst, abs(exact - theo))
        rows[",".join(map(str, sizes))] = {"enumeration": exact, "theory": theo}
    crit = OffspringDistribution(CRITICAL_BINARY)
    hand_enum = enumerate_genealogies(crit, 2).uniform.get((2, 2), 0.0)
    hand_theo = theory.thm1_discrete_exact((2, 2), genfun.build_discrete(crit, 2), crit)
    hand_ok = abs(hand_enum - 0.375) <= 1e-12 and abs(hand_theo - 0.375) <= 1e-12
    return CriterionResult("AC-3", "uniform-pick lineage law for unit lifetimes vs exact enumeration",
                           worst <= 1e-12 and hand_ok,
                           {"max_abs_diff": worst, "outcomes": rows,
                            "hand_check": {"enumeration": hand_enum, "theory": hand_theo,
                                           "expected": 0.375}}, 30.0)


def ac4_leftmost_lineage_discrete(seed: int = 0, threads: int = 1) -> CriterionResult:
    d = OffspringDistribution(AC34_LAW)
    law = enumerate_genealogies(d, 3)
    table = genfun.build_discrete(d, 3)
    worst = 0.0
    mass_k0 = 0.0
    total = 0.0
    rows = {}
    for sizes, ks in theory.lineage_outcomes(d, 3, with_ks=True):
        exact = law.leftmost.get((sizes, ks), 0.0)
        theo = theory.thm3_discrete_exact(sizes, ks, table, d)
        worst = max(worst, abs(exact - theo))
        total += exact
        if any(k == 0 and l >= 2 for l, k in zip(sizes, ks)):
            mass_k0 += exact
        rows[f"{','.join(map(str, sizes))}|{','.join(map(str, ks))}"] = {
            "enumeration": exact, "theory": theo}
    admissible = set(theory.lineage_outcomes(d, 3, with_ks=True))
    unexplained = sum(v for k, v in law.leftmost.items() if k not in admissible)
    survival = 1.0 - float(table.coeffs[3][0])
    ok = worst <= 1e-12 and abs(total - survival) <= 1e-12 and unexplained == 0.0 and mass_k0 > 0
    return CriterionResult("AC-4", "leftmost lineage law vs exact enumeration (skips from 0)", ok,
                           {"max_abs_diff": worst, "mass_k0_with_siblings": mass_k0,
                            "total_mass": total, "survival": survival, "outcomes": rows}, 30.0)


# -- AC-5 ---------------------------------------------------------------------------

def ac5_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(offspring=list(AC5_LAW),
                            lifetime={"kind": "exponential", "rate": 1.0}, horizon=3.0,
                            scheme="palm", replicates=100_000, base_seed=seed)


def ac5_palm_lineage(seed: int = 20240605, threads: int = 1) -> CriterionResult:
    cfg = ac5_config(seed)
    res = simulate(cfg, threads)
    table = genfun.build_markov(cfg.offspring_law, 1.0, 3.0)
    tests, _ = compare_palm_continuous(cfg, res, table)
    passed = all(t["verdict"] == "PASS" for t in tests) and len(tests) == 3
    return CriterionResult("AC-5", "Palm lineage is homogeneous Poisson(r m) with sizes l p_l / m",
                           passed, {"simulation": res.summary(), "tests": tests}, 120.0)


# -- AC-6 ---------------------------------------------------------------------------

def _random_table(rng: RngStream):
    gen = rng.generator
    k_max = int(gen.integers(1, 5))
    probs = gen.dirichlet(np.ones(k_max + 1))
    probs[-1] = 1.0 - math.fsum(probs[:-1])
    if probs[-1] <= 0:
        probs[-1] = 0.0
    d = OffspringDistribution(tuple(probs))
    T = float(gen.uniform(0.5, 4.0))
    if gen.random() < 0.5:
        return d, genfun.build_markov(d, float(gen.uniform(0.3, 2.0)), T, steps=200, s_points=101)
    law = Gamma(float(gen.uniform(0.8, 3.0)), float(gen.uniform(0.3, 1.0)))
    return d, genfun.build_volterra(d, law, T, steps=200, s_points=101)


def ac6_rate_bias(seed: int = 6, threads: int = 1) -> CriterionResult:
    rng = RngStream(seed, 0)
    neutral = []
    for _ in range(20):
        d, table = _random_table(rng)
        T = table.horizon
        t = float(rng.random()) * T
        neutral.append({"offspring": list(d.probs), "method": table.method, "T": T, "t": t,
                        "B": theory.rate_bias(table, t, T, 1)})
    worst = max(abs(r["B"] - 1.0) for r in neutral)
    crit = OffspringDistribution(CRITICAL_BINARY)
    gaps = []
    for T in (5.0, 10.0, 20.0, 40.0):
        table = genfun.build_markov(crit, 1.0, T, steps=1000)
        gaps.append(abs(theory.rate_bias(table, T - 1.0, T, 2) - 1.0))
    decreasing = all(a > b for a, b in zip(gaps, gaps[1:]))
    return CriterionResult("AC-6", "rate bias: l = 1 neutrality and B(T-1, T, 2) -> 1",
                           worst <= 1e-10 and decreasing,
                           {"max_neutral_err": worst, "neutral": neutral,
                            "horizons": [5.0, 10.0, 20.0, 40.0], "abs_B_minus_1": gaps}, 60.0)


# -- AC-7 ---------------------------------------------------------------------------

def _draw_counts(gen, probs, size):
    return gen.choice(len(probs), size=size, p=probs)


def _group_maxima(gen, counts):
    """Max of ``counts[...]`` i.i.d. uniforms per cell (-inf for empty cells)."""
    width = max(int(counts.max()), 1)
    u = gen.random(counts.shape + (width,))
    u[np.arange(width) >= counts[..., None]] = -np.inf
    return u.max(axis=-1)


def _mark_masses(density, bins):
    axis = [Axis.uniform("S", 0.0, 1.0, bins)]
    return expected_histogram(density, axis, order=17).counts


def _tv_check(observed, expected, n):
    """TV of two full probability vectors against 3x its Monte Carlo scale."""
    tv = 0.5 * float(np.abs(observed - expected).sum())
    err = tv_mc_error(expected, n)
    z = np.abs(observed - expected) / np.sqrt(np.maximum(expected * (1 - expected), 1e-300) / n)
    return {"tv": tv, "threshold": 3.0 * err, "max_cell_z": float(z.max()),
            "passed": tv <= 3.0 * err}


def max_mark_check(n_probs, ell, n, rng: RngStream, bins: int = 20) -> dict:
    """Brute-force max of marks over ``ell`` groups vs ``l f(s)^(l-1) f'(s)``."""
    f = OffspringDistribution(tuple(n_probs))
    gen = rng.generator
    counts = _draw_counts(gen, f.probs, (n, ell))
    smax = _group_maxima(gen, counts).max(axis=1)
    alive = counts.sum(axis=1) > 0
    hist = np.histogram(smax[alive], bins=bins, range=(0.0, 1.0))[0] / n
    observed = np.append(hist, 1.0 - alive.mean())
    masses = _mark_masses(lambda s: ell * f.pgf(s) ** (ell - 1) * f.pgf_prime(s), bins)
    expected = np.append(masses, f.probs[0] ** ell)
    return {"ell": ell, "n": n, **_tv_check(observed, expected, n)}


def random_groups_max_mark_check(n_probs, l_probs, n, rng: RngStream, bins: int = 20) -> dict:
    """As :func:`max_mark_check` with a random group count ``L ~ l_probs``."""
    f = OffspringDistribution(tuple(n_probs))
    L = OffspringDistribution(tuple(l_probs))
    gen = rng.generator
    groups = _draw_counts(gen, L.probs, n)
    counts = _draw_counts(gen, f.probs, (n, L.k_max))
    counts[np.arange(L.k_max)[None, :] >= groups[:, None]] = 0
    smax = _group_maxima(gen, counts).max(axis=1)
    alive = counts.sum(axis=1) > 0
    observed, expected = [], []
    for ell in range(1, L.k_max + 1):
        sel = alive & (groups == ell)
        observed.append(np.histogram(smax[sel], bins=bins, range=(0.0, 1.0))[0] / n)
        expected.append(_mark_masses(
            lambda s, ell=ell: ell * L.p(ell) * f.pgf(s) ** (ell - 1) * f.pgf_prime(s), bins))
    observed = np.append(np.concatenate(observed), 1.0 - alive.mean())
    expected = np.concatenate(expected)
    expected = np.append(expected, 1.0 - expected.sum())
    return {"n": n, **_tv_check(observed, expected, n)}


def first_survivor_skip_check(n_probs, ell, n, rng: RngStream) -> dict:
    """Skips before the first group with ``N >= 1`` in random uniform order."""
    f = OffspringDistribution(tuple(n_probs))
    gen = rng.generator
    counts = _draw_counts(gen, f.probs, (n, ell))
    u = gen.random((n, ell))
    alive = counts.sum(axis=1) > 0
    smin = np.where(counts >= 1, u, np.inf).min(axis=1)
    K = (u < smin[:, None]).sum(axis=1)
    observed = np.array([np.mean(alive & (K == k)) for k in range(ell)] + [1.0 - alive.mean()])
    p0 = f.probs[0]
    expected = np.array([p0 ** k * (1.0 - p0) for k in range(ell)] + [p0 ** ell])
    return {"ell": ell, "n": n, **_tv_check(observed, expected, n)}


def ac7_mark_laws(seed: int = 7, threads: int = 1, n: int = 1_000_000) -> CriterionResult:
    n_law = (0.35, 0.25, 0.25, 0.15)
    checks = {
        "classic_max_of_uniforms": max_mark_check((0.0, 1.0), 4, n, RngStream(seed, 0)),
        "max_mark_fixed_groups": max_mark_check(n_law, 3, n, RngStream(seed, 1)),
        "max_mark_random_groups": random_groups_max_mark_check(n_law, (0.2, 0.3, 0.3, 0.2), n, RngStream(seed, 2)),
        "first_survivor_skips": first_survivor_skip_check(n_law, 4, n, RngStream(seed, 3)),
    }
    return CriterionResult("AC-7", "mark and skip laws by brute-force micro-simulation",
                           all(c["passed"] for c in checks.values()), checks, 60.0)


# -- AC-8 ---------------------------------------------------------------------------

def ac8_pipeline_determinism(seed: int = 8, threads: int = 8) -> CriterionResult:
    """Small simulate + compare run with 1 and ``threads`` workers; artifacts must match."""
    cfg = ExperimentConfig(offspring=list(AC5_LAW), lifetime={"kind": "gamma", "shape": 2.0,
                           "scale": 0.5}, horizon=1.5, scheme="leftmost", replicates=6000,
                           base_seed=seed, chunk_size=500)
    with tempfile.TemporaryDirectory() as tmp:
        dirs = []
        for th in (1, max(threads, 2)):
            out = Path(tmp) / f"threads{th}"
            res = simulate(cfg, th)
            io.write_lineages(out / "lineages.csv", (r for r in res.records if r.survived))
            run_compare(cfg, out, result=res)
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        same = all(filecmp.cmp(dirs[0] / nm, dirs[1] / nm, shallow=False) for nm in names)
        same = same and names == sorted(p.name for p in dirs[1].iterdir())
    return CriterionResult("AC-8", "pipeline artifacts identical across thread counts", same,
                           {"files": names, "identical": same}, 60.0)


CRITERIA: Dict[str, Callable[..., CriterionResult]] = {
    "AC-1": ac1_genfun,
    "AC-2": ac2_uniform_lineage_continuous,
    "AC-3": ac3_uniform_lineage_discrete,
    "AC-4": ac4_leftmost_lineage_discrete,
    "AC-5": ac5_palm_lineage,
    "AC-6": ac6_rate_bias,
    "AC-7": ac7_mark_laws,
    "AC-8": ac8_pipeline_determinism,
}


def run_selftest(out_dir, seed: int = None, threads: int = 1, only=None,
                 echo: Callable[[str], None] = print) -> List[CriterionResult]:
    """Run the criteria, write one JSON per criterion plus ``selftest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for cid, fn in CRITERIA.items():
        if only and cid not in only:
            continue
        kwargs = {"threads": threads}
        if seed is not None:
            kwargs["seed"] = seed
        if cid == "AC-2":
            kwargs["out_dir"] = out
        res = _timed(fn, **kwargs)
        io.write_json(out / f"{cid.lower().replace('-', '')}.json", res.artifact())
        echo(res.line())
        results.append(res)
    io.write_json(out / "selftest.json", {
        "seed": seed, "criteria": {r.id: r.passed for r in results},
        "passed": all(r.passed for r in results)})
    return results
