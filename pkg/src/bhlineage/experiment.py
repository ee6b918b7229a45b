"""Experiment configuration and the simulate / compare / enumerate pipelines."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import genfun, io, theory
from .distributions import (Deterministic, Exponential, LifetimeLaw, OffspringDistribution,
                            RngStream, lifetime_from_dict)
from .enumeration import enumerate_genealogies
from .errors import ConfigError, InsufficientData, LineageError, PopulationCapExceeded
from .sampling import LineageRecord, Scheme, sample
from .simulator import simulate_tree
from .stats import (Axis, JointHistogram, RecordFilter, bin_records, chi_square_test,
                    clustered_chi_square, clustered_ks_test, expected_histogram,
                    ratio_estimate, tv_distance, tv_mc_error)

logger = logging.getLogger(__name__)

MAX_OVERFLOW_FRACTION = 1e-4
MIN_SURVIVORS = 1000
ALPHA = 1e-3


class PopulationOverflow(LineageError, RuntimeError):
    """Too many simulated trees hit ``max_nodes``."""


@dataclass
class ExperimentConfig:
    offspring: List[float]
    lifetime: dict
    horizon: float
    scheme: str = "uniform"
    replicates: int = 10000
    base_seed: int = 1
    max_nodes: int = 10**6
    genfun_steps: int = genfun.DEFAULT_STEPS
    genfun_s_points: int = genfun.DEFAULT_S_POINTS
    slice_j: int = 1
    slice_sizes: List[int] = field(default_factory=lambda: [2])
    t_bins: int = 10
    s_bins: int = 10
    marker_bins: int = 20
    out_dir: str = "out"
    strict_numerics: bool = True
    chunk_size: int = 2000
    trace_trees: int = 0

    def __post_init__(self):
        self.offspring_law = OffspringDistribution(tuple(self.offspring))
        self.lifetime_law = lifetime_from_dict(self.lifetime)
        self.scheme_enum = Scheme.parse(self.scheme)
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.max_nodes < 1 or self.chunk_size < 1:
            raise ConfigError("max_nodes and chunk_size must be >= 1")
        if len(self.slice_sizes) != self.slice_j:
            raise ConfigError("slice_sizes must have slice_j entries")

    @property
    def lattice(self) -> bool:
        return isinstance(self.lifetime_law, Deterministic)

    @property
    def discrete_horizon(self) -> Optional[int]:
        """Integer horizon when the unit-lifetime lattice oracle applies."""
        law = self.lifetime_law
        if isinstance(law, Deterministic) and law.value == 1.0 and float(self.horizon).is_integer():
            return int(self.horizon)
        return None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return io.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


# -- simulation -----------------------------------------------------------------

@dataclass
class SimulationResult:
    records: List[LineageRecord]
    alive_counts: np.ndarray
    overflow: int
    replicates: int

    @property
    def survival_fraction(self) -> float:
        return float(np.mean(self.alive_counts > 0)) if self.alive_counts.size else 0.0

    @property
    def overflow_fraction(self) -> float:
        return self.overflow / self.replicates

    def summary(self) -> dict:
        n = self.alive_counts.size
        mean = float(self.alive_counts.mean()) if n else 0.0
        sd = float(self.alive_counts.std(ddof=1)) if n > 1 else 0.0
        return {
            "replicates": self.replicates,
            "completed": int(n),
            "overflow": self.overflow,
            "overflow_fraction": self.overflow_fraction,
            "survival_fraction": self.survival_fraction,
            "mean_N_T": mean,
            "mean_N_T_stderr": sd / math.sqrt(n) if n else 0.0,
            "records": len(self.records),
        }


def _run_chunk(cfg: ExperimentConfig, lo: int, hi: int):
    records, alive, overflow = [], [], 0
    d, law, T, scheme = cfg.offspring_law, cfg.lifetime_law, float(cfg.horizon), cfg.scheme_enum
    for r in range(lo, hi):
        rng = RngStream(cfg.base_seed, r)
        try:
            tree = simulate_tree(d, law, T, rng, cfg.max_nodes)
        except PopulationCapExceeded:
            overflow += 1
            continue
        alive.append(tree.size_at_horizon)
        records.extend(sample(tree, scheme, rng, r))
    return records, alive, overflow


def simulate(cfg: ExperimentConfig, threads: int = 1) -> SimulationResult:
    """All replicates, in fixed-size chunks merged in replicate order.

    Replicate ``r`` always uses ``RngStream(base_seed, r)``, so the output is
    independent of ``threads``.
    """
    bounds = [(lo, min(lo + cfg.chunk_size, cfg.replicates))
              for lo in range(0, cfg.replicates, cfg.chunk_size)]
    if threads <= 1:
        parts = [_run_chunk(cfg, lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _run_chunk(cfg, *b), bounds))
    records, alive, overflow = [], [], 0
    for recs, al, ov in parts:
        records.extend(recs)
        alive.extend(al)
        overflow += ov
    res = SimulationResult(records, np.asarray(alive, dtype=np.int64), overflow, cfg.replicates)
    if res.overflow_fraction > MAX_OVERFLOW_FRACTION:
        raise PopulationOverflow(
            f"{overflow} of {cfg.replicates} trees exceeded max_nodes={cfg.max_nodes}")
    return res


def run_simulate(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> dict:
    out = Path(out_dir or cfg.out_dir)
    res = simulate(cfg, threads)
    # extinct trees only count towards n_trials, which the summary carries
    io.write_lineages(out / "lineages.csv", (r for r in res.records if r.survived))
    if cfg.trace_trees:
        for r in range(min(cfg.trace_trees, cfg.replicates)):
            tree = simulate_tree(cfg.offspring_law, cfg.lifetime_law, float(cfg.horizon),
                                 RngStream(cfg.base_seed, r), cfg.max_nodes)
            io.write_trace(out / f"trace_{r}.csv", tree)
    summary = {"config": cfg.to_dict(), **res.summary()}
    io.write_json(out / "summary.json", summary)
    return summary


def build_table(cfg: ExperimentConfig) -> genfun.GenFunTable:
    return genfun.build_table(cfg.offspring_law, cfg.lifetime_law, float(cfg.horizon),
                              cfg.genfun_steps, cfg.genfun_s_points, cfg.strict_numerics)


def run_genfun(cfg: ExperimentConfig, out_dir=None) -> genfun.GenFunTable:
    table = build_table(cfg)
    io.write_genfun(Path(out_dir or cfg.out_dir) / "genfun.csv", table)
    return table


def run_predict(cfg: ExperimentConfig, out_dir=None, t_points: int = 21) -> Path:
    """Rate-bias rows ``(t, ell, B, rate)`` then mark-density rows ``(s, s_density)``."""
    table = build_table(cfg)
    d, T = cfg.offspring_law, table.horizon
    rate = cfg.lifetime_law.rate if isinstance(cfg.lifetime_law, Exponential) else None
    rows = []
    for t in np.linspace(0.0, T, t_points):
        for ell in range(1, d.k_max + 1):
            if d.p(ell) == 0:
                continue
            B = theory.rate_bias(table, float(t), T, ell)
            r = rate * ell * d.p(ell) * B if rate is not None else None
            rows.append((float(t), ell, B, r, None, None))
    dens = theory.s_density(table, table.s_grid, T)
    for s, v in zip(table.s_grid, dens):
        rows.append((None, None, None, None, float(s), float(v)))
    return io.write_csv(Path(out_dir or cfg.out_dir) / "predict.csv",
                        ("t", "ell", "B", "rate", "s", "s_density"), rows)


def run_enumerate(cfg: ExperimentConfig, out_dir=None, state_budget: int = 10**7) -> dict:
    n = cfg.discrete_horizon
    if n is None:
        raise ConfigError("enumerate needs deterministic(1) lifetimes and an integer horizon")
    law = enumerate_genealogies(cfg.offspring_law, n, state_budget)
    out = law.to_json()
    if out_dir is not None or cfg.out_dir:
        io.write_json(Path(out_dir or cfg.out_dir) / "enumerate.json", out)
    return out


# -- comparisons -------------------------------------------------------------------

def _test_entry(name, statistic, dof, p_value, tv, n_trials, bins, passed, **extra):
    return {"test": name, "statistic": statistic, "dof": dof, "p_value": p_value, "tv": tv,
            "n_trials": n_trials, "bins": bins, "verdict": "PASS" if passed else "FAIL", **extra}


def _per_bin_rows(obs: JointHistogram, exp: JointHistogram, err: np.ndarray):
    po, pe = obs.probabilities(), exp.counts / exp.n_trials
    for idx in np.ndindex(po.shape):
        lo = [obs.axes[k].edges[i] for k, i in enumerate(idx)]
        yield (*lo, float(po[idx]), float(pe[idx]), float(err[idx]))


def _graded(law: LifetimeLaw, axes) -> dict:
    """Node grading for time axes when the lifetime density blows up at 0."""
    shape = getattr(law, "shape", 1.0)
    if shape >= 1.0:
        return {}
    return {a.name: math.ceil(3.0 / shape) for a in axes if a.name.startswith("T")}


def compare_uniform_continuous(cfg, res, table, bin_sigma=4.0):
    """Joint (T_1..T_j, S) slice and the marginal law of S."""
    d, T, rl = cfg.offspring_law, table.horizon, theory.RenewalLaw(cfg.lifetime_law)
    n = res.replicates - res.overflow
    axes = [Axis.uniform(f"T{i + 1}", 0.0, T, cfg.t_bins) for i in range(cfg.slice_j)]
    axes.append(Axis.uniform("S", 0.0, 1.0, cfg.s_bins))
    flt = RecordFilter(cfg.slice_j, tuple(cfg.slice_sizes))
    obs = bin_records(res.records, axes, flt, n_trials=n)
    dens = theory.thm1_slice(table, d, rl, cfg.slice_sizes, T)
    graded = _graded(cfg.lifetime_law, axes)
    exp = expected_histogram(dens, axes, order=9, graded=graded)
    fine = expected_histogram(dens, axes, order=17, graded=graded)
    quad = np.abs(fine.counts - exp.counts)
    p = exp.counts
    mc = np.sqrt(p * (1 - p) / n)
    err = mc + quad
    z = np.abs(obs.probabilities() - p) / np.where(err > 0, err, np.inf)
    chi = chi_square_test(obs, exp)
    slice_ok = bool(np.all(z <= bin_sigma)) and chi.p_value >= ALPHA
    tests = [_test_entry("thm1_slice", chi.statistic, chi.dof, chi.p_value,
                         tv_distance(obs, exp), n, int(p.size), slice_ok,
                         max_bin_z=float(np.max(z)), out_of_range=obs.out_of_range)]

    s_axis = [Axis.uniform("S", 0.0, 1.0, cfg.marker_bins)]
    obs_s = bin_records(res.records, s_axis, RecordFilter(), n_trials=n)
    exp_s = expected_histogram(lambda s: theory.s_density(table, np.clip(s, 0, 1), T),
                               s_axis, order=17)
    survivors = obs_s.total_weight
    if survivors < MIN_SURVIVORS:
        raise InsufficientData(f"only {survivors:.0f} surviving replicates (< {MIN_SURVIVORS})")
    tv = tv_distance(obs_s, exp_s)
    tv_err = tv_mc_error(exp_s.normalized(), survivors)
    tests.append(_test_entry("s_density_tv", tv, None, None, tv, n, cfg.marker_bins,
                             tv <= 3 * tv_err, tv_threshold=3 * tv_err))
    return tests, (obs, exp, err)


def _lattice_outcome_hist(records, outcomes, key, n):
    index = {o: i for i, o in enumerate(outcomes)}
    axis = Axis.integers("outcome", 0, len(outcomes) - 1)
    h = JointHistogram.empty([axis])
    h.n_trials = n
    for rec in records:
        if not rec.survived:
            continue
        i = index.get(key(rec))
        if i is None:
            h.out_of_range += rec.weight
        else:
            h.counts[i] += rec.weight
    return h


def compare_lattice(cfg, res, table):
    """Simulated lineage frequencies vs the exact unit-lifetime laws."""
    d, n_gen = cfg.offspring_law, cfg.discrete_horizon
    n = res.replicates - res.overflow
    law = enumerate_genealogies(d, n_gen)
    scheme = cfg.scheme_enum
    if scheme is Scheme.LEFTMOST:
        outcomes = list(theory.lineage_outcomes(d, n_gen, with_ks=True))
        theo = np.array([theory.thm3_discrete_exact(s, k, table, d) for s, k in outcomes])
        exact = np.array([law.leftmost.get(o, 0.0) for o in outcomes])
        key = lambda r: (r.sizes, r.left_extinct)
    else:
        outcomes = list(theory.lineage_outcomes(d, n_gen))
        if scheme is Scheme.UNIFORM:
            theo = np.array([theory.thm1_discrete_exact(s, table, d) for s in outcomes])
            exact = np.array([law.uniform.get(o, 0.0) for o in outcomes])
        else:
            theo = np.array([theory.thm2_discrete_exact(s, d) for s in outcomes])
            exact = np.array([law.palm.get(o, 0.0) / law.mean_alive for o in outcomes])
        key = lambda r: r.sizes
    diff = float(np.max(np.abs(theo - exact)))
    tests = [_test_entry("theory_vs_enumeration", diff, None, None, None, None, len(outcomes),
                         diff <= 1e-12)]
    obs = _lattice_outcome_hist(res.records, outcomes, key, n)
    if scheme is Scheme.PALM:
        counts = np.zeros((n, len(outcomes)))
        index = {o: i for i, o in enumerate(outcomes)}
        row = {r: i for i, r in enumerate(sorted({rec.replicate for rec in res.records}))}
        for rec in res.records:
            counts[row[rec.replicate], index[key(rec)]] += 1
        keep = theo > 0
        cc = clustered_chi_square(counts[:, keep], theo[keep])
        tests.append(_test_entry("palm_sizes_chi2", cc.statistic, cc.dof, cc.p_value, None, n,
                                 int(keep.sum()), cc.p_value >= ALPHA,
                                 design_effect=cc.design_effect))
    else:
        exp = JointHistogram(obs.axes, theo.copy(), n_trials=1)
        chi = chi_square_test(obs, exp)
        tests.append(_test_entry(f"{scheme.value}_outcomes_chi2", chi.statistic, chi.dof,
                                 chi.p_value, tv_distance(obs, exp), n, len(outcomes),
                                 chi.p_value >= ALPHA and obs.out_of_range == 0,
                                 out_of_range=obs.out_of_range))
    return tests, None


def palm_gap_uniforms(records, T: float, rate: float):
    """Probability-integral transform of Palm inter-event gaps.

    A gap starting at ``a`` is only seen when it ends by ``T``; given that,
    it is Exp(rate) truncated to ``[0, T - a]``, whose CDF maps it to Unif(0, 1).
    """
    u, cl = [], []
    for rec in records:
        a = 0.0
        for t in rec.times:
            g = t - a
            u.append(-math.expm1(-rate * g) / -math.expm1(-rate * (T - a)))
            cl.append(rec.replicate)
            a = t
    return np.asarray(u), np.asarray(cl)


def compare_palm_continuous(cfg, res, table, n_boot=1999):
    """Event times along Palm lineages: homogeneous Poisson, size-biased sizes."""
    d, T = cfg.offspring_law, table.horizon
    n = res.replicates - res.overflow
    survivors = int(np.sum(res.alive_counts > 0))
    if survivors < MIN_SURVIVORS:
        raise InsufficientData(f"only {survivors} surviving replicates (< {MIN_SURVIVORS})")
    by_tree = {}
    for rec in res.records:
        by_tree.setdefault(rec.replicate, []).append(rec)
    trees = sorted(by_tree)
    support = [l for l in range(1, d.k_max + 1) if d.p(l) > 0]
    m = d.mean
    probs = np.array([l * d.p(l) / m for l in support])
    counts = np.zeros((len(trees), len(support)))
    J = np.zeros(len(trees))
    W = np.zeros(len(trees))
    col = {l: i for i, l in enumerate(support)}
    for i, r in enumerate(trees):
        for rec in by_tree[r]:
            W[i] += rec.weight
            J[i] += rec.weight * rec.J
            for l in rec.sizes:
                counts[i, col[l]] += rec.weight
    cc = clustered_chi_square(counts, probs)
    z = np.abs(cc.proportions - probs) / cc.std_errors
    tests = [_test_entry("palm_sizes", cc.statistic, cc.dof, cc.p_value, None, n, len(support),
                         cc.p_value >= ALPHA and bool(np.all(z <= 3.0)),
                         proportions=cc.proportions, expected=probs, z=z,
                         design_effect=cc.design_effect)]
    if isinstance(cfg.lifetime_law, Exponential):
        lam = cfg.lifetime_law.rate * m
        mean_j, se = ratio_estimate(J, W)
        zj = abs(mean_j - lam * T) / se
        tests.append(_test_entry("palm_event_count", mean_j, None, None, None, n, None,
                                 zj <= 3.0, expected=lam * T, stderr=se, z=zj))
        u, cl = palm_gap_uniforms(res.records, T, lam)
        ks = clustered_ks_test(u, cl, RngStream(cfg.base_seed ^ 0x6A09E667, 0), n_boot=n_boot)
        tests.append(_test_entry("palm_gaps_ks", ks.statistic, None, ks.p_value, None, n, None,
                                 ks.p_value >= ALPHA, gaps=ks.n, naive_p_value=ks.naive_p_value))
    return tests, None


def compare_leftmost_continuous(cfg, res, table):
    """(T_1, ..., T_j, K_1, ..., K_j) slice at fixed sizes vs the leftmost law."""
    d, T, rl = cfg.offspring_law, table.horizon, theory.RenewalLaw(cfg.lifetime_law)
    n = res.replicates - res.overflow
    sizes = tuple(cfg.slice_sizes)
    j = cfg.slice_j
    t_axes = [Axis.uniform(f"T{i + 1}", 0.0, T, cfg.t_bins) for i in range(j)]
    k_axes = [Axis.integers(f"K{i + 1}", 0, l - 1) for i, l in enumerate(sizes)]
    axes = t_axes + k_axes
    obs = bin_records(res.records, axes, RecordFilter(j, sizes), n_trials=n)

    def dens(*args):
        ts, ks = args[:j], args[j:]
        out = theory._renewal_vec(rl.law, ts, T)
        for t, l, k in zip(ts, sizes, ks):
            out = out * d.p(l) * table.F(np.clip(T - t, 0.0, T), 0.0) ** np.rint(k)
        return out

    exp = expected_histogram(dens, axes, order=9, graded=_graded(rl.law, axes))
    chi = chi_square_test(obs, exp)
    tests = [_test_entry("thm3_slice", chi.statistic, chi.dof, chi.p_value, tv_distance(obs, exp),
                         n, int(exp.counts.size), chi.p_value >= ALPHA,
                         out_of_range=obs.out_of_range)]
    return tests, (obs, exp, np.sqrt(exp.counts * (1 - exp.counts) / n))


def run_compare(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                result: SimulationResult = None) -> dict:
    """Simulate (unless ``result`` is given), build the theory and test."""
    res = result or simulate(cfg, threads)
    table = build_table(cfg)
    scheme = cfg.scheme_enum
    if cfg.discrete_horizon is not None:
        tests, bins = compare_lattice(cfg, res, table)
    elif cfg.lattice:
        raise ConfigError("deterministic lifetimes are only compared with value 1 and integer T")
    elif scheme is Scheme.UNIFORM:
        tests, bins = compare_uniform_continuous(cfg, res, table)
    elif scheme is Scheme.PALM:
        tests, bins = compare_palm_continuous(cfg, res, table)
    else:
        tests, bins = compare_leftmost_continuous(cfg, res, table)
    report = {
        "scheme": scheme.value,
        "config": cfg.to_dict(),
        "simulation": res.summary(),
        "tests": tests,
        "verdict": "PASS" if all(t["verdict"] == "PASS" for t in tests) else "FAIL",
    }
    out = Path(out_dir or cfg.out_dir)
    io.write_json(out / "report.json", report)
    if bins is not None:
        obs, exp, err = bins
        header = [a.name + "_lo" for a in obs.axes] + ["observed", "expected", "error"]
        io.write_csv(out / "bins.csv", header, _per_bin_rows(obs, exp, err))
    return report
