"""Histograms and goodness-of-fit tests for Monte Carlo vs theory."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse, stats as sps

from .errors import DomainError, InsufficientData, NumericsError, OutOfRangeRecord
from .distributions import RngStream


@dataclass(frozen=True)
class Axis:
    """A histogram axis.  ``name`` selects the record coordinate:
    ``T<i>`` event time, ``L<i>`` size, ``K<i>`` skip count (1-based),
    ``S`` largest mark, ``J`` event count."""

    name: str
    edges: Tuple[float, ...]
    discrete: bool = False

    @classmethod
    def uniform(cls, name, lo, hi, bins):
        return cls(name, tuple(np.linspace(lo, hi, bins + 1).tolist()))

    @classmethod
    def integers(cls, name, lo, hi):
        """One bin per integer in ``lo..hi``."""
        return cls(name, tuple(np.arange(lo, hi + 2) - 0.5), discrete=True)

    @property
    def bins(self) -> int:
        return len(self.edges) - 1

    def to_json(self):
        return {"name": self.name, "edges": list(self.edges), "discrete": self.discrete}


@dataclass(frozen=True)
class RecordFilter:
    """Keep surviving records with ``J == j`` and, optionally, fixed sizes."""

    j: Optional[int] = None
    sizes: Optional[Tuple[int, ...]] = None

    def __call__(self, rec) -> bool:
        if not rec.survived:
            return False
        if self.j is not None and rec.J != self.j:
            return False
        if self.sizes is not None and tuple(rec.sizes) != tuple(self.sizes):
            return False
        return True


def record_coordinate(rec, name: str) -> float:
    if name == "S":
        return rec.marker_S
    if name == "J":
        return rec.J
    field_name = {"T": "times", "L": "sizes", "K": "left_extinct"}[name[0]]
    return getattr(rec, field_name)[int(name[1:]) - 1]


@dataclass
class JointHistogram:
    axes: Tuple[Axis, ...]
    counts: np.ndarray
    n_trials: float = 0
    out_of_range: float = 0.0

    @classmethod
    def empty(cls, axes: Sequence[Axis]) -> "JointHistogram":
        axes = tuple(axes)
        return cls(axes, np.zeros(tuple(a.bins for a in axes)))

    @property
    def total_weight(self) -> float:
        return float(self.counts.sum())

    def _check_axes(self, other):
        if self.axes != other.axes:
            raise DomainError("histogram axes differ")

    def merge(self, other: "JointHistogram") -> "JointHistogram":
        """In-place exact addition of another shard with identical axes."""
        self._check_axes(other)
        self.counts = self.counts + other.counts
        self.n_trials += other.n_trials
        self.out_of_range += other.out_of_range
        return self

    def __add__(self, other):
        self._check_axes(other)
        return JointHistogram(self.axes, self.counts + other.counts,
                              self.n_trials + other.n_trials,
                              self.out_of_range + other.out_of_range)

    def probabilities(self) -> np.ndarray:
        """Counts per trial: a sub-probability when records were filtered."""
        return self.counts / self.n_trials if self.n_trials else np.zeros_like(self.counts)

    def normalized(self) -> np.ndarray:
        tot = self.total_weight
        return self.counts / tot if tot > 0 else np.zeros_like(self.counts)

    def mc_errors(self) -> np.ndarray:
        """Per-bin standard error ``sqrt(p (1 - p) / n)`` of the per-trial mass."""
        p = self.probabilities()
        return np.sqrt(p * (1.0 - p) / max(self.n_trials, 1))

    def add(self, point: Sequence[float], weight: float = 1.0) -> bool:
        idx = []
        for a, x in zip(self.axes, point):
            e = a.edges
            if x is None or not (e[0] <= x <= e[-1]):
                self.out_of_range += weight
                return False
            i = int(np.searchsorted(e, x, side="right")) - 1
            idx.append(min(i, a.bins - 1))
        self.counts[tuple(idx)] += weight
        return True


def bin_records(records: Iterable, axes: Sequence[Axis], filter: Callable = None,
                n_trials: Optional[float] = None, strict: bool = False) -> JointHistogram:
    """Histogram the records that pass ``filter``.

    ``n_trials`` is the number of simulated trees (survivors or not); by
    default the number of records seen, which is right for the uniform and
    leftmost rules.  Records outside the axes are tallied in
    ``out_of_range`` (or raise with ``strict``).
    """
    h = JointHistogram.empty(axes)
    seen = 0
    for rec in records:
        seen += 1
        if filter is not None and not filter(rec):
            continue
        point = [record_coordinate(rec, a.name) for a in h.axes]
        if not h.add(point, rec.weight) and strict:
            raise OutOfRangeRecord(f"record {rec!r} outside histogram axes")
    h.n_trials = seen if n_trials is None else n_trials
    return h


def _simpson_nodes(lo, hi, order, power=1):
    v = np.linspace(0.0, 1.0, order)
    w = np.ones(order)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (hi - lo) / (3.0 * (order - 1))
    if power == 1:
        return lo + (hi - lo) * v, w
    # x = lo + (hi - lo) v^power turns an integrable (x - lo)^(-b) singularity
    # into a smooth enough power of v
    return lo + (hi - lo) * v ** power, w * power * v ** (power - 1)


def expected_histogram(density: Callable, axes: Sequence[Axis], order: int = 9,
                       graded: dict = None) -> JointHistogram:
    """Bin integrals of ``density`` by tensor-product composite Simpson.

    ``density`` takes one broadcastable array per axis.  Discrete axes are
    evaluated at their integer bin centres.  ``graded`` maps axis names to a
    power used to cluster nodes at the lower edge of that axis's first bin.
    The result has ``n_trials = 1``, so its counts are probabilities.
    """
    if order < 3 or order % 2 == 0:
        raise DomainError("Simpson order must be odd and >= 3")
    axes = tuple(axes)
    grids, weights = [], []
    for a in axes:
        e = np.asarray(a.edges)
        if a.discrete:
            x = ((e[:-1] + e[1:]) / 2)[:, None]
            w = np.ones_like(x)
        else:
            power = (graded or {}).get(a.name, 1)
            nodes = [_simpson_nodes(lo, hi, order, power if b == 0 else 1)
                     for b, (lo, hi) in enumerate(zip(e[:-1], e[1:]))]
            x = np.array([n[0] for n in nodes])
            w = np.array([n[1] for n in nodes])
        grids.append(x)
        weights.append(w)
    nd = len(axes)
    coords = []
    for k, x in enumerate(grids):
        shape = [1] * (2 * nd)
        shape[2 * k], shape[2 * k + 1] = x.shape
        coords.append(x.reshape(shape))
    vals = np.asarray(density(*coords), dtype=float)
    vals = np.broadcast_to(vals, tuple(s for x in grids for s in x.shape))
    if not np.all(np.isfinite(vals)):
        raise NumericsError("density returned non-finite values")
    for k in reversed(range(nd)):
        shape = [1] * vals.ndim
        shape[2 * k], shape[2 * k + 1] = weights[k].shape
        vals = (vals * weights[k].reshape(shape)).sum(axis=2 * k + 1)
    return JointHistogram(axes, np.ascontiguousarray(vals), n_trials=1)


def tv_distance(a: JointHistogram, b: JointHistogram) -> float:
    """Half the L1 distance between the normalised histograms."""
    a._check_axes(b)
    return 0.5 * float(np.abs(a.normalized() - b.normalized()).sum())


def tv_mc_error(p: np.ndarray, n: float) -> float:
    """Scale of the TV distance between an n-sample histogram and its truth."""
    p = np.asarray(p, dtype=float)
    return 0.5 * float(np.sqrt(p * (1.0 - p) / n).sum())


class ChiSquareResult(NamedTuple):
    statistic: float
    dof: int
    p_value: float


def _pool(obs, exp, min_expected):
    po, pe = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            po.append(acc_o)
            pe.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if po:
            po[-1] += acc_o
            pe[-1] += acc_e
        else:
            po.append(acc_o)
            pe.append(acc_e)
    return np.array(po), np.array(pe)


def chi_square_test(observed: JointHistogram, expected: JointHistogram,
                    min_expected: float = 5.0, design_effect: float = 1.0) -> ChiSquareResult:
    """Pearson test of observed counts against expected bin probabilities.

    Expected counts are ``n_trials`` times the expected per-trial mass; if
    the bins carry less than the full mass, the complement becomes one
    more cell.  Adjacent (flattened) sparse cells are merged greedily until
    each expects at least ``min_expected``.  ``design_effect`` divides the
    statistic (first-order Rao-Scott) for clustered observations.
    """
    observed._check_axes(expected)
    n = observed.n_trials
    obs = observed.counts.ravel().astype(float)
    exp = (expected.counts / expected.n_trials).ravel() * n
    missing = n - exp.sum()
    if missing > 1e-9 * n:
        obs = np.append(obs, n - obs.sum())
        exp = np.append(exp, missing)
    po, pe = _pool(obs, exp, min_expected)
    if po.size < 2 or np.any(pe < min_expected):
        raise InsufficientData("fewer than two cells with enough expected counts")
    stat = float(np.sum((po - pe) ** 2 / pe)) / design_effect
    dof = po.size - 1
    return ChiSquareResult(stat, dof, float(sps.chi2.sf(stat, dof)))


class KSResult(NamedTuple):
    statistic: float
    p_value: float


def ks_test(samples, cdf: Callable) -> KSResult:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 10:
        raise InsufficientData("KS test needs at least 10 samples")
    res = sps.kstest(samples, cdf, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue))


# -- clustered samples (several correlated records per tree) -------------------

def ratio_estimate(numer, denom) -> Tuple[float, float]:
    """``sum(numer) / sum(denom)`` over clusters with its linearised SE."""
    y = np.asarray(numer, dtype=float)
    x = np.asarray(denom, dtype=float)
    n = y.size
    if n < 2 or x.sum() <= 0:
        raise InsufficientData("ratio estimate needs two clusters with positive weight")
    r = y.sum() / x.sum()
    resid = y - r * x
    se = math.sqrt(n / (n - 1) * float(np.sum(resid ** 2))) / x.sum()
    return float(r), se


class ClusteredChiSquare(NamedTuple):
    statistic: float
    dof: int
    p_value: float
    proportions: np.ndarray
    std_errors: np.ndarray
    design_effect: float


def clustered_chi_square(cluster_counts: np.ndarray, probs: Sequence[float]) -> ClusteredChiSquare:
    """Category frequencies pooled over clusters vs ``probs``.

    ``cluster_counts[c, i]`` is the number of observations of category ``i``
    in cluster ``c``.  The Pearson statistic is divided by the mean design
    effect (first-order Rao-Scott); standard errors are cluster-robust.
    """
    C = np.asarray(cluster_counts, dtype=float)
    p0 = np.asarray(probs, dtype=float)
    sizes = C.sum(axis=1)
    N = sizes.sum()
    k = p0.size
    phat = C.sum(axis=0) / N
    se = np.array([ratio_estimate(C[:, i], sizes)[1] for i in range(k)])
    naive = p0 * (1 - p0) / N
    deff = np.where(naive > 0, se ** 2 / np.where(naive > 0, naive, 1.0), 1.0)
    dbar = float(np.sum((1 - p0) * deff) / (k - 1))
    x2 = float(N * np.sum((phat - p0) ** 2 / p0))
    stat = x2 / dbar
    return ClusteredChiSquare(stat, k - 1, float(sps.chi2.sf(stat, k - 1)), phat, se, dbar)


class ClusteredKS(NamedTuple):
    statistic: float
    p_value: float
    naive_p_value: float
    n: int
    clusters: int


def clustered_ks_test(u, clusters, rng: RngStream, n_boot: int = 1999,
                      grid_points: int = 512, chunk: int = 40) -> ClusteredKS:
    """KS test that pooled values ``u`` are Unif(0, 1) when they come in
    correlated clusters.

    The statistic is ``max |F_n - id|`` over a uniform grid; its null
    distribution is approximated by a Poisson cluster bootstrap of
    ``max |F*_n - F_n|``.  Bootstrap weights are integers, so every
    floating-point sum is exact and the p-value does not depend on summation
    order.
    """
    u = np.asarray(u, dtype=float)
    cl = np.asarray(clusters)
    if u.size < 10:
        raise InsufficientData("KS test needs at least 10 samples")
    _, cid = np.unique(cl, return_inverse=True)
    n_cl = int(cid.max()) + 1
    edges = np.linspace(0.0, 1.0, grid_points + 1)
    b = np.clip(np.searchsorted(edges, u, side="left") - 1, 0, grid_points - 1)
    # value u falls in bin b; F(edge[g+1]) counts bins <= g
    H = sparse.csr_matrix((np.ones(u.size), (cid, b)), shape=(n_cl, grid_points))
    H.sum_duplicates()
    tot_bins = np.asarray(H.sum(axis=0)).ravel()
    Fn = np.cumsum(tot_bins) / u.size
    grid = edges[1:]
    stat = float(np.max(np.abs(Fn - grid)))
    HT = H.T.tocsr()
    exceed = 0
    done = 0
    gen = rng.generator
    while done < n_boot:
        m = min(chunk, n_boot - done)
        W = gen.poisson(1.0, size=(n_cl, m)).astype(float)
        bins = HT @ W  # grid_points x m
        totals = bins.sum(axis=0)
        Fb = np.cumsum(bins, axis=0) / np.where(totals > 0, totals, 1.0)
        dstar = np.max(np.abs(Fb - Fn[:, None]), axis=0)
        exceed += int(np.sum(dstar >= stat))
        done += m
    naive = float(sps.kstwobign.sf(stat * math.sqrt(u.size)))
    return ClusteredKS(stat, (exceed + 1) / (n_boot + 1), naive, int(u.size), n_cl)
