"""Closed-form lineage laws evaluated on top of a ``GenFunTable``.

All densities are pointwise joint densities in the event times (and the
mark ``s`` for the uniform-marker rule); probabilities for the unit-lifetime
lattice are computed exactly from the retained polynomial coefficients.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from .distributions import Exponential, LifetimeLaw, OffspringDistribution, RngStream
from .errors import ConfigError, DegenerateConditioning, DomainError
from .genfun import GenFunTable

SURVIVAL_FLOOR = 1e-12
DEFAULT_QUAD_POINTS = 201

P = np.polynomial.polynomial


@dataclass(frozen=True)
class RenewalLaw:
    """Renewal process with i.i.d. inter-arrival law ``law``."""

    law: LifetimeLaw


@dataclass(frozen=True)
class Thm1Query:
    times: Tuple[float, ...]
    sizes: Tuple[int, ...]
    s: float
    T: float

    def __post_init__(self):
        _check_path(self.times, self.sizes, self.T, strict_last=False)
        if not 0.0 <= self.s <= 1.0:
            raise DomainError("s outside [0, 1]")

    @property
    def j(self) -> int:
        return len(self.times)


def _check_path(times, sizes, T, strict_last):
    if len(times) != len(sizes):
        raise DomainError("times and sizes differ in length")
    prev = 0.0
    for t in times:
        if not t > prev:
            raise DomainError("event times must be strictly increasing and positive")
        prev = t
    if len(times) and (times[-1] > T or (strict_last and times[-1] >= T)):
        raise DomainError("event time beyond the horizon")
    if any(int(l) < 1 for l in sizes):
        raise DomainError("lineage sizes must be >= 1")


def _continuous(rl: RenewalLaw):
    if rl.law.lattice:
        raise DomainError("lattice lifetime law: use the *_discrete_exact evaluators")


# -- renewal machinery -------------------------------------------------------

def renewal_sample(rl: RenewalLaw, T: float, rng: RngStream):
    """Arrival times in (0, T] and the first arrival beyond T."""
    if not T > 0:
        raise DomainError("T must be positive")
    arrivals = []
    t = rl.law.sample(rng)
    while t <= T:
        arrivals.append(t)
        t += rl.law.sample(rng)
    return np.asarray(arrivals), t


def renewal_counts(rl: RenewalLaw, T: float, n: int, rng: RngStream) -> np.ndarray:
    """Number of arrivals in (0, T] for ``n`` independent renewal paths."""
    counts = np.zeros(n, dtype=np.int64)
    clock = np.zeros(n)
    active = np.arange(n)
    while active.size:
        clock[active] += rl.law.sample_many(rng, active.size)
        hit = clock[active] <= T
        counts[active[hit]] += 1
        active = active[hit]
    return counts


def event_count_quantile(rl: RenewalLaw, T: float, level: float = 1 - 1e-6,
                         n: int = 2_000_000, rng: RngStream = None) -> int:
    """Upper ``level`` quantile of the arrival count, estimated by simulation."""
    rng = rng or RngStream(0x5EED)
    counts = renewal_counts(rl, T, n, rng)
    return int(np.quantile(counts, level, method="higher"))


def renewal_interval_density(rl: RenewalLaw, times: Sequence[float], T: float) -> float:
    """Density of ``tau_1 in dt_1, ..., tau_j in dt_j, tau_{j+1} > T``."""
    _continuous(rl)
    _check_path(times, [1] * len(times), T, strict_last=False)
    law = rl.law
    if isinstance(law, Exponential):
        return law.rate ** len(times) * math.exp(-law.rate * T)
    gaps = np.diff(np.concatenate([[0.0], np.asarray(times, dtype=float)]))
    last = times[-1] if len(times) else 0.0
    return float(np.prod(law.density(gaps))) * float(law.tail(T - last))


def _renewal_vec(law: LifetimeLaw, ts, T):
    """Vectorised renewal factor over broadcast time arrays; 0 off the simplex.

    The simplex is taken closed so that quadrature nodes on its faces (such as
    ``t_1 = 0``) see the limiting density. An infinite density at a zero gap
    (gamma shape < 1) is an integrable singularity; graded quadrature puts
    zero weight on it, so it is returned as 0 rather than ``inf``.
    """
    ok = True
    prev = 0.0
    dens = 1.0
    for t in ts:
        gap = t - prev
        ok = ok & (gap >= 0)
        fd = law.density(np.maximum(gap, 0.0))
        dens = dens * np.where(np.isinf(fd), 0.0, fd)
        prev = t
    ok = ok & (prev <= T)
    dens = dens * law.tail(np.clip(T - prev, 0.0, None))
    return np.where(ok, dens, 0.0)


# -- continuous-time lineage laws -----------------------------------------

def thm1_density(q: Thm1Query, table: GenFunTable, d: OffspringDistribution,
                 rl: RenewalLaw) -> float:
    """Joint density of survival, the lineage events and the largest mark."""
    _continuous(rl)
    weight = 1.0
    for t, l in zip(q.times, q.sizes):
        p = d.p(l)
        if p == 0.0:
            return 0.0
        weight *= l * p * table.F(q.T - t, q.s) ** (l - 1)
    return renewal_interval_density(rl, q.times, q.T) * weight


def thm1_slice(table: GenFunTable, d: OffspringDistribution, rl: RenewalLaw,
               sizes: Sequence[int], T: float) -> Callable:
    """Vectorised ``(t_1, ..., t_j, s) -> thm1 density`` for fixed sizes."""
    _continuous(rl)
    sizes = tuple(int(l) for l in sizes)

    def density(*args):
        *ts, s = args
        out = _renewal_vec(rl.law, ts, T)
        for t, l in zip(ts, sizes):
            out = out * (l * d.p(l)) * table.F(np.clip(T - t, 0.0, T), s) ** (l - 1)
        return out

    return density


def thm1_total_mass(table: GenFunTable, d: OffspringDistribution, rl: RenewalLaw,
                    T: float, j_max: int, n_mc: int, rng: RngStream):
    """Sum of thm1 over j <= j_max and all sizes, integrated over s and times.

    Sizes are summed through ``sum_l l p_l F^(l-1) = f'(F)``; times are
    integrated by Monte Carlo over the ordered simplex. Returns
    ``(estimate, standard_error)``.
    """
    _continuous(rl)
    s = table.s_grid
    total = integrate.simpson(np.ones_like(s), x=s) * float(rl.law.tail(T))
    var = 0.0
    for j in range(1, j_max + 1):
        ts = np.sort(rng.random((n_mc, j)) * T, axis=1)
        ren = _renewal_vec(rl.law, [ts[:, i] for i in range(j)], T)
        prod = np.ones((n_mc, s.size))
        for i in range(j):
            prod *= d.pgf_prime(table.F((T - ts[:, i])[:, None], s[None, :]))
        vals = ren * integrate.simpson(prod, x=s, axis=1)
        vol = T ** j / math.factorial(j)
        total += vol * vals.mean()
        var += (vol * vals.std(ddof=1)) ** 2 / n_mc
    return total, math.sqrt(var)


def _survival(table: GenFunTable, T: float) -> float:
    surv = 1.0 - table.F(T, 0.0)
    if surv <= SURVIVAL_FLOOR:
        raise DegenerateConditioning(f"P(N_T > 0) = {surv!r} below {SURVIVAL_FLOOR}")
    return surv


def rate_bias(table: GenFunTable, t: float, T: float, ell: int,
              quad_points: int = DEFAULT_QUAD_POINTS) -> float:
    """``B(t, T, l) = (1 - F_T(0))^-1 int_0^1 F_{T-t}(s)^(l-1) F'_T(s) ds``.

    Integrated in ``x = F_T(s)`` (so ``dx = F'_T(s) ds``) with composite
    Simpson on ``quad_points`` uniform nodes of ``[F_T(0), 1]``; ``s(x)`` is
    the piecewise-linear inverse of the tabulated ``F_T``. This keeps the
    integrand smooth when the law of the mark piles up near ``s = 1``.
    """
    if quad_points < 201:
        raise ConfigError("rate_bias needs quad_points >= 201")
    if quad_points % 2 == 0:
        quad_points += 1
    table.check_domain(T)
    if not 0.0 <= t <= T:
        raise DomainError("rate_bias needs 0 <= t <= T")
    if ell < 1:
        raise DomainError("rate_bias needs l >= 1")
    surv = _survival(table, T)
    q = 1.0 - surv
    row = np.maximum.accumulate(table.F(T, table.s_grid))
    x = np.linspace(q, 1.0, quad_points)
    s = np.interp(x, row, table.s_grid)
    g = table.F(T - t, s) ** (ell - 1)
    return float(integrate.simpson(g, x=x)) / surv


def s_density(table: GenFunTable, s, T: float = None):
    """Density of the largest mark given survival: ``F'_T(s) / (1 - F_T(0))``."""
    T = table.horizon if T is None else T
    table.check_domain(T, s)
    return table.dF(T, s) / _survival(table, T)


def ancestral_rate(table: GenFunTable, d: OffspringDistribution, rate: float,
                   t: float, T: float, ell: int, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
    """Rate ``r l p_l B(t, T, l)`` of size-``l`` events on the uniform lineage."""
    p = d.p(ell)
    if p == 0.0:
        return 0.0
    return rate * ell * p * rate_bias(table, t, T, ell, quad_points)


def thm2_density(times, sizes, T: float, d: OffspringDistribution, rl: RenewalLaw,
                 table: GenFunTable) -> float:
    """Conditional density of the lineage given a prescribed (atomless) mark."""
    _continuous(rl)
    _check_path(times, sizes, T, strict_last=True)
    mean_n = table.dF(T, 1.0)
    if mean_n <= 0:
        raise DegenerateConditioning("E[N_T] = 0")
    w = math.prod(l * d.p(l) for l in sizes)
    return renewal_interval_density(rl, times, T) * w / mean_n


def thm3_density(times, sizes, ks, T: float, d: OffspringDistribution, rl: RenewalLaw,
                 table: GenFunTable) -> float:
    """Joint density of survival and the leftmost lineage (times, sizes, skips)."""
    _continuous(rl)
    _check_path(times, sizes, T, strict_last=True)
    _check_ks(sizes, ks)
    w = 1.0
    for t, l, k in zip(times, sizes, ks):
        w *= d.p(l) * table.F(T - t, 0.0) ** k
    return renewal_interval_density(rl, times, T) * w


def thm3_slice(table: GenFunTable, d: OffspringDistribution, rl: RenewalLaw,
               sizes: Sequence[int], ks: Sequence[int], T: float) -> Callable:
    """Vectorised ``(t_1, ..., t_j) -> thm3 density`` for fixed sizes and skips."""
    _continuous(rl)
    _check_ks(sizes, ks)

    def density(*ts):
        out = _renewal_vec(rl.law, ts, T)
        for t, l, k in zip(ts, sizes, ks):
            out = out * d.p(l) * table.F(np.clip(T - t, 0.0, T), 0.0) ** k
        return out

    return density


def thm3_total_mass(table: GenFunTable, d: OffspringDistribution, rl: RenewalLaw,
                    T: float, j_max: int, n_mc: int, rng: RngStream):
    """Sum of thm3 over j <= j_max, sizes and skips, times integrated by MC."""
    _continuous(rl)
    total = float(rl.law.tail(T))
    var = 0.0
    support = [l for l in range(1, d.k_max + 1) if d.p(l) > 0]
    for j in range(1, j_max + 1):
        ts = np.sort(rng.random((n_mc, j)) * T, axis=1)
        vals = _renewal_vec(rl.law, [ts[:, i] for i in range(j)], T)
        for i in range(j):
            q = table.F(T - ts[:, i], 0.0)
            vals = vals * sum(d.p(l) * sum(q ** k for k in range(l)) for l in support)
        vol = T ** j / math.factorial(j)
        total += vol * vals.mean()
        var += (vol * vals.std(ddof=1)) ** 2 / n_mc
    return total, math.sqrt(var)


def _check_ks(sizes, ks):
    if len(ks) != len(sizes):
        raise DomainError("ks and sizes differ in length")
    for l, k in zip(sizes, ks):
        if not 0 <= k <= l - 1:
            raise DomainError(f"skip count {k} outside 0..{l - 1}")


# -- unit lifetimes: exact lattice laws ------------------------------------------

def _coeffs(table: GenFunTable):
    if table.coeffs is None:
        raise DomainError("table carries no polynomial coefficients (use build_discrete)")
    return table.coeffs


def thm1_discrete_exact(sizes: Sequence[int], table: GenFunTable, d: OffspringDistribution,
                        coeff_budget: int = 10**6) -> float:
    """``P(N_n > 0, L = sizes)`` under the uniform rule, ``n = len(sizes)``.

    Expands ``prod_i l_i p_{l_i} F_{n-i}(s)^(l_i - 1)`` as a polynomial in s
    and integrates it exactly over [0, 1].
    """
    coeffs = _coeffs(table)
    n = len(sizes)
    if n + 1 > len(coeffs):
        raise DomainError(f"table horizon {len(coeffs) - 1} shorter than {n} generations")
    poly = np.array([1.0])
    for i, l in enumerate(sizes, start=1):
        p = d.p(l)
        if l < 1 or p == 0.0:
            return 0.0
        factor = P.polypow(coeffs[n - i], l - 1) if l > 1 else np.array([1.0])
        poly = P.polymul(poly, l * p * factor)
        if poly.size > coeff_budget:
            raise ConfigError("coefficient budget exceeded")
    return float(np.sum(poly / np.arange(1, poly.size + 1)))


def thm2_discrete_exact(sizes: Sequence[int], d: OffspringDistribution) -> float:
    """Palm law of the lineage sizes: ``prod_i l_i p_{l_i} / m^n``."""
    m = d.mean
    if m <= 0:
        raise DegenerateConditioning("mean offspring is 0")
    return math.prod(l * d.p(l) / m for l in sizes)


def thm3_discrete_exact(sizes: Sequence[int], ks: Sequence[int], table: GenFunTable,
                        d: OffspringDistribution) -> float:
    """``P(N_n > 0, L = sizes, K = ks)`` under the leftmost rule."""
    coeffs = _coeffs(table)
    n = len(sizes)
    _check_ks(sizes, ks)
    out = 1.0
    for i, (l, k) in enumerate(zip(sizes, ks), start=1):
        q = float(coeffs[n - i][0])
        out *= d.p(l) * q ** k
    return out


def lineage_outcomes(d: OffspringDistribution, n: int, with_ks: bool = False):
    """All admissible size (and skip) vectors over ``n`` generations."""
    support = [l for l in range(1, d.k_max + 1) if d.p(l) > 0]
    for sizes in itertools.product(support, repeat=n):
        if not with_ks:
            yield sizes
            continue
        for ks in itertools.product(*[range(l) for l in sizes]):
            yield sizes, ks


def poisson_count_quantile(rate: float, T: float, level: float = 1 - 1e-6) -> int:
    return int(stats.poisson.ppf(level, rate * T))
