"""Generating functions ``F_t(s) = E[s^{N_t}]`` of a Bellman-Harris population.

Three builders share one table type:

* ``build_markov``   exponential lifetimes, RK4 on the backward equation
                     ``dF/dt = r (f(F) - F)``;
* ``build_discrete`` unit lifetimes, exact polynomial iteration ``F_j = f(F_{j-1})``;
* ``build_volterra``  continuous lifetime laws, the renewal-type integral equation
                     ``F_t(s) = s mu((t, inf)) + int_0^t f(F_{t-u}(s)) mu(du)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .distributions import Deterministic, Exponential, LifetimeLaw, OffspringDistribution
from .errors import ConfigError, DomainError, NumericsError

logger = logging.getLogger(__name__)

CLAMP_TOL = 1e-9
DEFAULT_STEPS = 1000
DEFAULT_S_POINTS = 201
DEFAULT_COEFF_BUDGET = 10**6
_RANGE_EPS = 1e-12


@dataclass(frozen=True)
class GenFunTable:
    """Tabulated ``F_t(s)`` and ``dF_t/ds`` on a (t, s) grid.

    ``lattice`` tables (unit lifetimes) are step functions of t and are
    evaluated at ``floor(t)``; all others are interpolated bilinearly.
    """

    t_grid: np.ndarray
    s_grid: np.ndarray
    values: np.ndarray
    deriv_values: np.ndarray
    method: str
    lattice: bool = False
    coeffs: Optional[tuple] = None

    def __post_init__(self):
        for arr in (self.t_grid, self.s_grid, self.values, self.deriv_values):
            arr.setflags(write=False)

    @property
    def horizon(self) -> float:
        return float(self.t_grid[-1])

    def _t_index(self, t):
        t = np.asarray(t, dtype=float)
        if self.lattice:
            i = np.floor(t + _RANGE_EPS).astype(int)
            i = np.clip(i, 0, len(self.t_grid) - 1)
            return i, i, np.zeros_like(t)
        i = np.searchsorted(self.t_grid, t, side="right") - 1
        i = np.clip(i, 0, len(self.t_grid) - 2)
        t0 = self.t_grid[i]
        w = (t - t0) / (self.t_grid[i + 1] - t0)
        return i, i + 1, np.clip(w, 0.0, 1.0)

    def _s_index(self, s):
        s = np.asarray(s, dtype=float)
        j = np.searchsorted(self.s_grid, s, side="right") - 1
        j = np.clip(j, 0, len(self.s_grid) - 2)
        s0 = self.s_grid[j]
        w = (s - s0) / (self.s_grid[j + 1] - s0)
        return j, np.clip(w, 0.0, 1.0)

    def _interp(self, grid, t, s):
        i0, i1, wt = self._t_index(t)
        j, ws = self._s_index(s)
        lo = grid[i0, j] * (1.0 - ws) + grid[i0, j + 1] * ws
        hi = grid[i1, j] * (1.0 - ws) + grid[i1, j + 1] * ws
        out = lo * (1.0 - wt) + hi * wt
        return out if np.ndim(out) else float(out)

    def F(self, t, s):
        """Vectorised interpolation of ``F_t(s)`` (no domain checks)."""
        return self._interp(self.values, t, s)

    def dF(self, t, s):
        """Vectorised interpolation of ``dF_t/ds`` (no domain checks)."""
        return self._interp(self.deriv_values, t, s)

    def check_domain(self, t, s=None):
        T = self.horizon
        if np.any(np.asarray(t) < -_RANGE_EPS) or np.any(np.asarray(t) > T + _RANGE_EPS):
            raise DomainError(f"t outside [0, {T}]")
        if s is not None and (np.any(np.asarray(s) < -_RANGE_EPS) or np.any(np.asarray(s) > 1 + _RANGE_EPS)):
            raise DomainError("s outside [0, 1]")


def s_grid(s_points: int) -> np.ndarray:
    """Uniform grid on [0, 1] with the last decile refined four times."""
    n = s_points - 1
    n_tail = max(1, round(n / 10))
    split = 1.0 - n_tail / n
    head = np.linspace(0.0, split, n - n_tail + 1)
    tail = np.linspace(split, 1.0, 4 * n_tail + 1)[1:]
    return np.concatenate([head, tail])


def _clamp(values: np.ndarray, strict: bool, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        # overflow is never roundoff, so it aborts regardless of ``strict``
        raise NumericsError(f"{what}: non-finite values (solver diverged)")
    lo, hi = float(values.min()), float(values.max())
    if lo < -CLAMP_TOL or hi > 1.0 + CLAMP_TOL:
        msg = f"{what}: values left [0, 1] (min={lo!r}, max={hi!r})"
        if strict:
            raise NumericsError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return np.clip(values, 0.0, 1.0)


def build_markov(d: OffspringDistribution, rate: float, T: float,
                 steps: int = DEFAULT_STEPS, s_points: int = DEFAULT_S_POINTS,
                 strict: bool = True) -> GenFunTable:
    """Classical RK4 on the backward equation, all s-columns at once.

    The s-derivative ``G = dF/ds`` is integrated alongside from
    ``dG/dt = r (f'(F) G - G)``, ``G_0 = 1``.
    """
    if steps < 100 or s_points < 51:
        raise ConfigError("build_markov needs steps >= 100 and s_points >= 51")
    if not (rate > 0 and T > 0):
        raise ConfigError("rate and T must be positive")
    s = s_grid(s_points)
    t = np.linspace(0.0, T, steps + 1)
    h = T / steps

    def rhs(F, G):
        return rate * (d.pgf(F) - F), rate * (d.pgf_prime(F) * G - G)

    F = s.copy()
    G = np.ones_like(s)
    values = np.empty((steps + 1, s.size))
    derivs = np.empty_like(values)
    values[0], derivs[0] = F, G
    for i in range(1, steps + 1):
        k1F, k1G = rhs(F, G)
        k2F, k2G = rhs(F + 0.5 * h * k1F, G + 0.5 * h * k1G)
        k3F, k3G = rhs(F + 0.5 * h * k2F, G + 0.5 * h * k2G)
        k4F, k4G = rhs(F + h * k3F, G + h * k3G)
        F = F + h / 6.0 * (k1F + 2 * k2F + 2 * k3F + k4F)
        G = G + h / 6.0 * (k1G + 2 * k2G + 2 * k3G + k4G)
        values[i], derivs[i] = F, G
    values = _clamp(values, strict, "build_markov")
    return GenFunTable(t, s, values, np.maximum(derivs, 0.0), method="markov")


def build_discrete(d: OffspringDistribution, n: int, s_points: int = DEFAULT_S_POINTS,
                   coeff_budget: int = DEFAULT_COEFF_BUDGET) -> GenFunTable:
    """Exact iteration ``F_j = f o F_{j-1}`` on polynomial coefficients.

    Coefficients (lowest degree first) of every ``F_j`` are kept in
    ``table.coeffs`` for exact integration.
    """
    if n < 1:
        raise ConfigError("build_discrete needs n >= 1")
    degree = d.k_max ** n if d.k_max >= 1 else 0
    if degree + 1 > coeff_budget:
        raise ConfigError(f"k_max^n = {degree} exceeds coefficient budget {coeff_budget}")
    p = d.coefficients()
    coeffs = [np.array([0.0, 1.0])]
    for _ in range(n):
        prev = coeffs[-1]
        acc = np.array([p[-1]])
        for c in p[-2::-1]:
            acc = np.convolve(acc, prev)
            acc[0] += c
        coeffs.append(np.trim_zeros(acc, "b") if acc.size > 1 else acc)
    s = s_grid(s_points)
    P = np.polynomial.polynomial
    values = np.array([P.polyval(s, c) for c in coeffs])
    derivs = np.array([P.polyval(s, P.polyder(c)) if c.size > 1 else np.zeros_like(s)
                       for c in coeffs])
    values = _clamp(values, True, "build_discrete")
    return GenFunTable(np.arange(n + 1, dtype=float), s, values, derivs,
                       method="discrete", lattice=True, coeffs=tuple(coeffs))


def _product_trapezoid_weights(law: LifetimeLaw, t: np.ndarray):
    """Weights of ``int_0^{t_i} phi(u) mu(du)`` for piecewise-linear phi.

    Cell ``[u_k, u_{k+1}]`` contributes ``phi_k A_k + phi_{k+1} B_k``; the
    lifetime law enters only through its CDF and partial first moment, so
    densities that blow up at 0 (gamma shape < 1) are handled exactly.
    """
    h = t[1] - t[0]
    G = law.cdf(t)
    M = law.partial_mean(t)
    dG = np.diff(G)
    dM = np.diff(M)
    A = (t[1:] * dG - dM) / h
    B = (dM - t[:-1] * dG) / h
    return np.maximum(A, 0.0), np.maximum(B, 0.0)


def build_volterra(d: OffspringDistribution, law: LifetimeLaw, T: float,
                   steps: int = DEFAULT_STEPS, s_points: int = DEFAULT_S_POINTS,
                   strict: bool = True, picard_tol: float = 1e-12,
                   max_picard: int = 50) -> GenFunTable:
    """March the integral equation forward in t.

    Row ``i`` depends on rows ``< i`` through the convolution sum and on
    itself only through the ``u = 0`` weight, which is resolved by Picard
    iteration.  ``dF/ds`` is taken by second-order finite differences in s.
    """
    if isinstance(law, Deterministic) or law.lattice:
        raise ConfigError("build_volterra needs a continuous lifetime law; use build_discrete")
    if steps < 200:
        raise ConfigError("build_volterra needs steps >= 200")
    if s_points < 51:
        raise ConfigError("build_volterra needs s_points >= 51")
    if not T > 0:
        raise ConfigError("T must be positive")
    s = s_grid(s_points)
    t = np.linspace(0.0, T, steps + 1)
    A, B = _product_trapezoid_weights(law, t)
    tail = law.tail(t)
    values = np.empty((steps + 1, s.size))
    phi = np.empty_like(values)
    values[0] = s
    phi[0] = d.pgf(s)
    for i in range(1, steps + 1):
        # k = 1..i-1 get A_k + B_{k-1}; k = i gets B_{i-1}
        w = np.empty(i)
        w[:-1] = A[1:i] + B[: i - 1]
        w[-1] = B[i - 1]
        explicit = s * tail[i] + w @ phi[i - 1::-1]
        F = values[i - 1].copy()
        for it in range(max_picard):
            F_new = explicit + A[0] * d.pgf(F)
            err = float(np.max(np.abs(F_new - F)))
            F = F_new
            if err <= picard_tol:
                break
        else:
            raise NumericsError(f"Picard iteration did not contract at t={t[i]!r} (err={err:.3g})")
        values[i] = F
        phi[i] = d.pgf(np.clip(F, 0.0, 1.0))
    values = _clamp(values, strict, "build_volterra")
    derivs = np.gradient(values, s, axis=1, edge_order=2)
    return GenFunTable(t, s, values, np.maximum(derivs, 0.0), method="volterra")


def build_table(d: OffspringDistribution, law: LifetimeLaw, T: float,
                steps: int = DEFAULT_STEPS, s_points: int = DEFAULT_S_POINTS,
                strict: bool = True) -> GenFunTable:
    """Pick the builder appropriate for ``law``."""
    if isinstance(law, Exponential):
        return build_markov(d, law.rate, T, steps, s_points, strict)
    if isinstance(law, Deterministic):
        if law.value != 1.0 or abs(T - round(T)) > 1e-12 or round(T) < 1:
            raise ConfigError("deterministic lifetimes need value 1 and a positive integer horizon")
        return build_discrete(d, int(round(T)), s_points)
    return build_volterra(d, law, T, max(steps, 200), s_points, strict)


def eval(table: GenFunTable, t: float, s: float) -> float:  # noqa: A001
    table.check_domain(t, s)
    return table.F(t, s)


def eval_deriv(table: GenFunTable, t: float, s: float) -> float:
    table.check_domain(t, s)
    return table.dF(t, s)


def extinction_prob(table: GenFunTable, t: float) -> float:
    table.check_domain(t)
    return table.F(t, 0.0)


def mean_population(table: GenFunTable, t: float) -> float:
    """``E[N_t] = dF_t/ds`` at ``s = 1``."""
    return eval_deriv(table, t, 1.0)
