"""Offspring and lifetime laws, and reproducible random-number streams."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError

PROB_SUM_TOL = 1e-12

__all__ = [
    "OffspringDistribution",
    "LifetimeLaw",
    "Exponential",
    "Deterministic",
    "Gamma",
    "RngStream",
    "lifetime_from_dict",
    "pgf_eval",
    "pgf_derivative",
    "sample_offspring",
    "sample_lifetime",
    "lifetime_tail",
]


class RngStream:
    """A random stream fully determined by ``(base_seed, stream_index)``.

    Streams with different indices are spawned children of the same
    ``SeedSequence`` root, so they are statistically independent and the
    output for replicate ``i`` does not depend on how work is scheduled.
    """

    __slots__ = ("base_seed", "stream_index", "generator")

    def __init__(self, base_seed: int, stream_index: int = 0):
        if stream_index < 0:
            raise ConfigError("stream_index must be nonnegative")
        self.base_seed = int(base_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_index = int(stream_index)
        seq = np.random.SeedSequence(self.base_seed, spawn_key=(self.stream_index,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RngStream(base_seed={self.base_seed}, stream_index={self.stream_index})"

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


@dataclass(frozen=True)
class OffspringDistribution:
    """Finite-support offspring law ``probs[k] = P(L = k)``.

    Trailing zeros are trimmed; probabilities must already sum to one
    (no silent renormalisation).
    """

    probs: tuple
    _cum: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = [float(x) for x in self.probs]
        if not p:
            raise ConfigError("offspring law needs at least one probability")
        for x in p:
            if not (0.0 <= x <= 1.0) or math.isnan(x):
                raise ConfigError(f"offspring probability {x!r} outside [0, 1]")
        total = math.fsum(p)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ConfigError(f"offspring probabilities sum to {total!r}, not 1")
        while len(p) > 1 and p[-1] == 0.0:
            p.pop()
        object.__setattr__(self, "probs", tuple(p))
        object.__setattr__(self, "_cum", tuple(np.cumsum(p).tolist()))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "OffspringDistribution":
        """Build from ``{k: p_k}``, e.g. ``{0: 0.5, 2: 0.5}``."""
        kmax = max(int(k) for k in mapping)
        probs = [0.0] * (kmax + 1)
        for k, v in mapping.items():
            probs[int(k)] = float(v)
        return cls(tuple(probs))

    @property
    def k_max(self) -> int:
        return len(self.probs) - 1

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in enumerate(self.probs))

    def p(self, k: int) -> float:
        """``P(L = k)``, zero outside the support."""
        return self.probs[k] if 0 <= k < len(self.probs) else 0.0

    def coefficients(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def pgf(self, s):
        """Vectorised ``f(s) = sum_k p_k s^k`` by Horner's rule (no domain check)."""
        s = np.asarray(s, dtype=float)
        out = np.full_like(s, self.probs[-1])
        for c in reversed(self.probs[:-1]):
            out = out * s + c
        return out if out.ndim else float(out)

    def pgf_prime(self, s):
        """Vectorised ``f'(s)`` (no domain check)."""
        s = np.asarray(s, dtype=float)
        if self.k_max == 0:
            out = np.zeros_like(s)
            return out if out.ndim else 0.0
        out = np.full_like(s, self.k_max * self.probs[-1])
        for k in range(self.k_max - 1, 0, -1):
            out = out * s + k * self.probs[k]
        return out if out.ndim else float(out)

    def sample(self, rng: RngStream) -> int:
        k = bisect.bisect_right(self._cum, rng.generator.random())
        return min(k, self.k_max)

    def to_list(self) -> list:
        return list(self.probs)


def _check_unit(s):
    if not (0.0 <= s <= 1.0):
        raise DomainError(f"s={s!r} outside [0, 1]")


def pgf_eval(d: OffspringDistribution, s: float) -> float:
    _check_unit(s)
    return d.pgf(float(s))


def pgf_derivative(d: OffspringDistribution, s: float) -> float:
    _check_unit(s)
    return d.pgf_prime(float(s))


def sample_offspring(d: OffspringDistribution, rng: RngStream) -> int:
    return d.sample(rng)


class LifetimeLaw:
    """Lifetime distribution mu on (0, inf)."""

    kind = "abstract"
    lattice = False

    def sample(self, rng: RngStream) -> float:
        raise NotImplementedError

    def sample_many(self, rng: RngStream, size: int) -> np.ndarray:
        return np.array([self.sample(rng) for _ in range(size)])

    def tail(self, t):
        """``mu((t, inf))``."""
        raise NotImplementedError

    def cdf(self, t):
        return 1.0 - self.tail(t)

    def density(self, t):
        raise DomainError(f"{self.kind} lifetime law has no density")

    def partial_mean(self, x):
        """``int_0^x u mu(du)``."""
        raise DomainError(f"{self.kind} lifetime law has no partial mean")

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(LifetimeLaw):
    rate: float
    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("exponential rate must be > 0")

    def sample(self, rng):
        # inverse CDF on (0, 1] so log never sees zero
        return -math.log(1.0 - rng.generator.random()) / self.rate

    def sample_many(self, rng, size):
        return -np.log1p(-rng.generator.random(size)) / self.rate

    def tail(self, t):
        return np.exp(-self.rate * np.asarray(t, dtype=float)) if np.ndim(t) else math.exp(-self.rate * t)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(t >= 0, self.rate * np.exp(-self.rate * np.maximum(t, 0.0)), 0.0)
        return out if out.ndim else float(out)

    def partial_mean(self, x):
        x = np.asarray(x, dtype=float)
        r = self.rate
        out = (1.0 - np.exp(-r * x) * (1.0 + r * x)) / r
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return 1.0 / self.rate

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class Deterministic(LifetimeLaw):
    value: float
    kind = "deterministic"
    lattice = True

    def __post_init__(self):
        if not self.value > 0:
            raise ConfigError("deterministic lifetime must be > 0")

    def sample(self, rng):
        return self.value

    def sample_many(self, rng, size):
        return np.full(size, float(self.value))

    def tail(self, t):
        # right-continuous step: mu((t, inf)) = 1 iff t < d
        if np.ndim(t):
            return np.where(np.asarray(t) < self.value, 1.0, 0.0)
        return 1.0 if t < self.value else 0.0

    @property
    def mean(self):
        return self.value

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class Gamma(LifetimeLaw):
    shape: float
    scale: float
    kind = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ConfigError("gamma shape and scale must be > 0")

    def sample(self, rng):
        return float(rng.generator.gamma(self.shape, self.scale))

    def sample_many(self, rng, size):
        return rng.generator.gamma(self.shape, self.scale, size)

    def tail(self, t):
        x = np.maximum(np.asarray(t, dtype=float), 0.0) / self.scale
        out = special.gammaincc(self.shape, x)
        return out if np.ndim(out) else float(out)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logd = ((self.shape - 1.0) * np.log(t) - t / self.scale
                    - special.gammaln(self.shape) - self.shape * math.log(self.scale))
            out = np.where(t > 0, np.exp(logd), 0.0)
        if self.shape == 1.0:
            out = np.where(t == 0, 1.0 / self.scale, out)
        return out if out.ndim else float(out)

    def partial_mean(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0) / self.scale
        out = self.shape * self.scale * special.gammainc(self.shape + 1.0, x)
        return out if np.ndim(out) else float(out)

    @property
    def mean(self):
        return self.shape * self.scale

    def to_dict(self):
        return {"kind": self.kind, "shape": self.shape, "scale": self.scale}


def lifetime_from_dict(cfg: dict) -> LifetimeLaw:
    """Inverse of ``LifetimeLaw.to_dict``."""
    try:
        kind = cfg["kind"].lower()
        if kind == "exponential":
            return Exponential(float(cfg["rate"]))
        if kind == "deterministic":
            return Deterministic(float(cfg["value"]))
        if kind == "gamma":
            return Gamma(float(cfg["shape"]), float(cfg["scale"]))
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"bad lifetime entry {cfg!r}") from exc
    raise ConfigError(f"unknown lifetime kind {cfg.get('kind')!r}")


def sample_lifetime(law: LifetimeLaw, rng: RngStream) -> float:
    return law.sample(rng)


def lifetime_tail(law: LifetimeLaw, t: float) -> float:
    if t < 0:
        raise DomainError("lifetime_tail needs t >= 0")
    return law.tail(t)
