"""Brute-force enumeration of every genealogy of a discrete-time tree.

Used as the exact oracle for unit lifetimes: each ordered tree of depth
``n`` is generated with its probability, and the three sampling rules are
applied to it directly.  Nothing here touches generating functions.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Tuple

from .distributions import OffspringDistribution
from .errors import ConfigError

DEFAULT_STATE_BUDGET = 10**7


@dataclass
class ExactLaw:
    """Exact joint laws produced by :func:`enumerate_genealogies`.

    ``uniform[sizes]``        P(N_n > 0, L = sizes), uniform pick
    ``leftmost[(sizes, ks)]`` P(N_n > 0, L = sizes, K = ks), leftmost rule
    ``palm[sizes]``           E[#alive individuals whose lineage has these sizes]
    """

    n: int
    extinction: float = 0.0
    mean_alive: float = 0.0
    uniform: Dict[Tuple[int, ...], float] = field(default_factory=lambda: defaultdict(float))
    leftmost: Dict[tuple, float] = field(default_factory=lambda: defaultdict(float))
    palm: Dict[Tuple[int, ...], float] = field(default_factory=lambda: defaultdict(float))
    trees: int = 0

    def to_json(self) -> dict:
        def key(t):
            return ",".join(map(str, t))
        return {
            "n": self.n,
            "trees": self.trees,
            "extinction": self.extinction,
            "mean_alive": self.mean_alive,
            "uniform": {key(k): v for k, v in sorted(self.uniform.items())},
            "leftmost": {f"{key(s)}|{key(k)}": v for (s, k), v in sorted(self.leftmost.items())},
            "palm": {key(k): v / self.mean_alive for k, v in sorted(self.palm.items())}
            if self.mean_alive > 0 else {},
            "total_uniform": math.fsum(self.uniform.values()) + self.extinction,
            "total_leftmost": math.fsum(self.leftmost.values()) + self.extinction,
        }


def enumerate_genealogies(d: OffspringDistribution, n: int,
                          state_budget: int = DEFAULT_STATE_BUDGET) -> ExactLaw:
    """Enumerate all ordered trees of ``n`` generations.

    Individuals carry ``(sizes, path)``: the family sizes met along their
    ancestry and their birth-order path from the root. Lexicographic order
    of paths is the planar (leftmost-first) order of the tree.
    """
    if n < 1:
        raise ConfigError("enumeration needs n >= 1")
    if d.k_max >= 2 and d.k_max ** n > state_budget:
        raise ConfigError(f"k_max^n = {d.k_max ** n} exceeds state budget {state_budget}")
    support = [k for k in range(d.k_max + 1) if d.p(k) > 0]
    states = [(1.0, [((), ())])]
    visited = 0
    for _ in range(n):
        nxt = []
        for prob, gen in states:
            if not gen:
                nxt.append((prob, gen))
                continue
            for combo in itertools.product(support, repeat=len(gen)):
                visited += 1
                if visited > state_budget:
                    raise ConfigError(f"enumeration exceeded state budget {state_budget}")
                p = prob
                children = []
                for (sizes, path), k in zip(gen, combo):
                    p *= d.p(k)
                    children.extend((sizes + (k,), path + (c,)) for c in range(k))
                nxt.append((p, children))
        states = nxt

    law = ExactLaw(n=n, trees=len(states))
    for prob, alive in states:
        if not alive:
            law.extinction += prob
            continue
        law.mean_alive += prob * len(alive)
        share = prob / len(alive)
        for sizes, _ in alive:
            law.uniform[sizes] += share
            law.palm[sizes] += prob
        sizes, path = min(alive, key=lambda ind: ind[1])
        law.leftmost[(sizes, path)] += prob
    return law
