"""Three rules for picking an ancestral lineage out of a simulated tree.

* uniform  - i.i.d. Unif[0, 1] marks on the individuals alive at the horizon,
             follow the one with the largest mark (a uniform pick);
* palm     - every alive individual, weight 1 each (size-biased pick);
* leftmost - first surviving child in birth order at every reproduction event.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .distributions import RngStream
from .errors import ConfigError
from .simulator import Tree, ancestral_lineage


class Scheme(str, Enum):
    UNIFORM = "uniform"
    PALM = "palm"
    LEFTMOST = "leftmost"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "")
        try:
            return cls("uniform" if key == "uniformmarker" else key)
        except ValueError:
            raise ConfigError(f"unknown scheme {value!r}") from None


@dataclass(frozen=True)
class LineageRecord:
    scheme: Scheme
    survived: bool
    times: Tuple[float, ...] = ()
    sizes: Tuple[int, ...] = ()
    left_extinct: Optional[Tuple[int, ...]] = None
    marker_S: Optional[float] = None
    weight: float = 1.0
    node: Optional[int] = None
    replicate: Optional[int] = None

    @property
    def J(self) -> int:
        return len(self.times)

    def gaps(self) -> np.ndarray:
        """Inter-event times, the first measured from time 0."""
        return np.diff(np.asarray((0.0,) + self.times))


def _lineage(tree: Tree, v: int):
    events = ancestral_lineage(tree, v)
    return tuple(e.time for e in events), tuple(e.size for e in events)


def sample_uniform_marker(tree: Tree, rng: RngStream, replicate=None) -> LineageRecord:
    """Follow the alive individual carrying the largest of |alive| uniform marks."""
    if not tree.alive:
        return LineageRecord(Scheme.UNIFORM, False, replicate=replicate)
    marks = rng.random(len(tree.alive))
    pick = int(np.argmax(marks))
    v = tree.alive[pick]
    times, sizes = _lineage(tree, v)
    return LineageRecord(Scheme.UNIFORM, True, times, sizes, marker_S=float(marks[pick]),
                         node=v, replicate=replicate)


def sample_palm(tree: Tree, replicate=None) -> List[LineageRecord]:
    """One weight-1 record per alive individual; empty for an extinct tree."""
    out = []
    for v in tree.alive:
        times, sizes = _lineage(tree, v)
        out.append(LineageRecord(Scheme.PALM, True, times, sizes, node=v, replicate=replicate))
    return out


def sample_leftmost(tree: Tree, replicate=None) -> LineageRecord:
    """Descend through the first child (birth order) whose subtree survives.

    ``left_extinct[i]`` counts the children skipped at event ``i``; all of
    them have died out by the horizon.
    """
    if not tree.alive:
        return LineageRecord(Scheme.LEFTMOST, False, left_extinct=(), replicate=replicate)
    T = tree.horizon
    node = tree.nodes[0]
    times, sizes, ks = [], [], []
    while node.death_time <= T:
        for k, c in enumerate(node.children):
            if tree.survives(c):
                break
        else:  # pragma: no cover - guarded by tree.alive
            raise AssertionError("surviving subtree without surviving child")
        times.append(node.death_time)
        sizes.append(len(node.children))
        ks.append(k)
        node = tree.nodes[c]
    return LineageRecord(Scheme.LEFTMOST, True, tuple(times), tuple(sizes), tuple(ks),
                         node=node.id, replicate=replicate)


def sample(tree: Tree, scheme: Scheme, rng: RngStream, replicate=None) -> List[LineageRecord]:
    """Dispatch on ``scheme``; always returns a list of records."""
    if scheme is Scheme.UNIFORM:
        return [sample_uniform_marker(tree, rng, replicate)]
    if scheme is Scheme.PALM:
        return sample_palm(tree, replicate)
    return [sample_leftmost(tree, replicate)]
