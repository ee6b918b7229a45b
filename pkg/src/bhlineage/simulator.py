"""Event-driven simulation of a Bellman-Harris tree up to a horizon."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

from .distributions import LifetimeLaw, OffspringDistribution, RngStream
from .errors import ConfigError, DomainError, PopulationCapExceeded

DEFAULT_MAX_NODES = 10**6


@dataclass(slots=True)
class TreeNode:
    id: int
    parent: Optional[int]
    birth_time: float
    death_time: float
    birth_order: int = 0
    children: List[int] = field(default_factory=list)


class LineageEvent(NamedTuple):
    """One reproduction event on an ancestral path.

    ``sibling_survival`` lists, in birth order, whether each *other* child
    of the event has a descendant alive at the horizon.
    """

    time: float
    size: int
    child_order: int
    sibling_survival: Tuple[bool, ...]


class Tree:
    """Genealogy of one simulated population; ``nodes[0]`` is the root.

    A node is alive at the horizon iff its death time exceeds it; such nodes
    keep their sampled death time but never get children.
    """

    __slots__ = ("nodes", "horizon", "alive", "_survives")

    def __init__(self, nodes: List[TreeNode], horizon: float):
        self.nodes = nodes
        self.horizon = horizon
        self.alive = [n.id for n in nodes if n.death_time > horizon]
        self._survives = None

    @property
    def size_at_horizon(self) -> int:
        return len(self.alive)

    @property
    def survived(self) -> bool:
        return bool(self.alive)

    def survives(self, i: int) -> bool:
        """Whether the subtree rooted at node ``i`` has an individual alive at the horizon."""
        if self._survives is None:
            flags = [False] * len(self.nodes)
            # children always carry larger ids than their parent
            for n in reversed(self.nodes):
                if n.death_time > self.horizon:
                    flags[n.id] = True
                if flags[n.id] and n.parent is not None:
                    flags[n.parent] = True
            self._survives = flags
        return self._survives[i]

    def path_to(self, v: int) -> List[int]:
        path = []
        i: Optional[int] = v
        while i is not None:
            path.append(i)
            i = self.nodes[i].parent
        path.reverse()
        return path

    def death_events(self):
        """``(time, n_children)`` for every death at or before the horizon."""
        return [(n.death_time, len(n.children)) for n in self.nodes
                if n.death_time <= self.horizon]


def simulate_tree(d: OffspringDistribution, law: LifetimeLaw, T: float, rng: RngStream,
                  max_nodes: int = DEFAULT_MAX_NODES) -> Tree:
    """Grow one tree from a single ancestor born at time 0.

    Deaths are processed in time order (ties by id), so a cap hit always
    truncates a time-consistent prefix.

    Raises
    ------
    PopulationCapExceeded
        if the tree would need more than ``max_nodes`` nodes.
    """
    if max_nodes < 1:
        raise ConfigError("max_nodes must be >= 1")
    if not T > 0:
        raise ConfigError("T must be positive")
    sample_life = law.sample
    sample_k = d.sample
    root = TreeNode(0, None, 0.0, sample_life(rng), 0)
    nodes = [root]
    heap = [(root.death_time, 0)]
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        death, i = pop(heap)
        if death > T:
            break
        k = sample_k(rng)
        if len(nodes) + k > max_nodes:
            raise PopulationCapExceeded(max_nodes)
        kids = nodes[i].children
        for c in range(k):
            j = len(nodes)
            child_death = death + sample_life(rng)
            nodes.append(TreeNode(j, i, death, child_death, c))
            kids.append(j)
            push(heap, (child_death, j))
    return Tree(nodes, T)


def right_continuous_count(tree: Tree, t: float) -> int:
    """``N_t``: nodes with ``birth_time <= t < death_time``."""
    if t < 0 or t > tree.horizon:
        raise DomainError(f"t={t!r} outside [0, {tree.horizon}]")
    return sum(1 for n in tree.nodes if n.birth_time <= t < n.death_time)


def ancestral_lineage(tree: Tree, v: int) -> List[LineageEvent]:
    """Reproduction events on the path from the root to alive node ``v``."""
    if not (0 <= v < len(tree.nodes)) or tree.nodes[v].death_time <= tree.horizon:
        raise DomainError(f"node {v} is not alive at the horizon")
    path = tree.path_to(v)
    events = []
    for a, b in zip(path[:-1], path[1:]):
        parent = tree.nodes[a]
        child = tree.nodes[b]
        sibs = tuple(tree.survives(c) for c in parent.children if c != b)
        events.append(LineageEvent(parent.death_time, len(parent.children),
                                   child.birth_order, sibs))
    return events
