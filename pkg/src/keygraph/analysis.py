"""Graph predicates and statistics on key graph instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .model import KeyGraph

PAIRWISE_MAX_NODES = 256

Method = Literal["auto", "pairwise", "key-index"]


class UnionFind:
    """Disjoint sets over ``0..size-1`` with union by rank and path compression."""

    def __init__(self, size: int) -> None:
        self.parent = list(range(size))
        self.rank = [0] * size
        self.count = size

    def find(self, x: int) -> int:
        root = x
        parent = self.parent
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, x: int, y: int) -> bool:
        px = self.find(x)
        py = self.find(y)
        if px == py:
            return False
        if self.rank[px] < self.rank[py]:
            px, py = py, px
        self.parent[py] = px
        if self.rank[px] == self.rank[py]:
            self.rank[px] += 1
        self.count -= 1
        return True

    def groups(self) -> list[list[int]]:
        grouped: dict[int, list[int]] = {}
        for x in range(len(self.parent)):
            grouped.setdefault(self.find(x), []).append(x)
        return sorted(grouped.values())


@dataclass(frozen=True)
class NodeSet:
    """Sorted, distinct node indices."""

    members: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.members, self.members[1:])):
            raise ValueError(f"node set {self.members} is not sorted and distinct")
        if self.members and self.members[0] < 0:
            raise ValueError(f"node set {self.members} holds a negative index")

    @classmethod
    def of(cls, members: Iterable[int]) -> NodeSet:
        return cls(tuple(sorted({int(member) for member in members})))

    @classmethod
    def prefix(cls, r: int) -> NodeSet:
        return cls(tuple(range(r)))

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class TreeShape:
    """Spanning tree on labels ``0..r-1`` given as (parent, child) edges."""

    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        r = len(self.edges) + 1
        forest = UnionFind(r)
        for parent, child in self.edges:
            if not (0 <= parent < r and 0 <= child < r):
                raise ValueError(f"tree edge {(parent, child)} uses a label outside 0..{r - 1}")
            if not forest.union(parent, child):
                raise ValueError(f"tree edges {self.edges} contain a cycle")

    @property
    def r(self) -> int:
        return len(self.edges) + 1

    @classmethod
    def path(cls, r: int) -> TreeShape:
        if r < 1:
            raise ValueError("a tree needs at least one vertex")
        return cls(tuple((i, i + 1) for i in range(r - 1)))

    @classmethod
    def star(cls, r: int) -> TreeShape:
        if r < 1:
            raise ValueError("a tree needs at least one vertex")
        return cls(tuple((0, i) for i in range(1, r)))

    @classmethod
    def parse(cls, text: str, r: int) -> TreeShape:
        """Parse ``path``, ``star`` or an edge list such as ``0-2,2-1``."""

        text = text.strip()
        if text == "path":
            return cls.path(r)
        if text == "star":
            return cls.star(r)
        edges = []
        for token in text.split(","):
            parent, _, child = token.partition("-")
            edges.append((int(parent), int(child)))
        return cls(tuple(edges))


def components(g: KeyGraph, method: Method = "auto") -> list[list[int]]:
    """Return the connected components as sorted node lists."""

    return _union_find(g, method).groups()


def is_connected(g: KeyGraph, method: Method = "auto") -> bool:
    """True when the key graph has a single component (n=1 counts as connected)."""

    if g.n == 1:
        return True
    return _union_find(g, method).count == 1


def isolated_count(g: KeyGraph) -> int:
    """Number of nodes sharing no key with any other node."""

    if g.n == 1:
        return 0
    shared = (g.key_counts[g.keys] >= 2).any(axis=1)
    return int(g.n - shared.sum())


def degree_sequence(g: KeyGraph) -> list[int]:
    return [g.degree(i) for i in range(g.n)]


def subset_connected(g: KeyGraph, s: NodeSet) -> bool:
    """True when the subgraph induced on ``s`` is connected."""

    _check_subset(g, s)
    members = s.members
    forest = UnionFind(len(members))
    for a in range(len(members)):
        for b in range(a + 1, len(members)):
            if g.are_adjacent(members[a], members[b]):
                forest.union(a, b)
    return forest.count == 1


def subset_isolated(g: KeyGraph, s: NodeSet) -> bool:
    """True when no edge joins a member of ``s`` to a non-member."""

    _check_subset(g, s)
    if len(s) == g.n:
        raise ValueError("subset covers every node, so its complement is empty")
    inside = np.zeros(g.n, dtype=bool)
    inside[list(s.members)] = True
    held = np.zeros(g.theta.p, dtype=bool)
    held[g.keys[inside].ravel()] = True
    return not held[g.keys[~inside]].any()


def a_event(g: KeyGraph, s: NodeSet) -> bool:
    """Subset ``s`` is connected and isolated from the rest of the graph."""

    return subset_connected(g, s) and subset_isolated(g, s)


def union_key_count(g: KeyGraph, s: NodeSet) -> int:
    """Number of distinct keys held collectively by the nodes of ``s``."""

    _check_subset(g, s)
    return int(np.unique(g.keys[list(s.members)]).size)


def contains_tree(g: KeyGraph, s: NodeSet, t: TreeShape) -> bool:
    """True when every tree edge maps onto an adjacency among the nodes of ``s``."""

    _check_subset(g, s)
    if len(s) != t.r:
        raise ValueError(f"tree has {t.r} labels but the node set has {len(s)} members")
    members = s.members
    return all(g.are_adjacent(members[a], members[b]) for a, b in t.edges)


def _union_find(g: KeyGraph, method: Method) -> UnionFind:
    if method == "auto":
        method = "pairwise" if g.n <= PAIRWISE_MAX_NODES else "key-index"
    if method == "pairwise":
        return _pairwise_union(g)
    if method == "key-index":
        return _key_index_union(g)
    raise ValueError(f"unknown connectivity method {method!r}")


def _pairwise_union(g: KeyGraph) -> UnionFind:
    forest = UnionFind(g.n)
    for i in range(g.n):
        for j in range(i + 1, g.n):
            if forest.find(i) != forest.find(j) and g.are_adjacent(i, j):
                forest.union(i, j)
    return forest


def _key_index_union(g: KeyGraph) -> UnionFind:
    # Nodes holding a common key form a clique: chaining each key bucket is enough.
    forest = UnionFind(g.n)
    flat = g.keys.ravel()
    order = np.argsort(flat, kind="stable")
    owners = (order // g.theta.k).tolist()
    sorted_keys = flat[order].tolist()
    for idx in range(1, len(owners)):
        if sorted_keys[idx] == sorted_keys[idx - 1]:
            forest.union(owners[idx - 1], owners[idx])
    return forest


def _check_subset(g: KeyGraph, s: NodeSet) -> None:
    if not s.members:
        raise ValueError("node set must be non-empty")
    if s.members[-1] >= g.n:
        raise ValueError(f"node index {s.members[-1]} is out of range for n={g.n}")
