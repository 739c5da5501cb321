"""Key pool parameters, key ring sampling and random key graph instances."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

BITSET_MAX_POOL = 1024
_MAX_MASTER = 2**64


@dataclass(frozen=True)
class Theta:
    """Key ring size ``k`` and key pool size ``p``."""

    k: int
    p: int

    def __post_init__(self) -> None:
        if isinstance(self.k, bool) or isinstance(self.p, bool):
            raise ValueError("theta entries must be integers")
        if int(self.k) != self.k or int(self.p) != self.p:
            raise ValueError(f"theta entries must be integers, got k={self.k} p={self.p}")
        if self.k < 1:
            raise ValueError(f"ring size k={self.k} must be at least 1")
        if self.k > self.p:
            raise ValueError(f"ring size k={self.k} exceeds pool size p={self.p}")

    @property
    def complete(self) -> bool:
        """True when P < 2K, so every pair of rings intersects."""

        return self.p < 2 * self.k


@dataclass(frozen=True)
class Seed:
    """Master seed plus a spawn path identifying one random stream.

    The stream for ``Seed(master, path)`` is
    ``PCG64(SeedSequence(entropy=master, spawn_key=path))``; ``child``
    appends to the path, so trial ``t`` of a run seeded with ``s`` draws from
    ``s.child(t)``.
    """

    master: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if not 0 <= self.master < _MAX_MASTER:
            raise ValueError(f"master seed {self.master} is not a 64-bit unsigned integer")
        if any(step < 0 for step in self.path):
            raise ValueError("seed path entries must be non-negative")

    def child(self, *path: int) -> Seed:
        return Seed(self.master, self.path + tuple(int(step) for step in path))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.master, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(sequence))


@dataclass(frozen=True)
class KeyRing:
    """A K-subset of the key pool, stored as strictly increasing keys."""

    keys: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.keys:
            raise ValueError("key ring must hold at least one key")
        if any(b <= a for a, b in zip(self.keys, self.keys[1:])):
            raise ValueError(f"key ring {self.keys} is not strictly increasing")
        if self.keys[0] < 0:
            raise ValueError(f"key ring {self.keys} holds a negative key")

    @classmethod
    def of(cls, keys: Iterable[int]) -> KeyRing:
        return cls(tuple(sorted({int(key) for key in keys})))

    @property
    def k(self) -> int:
        return len(self.keys)

    @cached_property
    def mask(self) -> int:
        bits = 0
        for key in self.keys:
            bits |= 1 << key
        return bits

    def fits(self, theta: Theta) -> bool:
        return len(self.keys) == theta.k and self.keys[-1] < theta.p

    def __iter__(self) -> Iterator[int]:
        return iter(self.keys)

    def __len__(self) -> int:
        return len(self.keys)


def adjacent(a: KeyRing, b: KeyRing) -> bool:
    """Return True when the two rings share at least one key."""

    left, right = a.keys, b.keys
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] == right[j]:
            return True
        if left[i] < right[j]:
            i += 1
        else:
            j += 1
    return False


def adjacent_bitset(a: KeyRing, b: KeyRing) -> bool:
    return (a.mask & b.mask) != 0


@dataclass(frozen=True, eq=False)
class KeyGraph:
    """Random key graph K(n; theta); adjacency is derived from ring intersections."""

    theta: Theta
    keys: np.ndarray

    def __post_init__(self) -> None:
        keys = np.asarray(self.keys, dtype=np.int64)
        if keys.ndim != 2 or keys.shape[0] < 1:
            raise ValueError("a key graph needs at least one node")
        if keys.shape[1] != self.theta.k:
            raise ValueError(
                f"rings hold {keys.shape[1]} keys but theta requires k={self.theta.k}"
            )
        if keys.min() < 0 or keys.max() >= self.theta.p:
            raise ValueError(f"ring keys must lie in [0, {self.theta.p})")
        if keys.shape[1] > 1 and not (np.diff(keys, axis=1) > 0).all():
            raise ValueError("every ring must be strictly increasing")
        keys = keys.copy()
        keys.setflags(write=False)
        object.__setattr__(self, "keys", keys)

    @classmethod
    def from_rings(cls, theta: Theta, rings: Sequence[Iterable[int]]) -> KeyGraph:
        parsed = [ring if isinstance(ring, KeyRing) else KeyRing.of(ring) for ring in rings]
        for ring in parsed:
            if not ring.fits(theta):
                raise ValueError(f"ring {ring.keys} does not fit theta={theta}")
        return cls(theta=theta, keys=np.array([ring.keys for ring in parsed], dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.keys.shape[0])

    @cached_property
    def rings(self) -> tuple[KeyRing, ...]:
        return tuple(KeyRing(tuple(int(key) for key in row)) for row in self.keys)

    @cached_property
    def key_counts(self) -> np.ndarray:
        """Number of nodes holding each key of the pool."""

        return np.bincount(self.keys.ravel(), minlength=self.theta.p)

    def are_adjacent(self, i: int, j: int) -> bool:
        if i == j:
            return False
        rings = self.rings
        if self.theta.p <= BITSET_MAX_POOL:
            return adjacent_bitset(rings[i], rings[j])
        return adjacent(rings[i], rings[j])

    def neighbors(self, i: int) -> list[int]:
        shares = np.isin(self.keys, self.keys[i]).any(axis=1)
        shares[i] = False
        return [int(j) for j in np.flatnonzero(shares)]

    def degree(self, i: int) -> int:
        shares = np.isin(self.keys, self.keys[i]).any(axis=1)
        return int(shares.sum()) - 1

    def edges(self) -> Iterator[tuple[int, int]]:
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.are_adjacent(i, j):
                    yield i, j


def sample_key_ring(theta: Theta, stream: np.random.Generator) -> KeyRing:
    """Draw one ring uniformly from the C(P, K) subsets of the pool."""

    row = _floyd_rows(stream, 1, theta.k, theta.p)[0]
    return KeyRing(tuple(int(key) for key in row))


def sample_graph(n: int, theta: Theta, rng: np.random.Generator) -> KeyGraph:
    """Draw n independent rings from ``rng`` and wrap them as a key graph."""

    if n < 1:
        raise ValueError(f"node count n={n} must be at least 1")
    return KeyGraph(theta=theta, keys=_floyd_rows(rng, n, theta.k, theta.p))


def build_graph(n: int, theta: Theta, seed: Seed) -> KeyGraph:
    """Build K(n; theta) deterministically from ``seed``."""

    return sample_graph(n, theta, seed.generator())


def _floyd_rows(rng: np.random.Generator, n: int, k: int, p: int) -> np.ndarray:
    # Floyd's subset sampling, one column per step, vectorized over rows.
    rows = np.empty((n, k), dtype=np.int64)
    for step, top in enumerate(range(p - k, p)):
        pick = rng.integers(0, top + 1, size=n)
        if step:
            taken = (rows[:, :step] == pick[:, None]).any(axis=1)
            pick = np.where(taken, top, pick)
        rows[:, step] = pick
    rows.sort(axis=1)
    return rows
