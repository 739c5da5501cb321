from collections import Counter
from itertools import combinations
from pathlib import Path
import sys
import unittest

from hypothesis import given, settings, strategies as st
import numpy as np
from scipy import stats

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from keygraph import model
from keygraph.model import KeyGraph, KeyRing, Seed, Theta


class ThetaTests(unittest.TestCase):
    def test_rejects_ring_larger_than_pool(self) -> None:
        with self.assertRaisesRegex(ValueError, "exceeds pool size"):
            Theta(5, 3)

    def test_rejects_empty_ring(self) -> None:
        with self.assertRaises(ValueError):
            Theta(0, 4)

    def test_complete_flag(self) -> None:
        self.assertTrue(Theta(2, 3).complete)
        self.assertFalse(Theta(2, 4).complete)
        self.assertTrue(Theta(1, 1).complete)


class SeedTests(unittest.TestCase):
    def test_rejects_out_of_range_master(self) -> None:
        with self.assertRaises(ValueError):
            Seed(-1)
        with self.assertRaises(ValueError):
            Seed(2**64)

    def test_same_path_gives_same_stream(self) -> None:
        first = Seed(7).child(3).generator().integers(0, 1000, size=20)
        second = Seed(7, (3,)).generator().integers(0, 1000, size=20)
        self.assertTrue(np.array_equal(first, second))

    def test_children_differ(self) -> None:
        first = Seed(7).child(0).generator().integers(0, 2**32, size=8)
        second = Seed(7).child(1).generator().integers(0, 2**32, size=8)
        self.assertFalse(np.array_equal(first, second))


class KeyRingTests(unittest.TestCase):
    def test_of_sorts_and_deduplicates(self) -> None:
        self.assertEqual(KeyRing.of([3, 1, 3]).keys, (1, 3))

    def test_rejects_unsorted_keys(self) -> None:
        with self.assertRaises(ValueError):
            KeyRing((3, 1))

    def test_mask_and_fits(self) -> None:
        ring = KeyRing((0, 2))
        self.assertEqual(ring.mask, 0b101)
        self.assertTrue(ring.fits(Theta(2, 3)))
        self.assertFalse(ring.fits(Theta(2, 2)))
        self.assertFalse(ring.fits(Theta(3, 5)))

    @given(
        st.frozensets(st.integers(0, 60), min_size=1, max_size=8),
        st.frozensets(st.integers(0, 60), min_size=1, max_size=8),
    )
    def test_merge_and_bitset_agree(self, left: frozenset, right: frozenset) -> None:
        a, b = KeyRing.of(left), KeyRing.of(right)
        expected = bool(left & right)
        self.assertEqual(model.adjacent(a, b), expected)
        self.assertEqual(model.adjacent_bitset(a, b), expected)
        self.assertEqual(model.adjacent(a, b), model.adjacent(b, a))


class KeyGraphTests(unittest.TestCase):
    def test_adjacency_from_explicit_rings(self) -> None:
        g = KeyGraph.from_rings(Theta(2, 6), [(0, 1), (1, 2), (3, 4), (4, 5)])
        self.assertEqual(g.n, 4)
        self.assertTrue(g.are_adjacent(0, 1))
        self.assertFalse(g.are_adjacent(1, 2))
        self.assertFalse(g.are_adjacent(2, 2))
        self.assertEqual(g.neighbors(2), [3])
        self.assertEqual(g.degree(0), 1)
        self.assertEqual(list(g.edges()), [(0, 1), (2, 3)])

    def test_large_pool_uses_sorted_merge(self) -> None:
        theta = Theta(2, model.BITSET_MAX_POOL + 500)
        g = KeyGraph.from_rings(theta, [(1, 1400), (1400, 1450), (10, 11)])
        self.assertTrue(g.are_adjacent(0, 1))
        self.assertFalse(g.are_adjacent(0, 2))

    def test_rejects_ring_outside_pool(self) -> None:
        with self.assertRaises(ValueError):
            KeyGraph.from_rings(Theta(2, 4), [(0, 1), (2, 4)])

    def test_rejects_wrong_ring_size(self) -> None:
        with self.assertRaises(ValueError):
            KeyGraph(Theta(2, 4), np.array([[0, 1, 2]]))

    def test_keys_are_read_only(self) -> None:
        g = KeyGraph.from_rings(Theta(1, 3), [(0,), (2,)])
        with self.assertRaises(ValueError):
            g.keys[0, 0] = 1

    def test_key_counts(self) -> None:
        g = KeyGraph.from_rings(Theta(2, 4), [(0, 1), (1, 2), (1, 3)])
        self.assertEqual(g.key_counts.tolist(), [1, 3, 1, 1])


class SamplingTests(unittest.TestCase):
    def test_build_graph_is_deterministic(self) -> None:
        first = model.build_graph(50, Theta(3, 40), Seed(11))
        second = model.build_graph(50, Theta(3, 40), Seed(11))
        self.assertTrue(np.array_equal(first.keys, second.keys))

    def test_sample_graph_rejects_empty_graph(self) -> None:
        with self.assertRaises(ValueError):
            model.sample_graph(0, Theta(1, 2), Seed(0).generator())

    def test_rings_are_valid_subsets(self) -> None:
        theta = Theta(5, 9)
        g = model.sample_graph(500, theta, Seed(3).generator())
        for ring in g.rings:
            self.assertTrue(ring.fits(theta))

    def test_full_ring_is_whole_pool(self) -> None:
        ring = model.sample_key_ring(Theta(4, 4), Seed(1).generator())
        self.assertEqual(ring.keys, (0, 1, 2, 3))

    def test_rings_are_uniform_over_subsets(self) -> None:
        theta = Theta(2, 5)
        draws = 100_000
        g = model.sample_graph(draws, theta, Seed(5).generator())
        counts = Counter(tuple(row) for row in g.keys.tolist())
        subsets = list(combinations(range(5), 2))
        self.assertEqual(set(counts), set(subsets))
        result = stats.chisquare([counts[subset] for subset in subsets])
        self.assertGreater(result.pvalue, 0.001)

    def test_single_key_ring_is_a_fair_coin(self) -> None:
        stream = Seed(6).generator()
        draws = 100_000
        zeros = sum(model.sample_key_ring(Theta(1, 2), stream).keys == (0,) for _ in range(draws))
        se = (0.25 / draws) ** 0.5
        self.assertLessEqual(abs(zeros / draws - 0.5), 3 * se)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32))
    def test_every_sampled_ring_fits(self, k: int, extra: int, master: int) -> None:
        theta = Theta(k, k + extra)
        g = model.build_graph(8, theta, Seed(master))
        self.assertEqual(g.keys.shape, (8, k))
        self.assertTrue((np.diff(g.keys, axis=1) > 0).all())
        self.assertLess(int(g.keys.max()), theta.p)


if __name__ == "__main__":
    unittest.main()
