from fractions import Fraction
import math
import os
from pathlib import Path
import sys
import unittest

from hypothesis import given, strategies as st

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from keygraph import combinatorics as comb
from keygraph import montecarlo as mc
from keygraph.analysis import TreeShape
from keygraph.model import Seed, Theta
from keygraph.montecarlo import (
    BudgetExceededError,
    EstimateWithCI,
    EventSelector,
    ExperimentSpec,
)
from keygraph.scaling import AlphaRing, ConstantPool, LinearPool, Scaling, TablePool

F = Fraction
SLOW = os.environ.get("KEYGRAPH_SLOW") == "1"
TOLERANCE_SE = 4.0
STRICT_SE = 3.0
LAW_TRIALS = 100_000


def _within(
    test: unittest.TestCase, est: EstimateWithCI, expected: float, tolerance: float = TOLERANCE_SE
) -> None:
    se = math.sqrt(expected * (1 - expected) / est.trials)
    test.assertLessEqual(abs(est.point - expected), tolerance * se + 1e-12, (est, expected))


def _run(n: int, theta: Theta, trials: int, seed: int, *events: str, workers: int = 1):
    selectors = tuple(EventSelector.parse(text) for text in events)
    return mc.run_trials(ExperimentSpec(n, theta, trials, Seed(seed), selectors), workers)


class EventSelectorTests(unittest.TestCase):
    def test_parse_labels_round_trip(self) -> None:
        for text in (
            "connected",
            "no-isolated",
            "disconnected-no-isolated",
            "degree",
            "subset-connected:0,2",
            "subset-isolated:1",
            "a-event:3",
        ):
            self.assertEqual(EventSelector.parse(text).label, text)

    def test_parse_tree_shapes(self) -> None:
        star = EventSelector.parse("tree:0,1,2:star")
        self.assertEqual(star.shape, TreeShape.star(3))
        self.assertEqual(star.label, "tree:0,1,2:0-1,0-2")
        path = EventSelector.parse("tree:0,1,2")
        self.assertEqual(path.shape, TreeShape.path(3))

    def test_parse_rejects_unknown_and_malformed(self) -> None:
        for text in ("bipartite", "a-event:x", "subset-connected:0,a", "connected:1", "subset-isolated:1,1"):
            with self.assertRaises(ValueError, msg=text):
                EventSelector.parse(text)

    def test_validate_against_n(self) -> None:
        with self.assertRaises(ValueError):
            EventSelector.parse("subset-connected:0,5").validate(4)
        with self.assertRaises(ValueError):
            EventSelector.parse("subset-isolated:0,1").validate(2)
        with self.assertRaises(ValueError):
            EventSelector.parse("a-event:4").validate(4)
        EventSelector.parse("a-event:3").validate(4)

    def test_experiment_spec_rejects_bad_inputs(self) -> None:
        with self.assertRaises(ValueError):
            ExperimentSpec(3, Theta(1, 2), 0, Seed(0))
        with self.assertRaises(ValueError):
            ExperimentSpec(3, Theta(1, 2), 10, Seed(0), (EventSelector.parse("a-event:3"),))


class EstimateTests(unittest.TestCase):
    def test_wilson_at_the_edges(self) -> None:
        none = EstimateWithCI.wilson(0, 10)
        self.assertEqual((none.point, none.ci_low), (0.0, 0.0))
        self.assertGreater(none.ci_high, 0.0)
        every = EstimateWithCI.wilson(10, 10)
        self.assertEqual((every.point, every.ci_high), (1.0, 1.0))
        self.assertLess(every.ci_low, 1.0)

    def test_wilson_known_value(self) -> None:
        est = EstimateWithCI.wilson(50, 100)
        self.assertAlmostEqual(est.ci_low, 0.4054, places=3)
        self.assertAlmostEqual(est.ci_high, 0.5946, places=3)

    def test_rejects_bad_tally(self) -> None:
        with self.assertRaises(ValueError):
            EstimateWithCI.wilson(3, 0)
        with self.assertRaises(ValueError):
            EstimateWithCI.wilson(5, 4)

    @given(st.integers(1, 10_000), st.data())
    def test_interval_contains_point(self, trials: int, data: st.DataObject) -> None:
        successes = data.draw(st.integers(0, trials))
        est = EstimateWithCI.wilson(successes, trials)
        self.assertEqual(est.point, successes / trials)
        self.assertTrue(0.0 <= est.ci_low <= est.point <= est.ci_high <= 1.0)

    def test_degree_stats(self) -> None:
        stats = mc.DegreeStats.from_sums(4, total=8, squares=20)
        self.assertEqual(stats.mean, 2.0)
        self.assertAlmostEqual(stats.std_error, math.sqrt((20 - 16) / 3 / 4))
        self.assertEqual(mc.DegreeStats.from_sums(1, 3, 9).std_error, math.inf)


class RunTrialsTests(unittest.TestCase):
    def test_single_node_is_always_connected(self) -> None:
        results = _run(1, Theta(2, 10), 10, 0, "connected", "no-isolated")
        self.assertEqual(results["connected"].point, 1.0)
        self.assertEqual(results["no-isolated"].point, 1.0)

    def test_complete_regime_is_always_connected(self) -> None:
        results = _run(30, Theta(3, 5), 50, 1, "connected")
        self.assertEqual(results["connected"].successes, 50)

    def test_three_nodes_one_of_two_keys(self) -> None:
        results = _run(3, Theta(1, 2), LAW_TRIALS, 7, "connected")
        _within(self, results["connected"], 0.25, STRICT_SE)

    def test_determinism_across_worker_counts(self) -> None:
        events = ("connected", "no-isolated", "subset-isolated:0,1", "degree")
        serial = _run(12, Theta(2, 20), 400, 99, *events, workers=1)
        parallel = _run(12, Theta(2, 20), 400, 99, *events, workers=3)
        self.assertEqual(serial, parallel)
        again = _run(12, Theta(2, 20), 400, 99, *events, workers=1)
        self.assertEqual(serial, again)

    def test_connected_never_exceeds_no_isolated(self) -> None:
        for theta in (Theta(1, 3), Theta(2, 12), Theta(3, 40)):
            results = _run(10, theta, 2_000, 5, "connected", "no-isolated", "disconnected-no-isolated")
            connected = results["connected"].successes
            no_isolated = results["no-isolated"].successes
            self.assertLessEqual(connected, no_isolated)
            self.assertEqual(
                no_isolated - connected, results["disconnected-no-isolated"].successes
            )

    def test_agrees_with_enumeration(self) -> None:
        trials = 200_000 if SLOW else 5_000
        instances = [(n, Theta(k, p)) for n in range(2, 5) for p in range(1, 7) for k in range(1, p + 1)]
        for seed, (n, theta) in enumerate(instances):
            oracle = mc.brute_force(n, theta, with_events=False)
            results = _run(n, theta, trials, seed, "connected", "no-isolated")
            with self.subTest(n=n, k=theta.k, p=theta.p):
                _within(self, results["connected"], oracle.p_connected.value)
                _within(self, results["no-isolated"], oracle.p_no_isolated.value)

    def test_isolation_frequency_matches_exact_value(self) -> None:
        theta = Theta(2, 10)
        results = _run(6, theta, 20_000, 3, "subset-isolated:0,1")
        _within(self, results["subset-isolated:0,1"], comb.isolation_prob(6, 2, theta).value)

    def test_tree_frequency_matches_edge_power(self) -> None:
        theta = Theta(2, 10)
        for r in (2, 3, 4):
            nodes = ",".join(str(i) for i in range(r))
            labels = [f"tree:{nodes}:path", f"tree:{nodes}:star"]
            results = _run(4, theta, LAW_TRIALS, 20 + r, *labels)
            expected = comb.tree_prob(theta, r).value
            for event in (EventSelector.parse(text) for text in labels):
                _within(self, results[event.label], expected, STRICT_SE)

    def test_mean_degree_matches_edge_probability(self) -> None:
        theta = Theta(2, 20)
        results = _run(20, theta, LAW_TRIALS, 4, "degree")
        expected = 19 * comb.edge_prob(theta).value
        self.assertLessEqual(
            abs(results.degree.mean - expected), STRICT_SE * results.degree.std_error
        )


class BruteForceTests(unittest.TestCase):
    def test_examples(self) -> None:
        result = mc.brute_force(3, Theta(1, 2))
        self.assertEqual(result.p_connected.rational, F(1, 4))
        self.assertEqual(result.p_no_isolated.rational, F(1, 4))
        self.assertEqual(result.assignments, 8)
        self.assertEqual(mc.brute_force(2, Theta(1, 2)).p_connected.rational, F(1, 2))
        self.assertEqual(mc.brute_force(4, Theta(1, 3)).p_connected.rational, F(1, 27))

    def test_single_node(self) -> None:
        result = mc.brute_force(1, Theta(2, 4))
        self.assertEqual(result.p_connected.rational, 1)
        self.assertEqual(result.p_no_isolated.rational, 1)
        self.assertEqual(result.p_events, {})

    def test_one_key_law(self) -> None:
        for n in range(2, 7):
            for p in range(1, 5):
                self.assertEqual(
                    mc.brute_force(n, Theta(1, p), with_events=False).p_connected.rational,
                    F(1, p ** (n - 1)),
                    (n, p),
                )

    def test_rejects_over_budget(self) -> None:
        with self.assertRaisesRegex(BudgetExceededError, "budget"):
            mc.brute_force(10, Theta(4, 40))

    def test_budget_is_checked_before_rings_are_listed(self) -> None:
        with self.assertRaisesRegex(BudgetExceededError, "budget"):
            mc.brute_force(2, Theta(8, 60))

    def test_prefix_events_match_closed_forms(self) -> None:
        for n, theta in ((4, Theta(2, 5)), (4, Theta(1, 3)), (3, Theta(2, 6))):
            result = mc.brute_force(n, theta)
            for r, events in result.p_events.items():
                self.assertEqual(events.isolated.rational, comb.isolation_prob(n, r, theta).rational)
                self.assertLessEqual(events.both.rational, events.connected.rational)
                self.assertLessEqual(events.both.rational, events.isolated.rational)
            self.assertEqual(result.p_events[1].connected.rational, 1)
            self.assertEqual(result.p_events[2].connected.rational, comb.edge_prob(theta).rational)
            self.assertLessEqual(result.p_connected.rational, result.p_no_isolated.rational)

    def test_connectivity_matches_direct_enumeration(self) -> None:
        from itertools import combinations, product

        from keygraph import analysis
        from keygraph.model import KeyGraph

        theta = Theta(2, 4)
        rings = list(combinations(range(4), 2))
        connected = 0
        for chosen in product(rings, repeat=3):
            connected += analysis.is_connected(KeyGraph.from_rings(theta, chosen))
        self.assertEqual(
            mc.brute_force(3, theta).p_connected.rational, F(connected, len(rings) ** 3)
        )


class ErdosRenyiTests(unittest.TestCase):
    def test_extreme_edge_probabilities(self) -> None:
        full = mc.er_simulate(8, 1.0, 20, Seed(0))
        self.assertEqual(full["connected"].point, 1.0)
        self.assertEqual(full.degree.mean, 7.0)
        empty = mc.er_simulate(8, 0.0, 20, Seed(0))
        self.assertEqual(empty["connected"].point, 0.0)
        self.assertEqual(empty["no-isolated"].point, 0.0)

    def test_single_node(self) -> None:
        results = mc.er_simulate(1, 0.5, 5, Seed(0))
        self.assertEqual(results["connected"].point, 1.0)

    def test_matched_mean_degree(self) -> None:
        p = comb.edge_prob(Theta(2, 10)).value
        results = mc.er_simulate(20, p, LAW_TRIALS, Seed(8))
        expected = 19 * 17 / 45
        self.assertLessEqual(
            abs(results.degree.mean - expected), STRICT_SE * results.degree.std_error
        )

    def test_two_node_connectivity(self) -> None:
        results = mc.er_simulate(2, 0.3, 20_000, Seed(9), events=(EventSelector("connected"),))
        _within(self, results["connected"], 0.3)

    def test_rejects_bad_inputs(self) -> None:
        with self.assertRaises(ValueError):
            mc.er_simulate(5, 1.5, 10, Seed(0))
        with self.assertRaises(ValueError):
            mc.er_simulate(5, 0.5, 10, Seed(0), events=(EventSelector.parse("a-event:2"),))

    def test_deterministic_across_workers(self) -> None:
        first = mc.er_simulate(30, 0.1, 300, Seed(4), workers=1)
        second = mc.er_simulate(30, 0.1, 300, Seed(4), workers=2)
        self.assertEqual(first, second)


class SweepTests(unittest.TestCase):
    def test_grid_shape_and_errors(self) -> None:
        rows = mc.sweep(Scaling(LinearPool(2.0), AlphaRing(0.0)), [20, 30], [-10.0, 0.0, 2.0], 50, Seed(1))
        self.assertEqual(len(rows), 6)
        failed = [row for row in rows if row.error]
        self.assertEqual([row.requested_alpha for row in failed], [-10.0, -10.0])
        for row in rows:
            self.assertEqual(list(row.csv_row()), list(mc.SWEEP_COLUMNS))
            if not row.error:
                self.assertGreaterEqual(row.realized_alpha, row.requested_alpha - 1e-6)
                self.assertIsNotNone(row.er_connected)

    def test_complete_cells_and_duplicates(self) -> None:
        rows = mc.sweep(Scaling(ConstantPool(4), AlphaRing(0.0)), [10], [10.0, 11.0], 40, Seed(2))
        first, second = rows
        self.assertEqual((first.k, second.k), (3, 3))
        self.assertTrue(first.complete_graph)
        self.assertEqual(first.connected.point, 1.0)
        self.assertEqual(first.realized_alpha, second.realized_alpha)
        self.assertEqual(first.connected, second.connected)
        self.assertEqual(first.er_connected, second.er_connected)

    def test_missing_pool_entry_is_recorded_in_row(self) -> None:
        rows = mc.sweep(Scaling(TablePool({20: 40}), AlphaRing(0.0)), [20, 30], [1.0], 10, Seed(0))
        self.assertEqual(len(rows), 2)
        done, missing = rows
        self.assertIsNone(done.error)
        self.assertEqual((done.n, done.p), (20, 40))
        self.assertIsNotNone(done.connected)
        self.assertEqual(missing.n, 30)
        self.assertIsNone(missing.p)
        self.assertIsNone(missing.k)
        self.assertIn("n=30", missing.error)
        row = missing.csv_row()
        self.assertEqual((row["P"], row["K"]), ("", ""))

    def test_without_er_column(self) -> None:
        rows = mc.sweep(Scaling(LinearPool(2.0), AlphaRing(0.0)), [20], [1.0], 20, Seed(3), er=False)
        self.assertIsNone(rows[0].er_connected)
        self.assertEqual(rows[0].csv_row()["er_p_connected"], "")

    @unittest.skipUnless(SLOW, "set KEYGRAPH_SLOW=1 for the desk-scale portrait")
    def test_zero_one_portrait(self) -> None:
        workers = int(os.environ.get("KEYGRAPH_WORKERS", os.cpu_count() or 1))
        rows = mc.sweep(
            Scaling(LinearPool(2.0), AlphaRing(0.0)), [2000], [-7.3, 6.0], 2000, Seed(2024), workers
        )
        low, high = rows
        self.assertLessEqual(low.realized_alpha, -6.0)
        self.assertLessEqual(low.connected.point, 0.2)
        self.assertGreaterEqual(high.realized_alpha, 6.0)
        self.assertGreaterEqual(high.connected.point, 0.8)
        self.assertLessEqual(abs(high.connected.point - high.no_isolated.point), 0.05)


class UnionBoundCheckTests(unittest.TestCase):
    def test_complete_regime_has_empty_left_side(self) -> None:
        report = mc.union_bound_check(6, Theta(3, 5), 100, Seed(0))
        self.assertEqual(report.lhs.point, 0.0)
        self.assertTrue(report.consistent)

    def test_four_nodes_use_only_pairs(self) -> None:
        report = mc.union_bound_check(4, Theta(2, 10), 200, Seed(0))
        self.assertEqual(list(report.per_r), [2])

    def test_rejects_large_n(self) -> None:
        with self.assertRaises(BudgetExceededError):
            mc.union_bound_check(21, Theta(2, 10), 10, Seed(0))

    def test_ten_nodes(self) -> None:
        report = mc.union_bound_check(10, Theta(2, 10), 5_000, Seed(12))
        self.assertEqual(sorted(report.per_r), [2, 3, 4, 5])
        self.assertTrue(report.consistent)
        self.assertGreaterEqual(report.rhs_upper, report.rhs_point)
        self.assertGreater(report.rhs_crude, 0.0)


if __name__ == "__main__":
    unittest.main()
