"""Seeded parallel trials, estimators, the enumeration oracle, ER comparison and sweeps.

Every trial ``t`` draws from its own stream ``seed.child(t)`` and workers
return integer tallies that are summed, so results do not depend on the
number of workers or on how trials are chunked.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
import logging
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from . import analysis
from .analysis import NodeSet, TreeShape, UnionFind
from .combinatorics import ExactProb, crude_a_bound, edge_prob, exp_or_inf, union_bound_rhs
from .model import KeyGraph, Seed, Theta, sample_graph
from .scaling import Scaling, k_from_alpha

logger = logging.getLogger(__name__)

ENUMERATION_BUDGET = 10**7
UNION_CHECK_MAX_NODES = 20
Z_95 = float(stats.norm.ppf(0.975))

KEY_GRAPH_STREAM = 0
ER_STREAM = 1

ER_KINDS = ("connected", "no-isolated", "disconnected-no-isolated", "degree")

SWEEP_COLUMNS = (
    "n",
    "K",
    "P",
    "realized_alpha",
    "p_connected",
    "ci_low",
    "ci_high",
    "p_no_isolated",
    "niso_ci_low",
    "niso_ci_high",
    "er_p_connected",
    "requested_alpha",
    "complete_graph",
    "error",
)

_DEGREE_SUM = "degree:sum"
_DEGREE_SQUARES = "degree:squares"


class BudgetExceededError(RuntimeError):
    """Raised when an enumeration or simulation exceeds its resource budget."""


@dataclass(frozen=True)
class EventSelector:
    """One event to count per sampled graph."""

    kind: str
    nodes: NodeSet | None = None
    shape: TreeShape | None = None
    r: int | None = None

    @classmethod
    def parse(cls, text: str) -> EventSelector:
        """Parse ``connected``, ``subset-isolated:0,1``, ``tree:0,1,2:star``, ``a-event:3`` and so on."""

        kind, _, rest = text.strip().partition(":")
        if kind in ("connected", "no-isolated", "disconnected-no-isolated", "degree"):
            if rest:
                raise ValueError(f"event {kind!r} takes no arguments")
            return cls(kind)
        if kind in ("subset-connected", "subset-isolated"):
            return cls(kind, nodes=_parse_nodes(rest))
        if kind == "tree":
            node_text, _, shape_text = rest.partition(":")
            nodes = _parse_nodes(node_text)
            return cls(kind, nodes=nodes, shape=TreeShape.parse(shape_text or "path", len(nodes)))
        if kind == "a-event":
            try:
                r = int(rest)
            except ValueError as exc:
                raise ValueError(f"a-event needs an integer size, got {rest!r}") from exc
            return cls(kind, r=r)
        raise ValueError(f"unknown event selector {text!r}")

    @property
    def label(self) -> str:
        if self.kind in ("subset-connected", "subset-isolated"):
            return f"{self.kind}:{_format_nodes(self.nodes)}"
        if self.kind == "tree":
            edges = ",".join(f"{a}-{b}" for a, b in self.shape.edges)
            return f"tree:{_format_nodes(self.nodes)}:{edges}"
        if self.kind == "a-event":
            return f"a-event:{self.r}"
        return self.kind

    def validate(self, n: int) -> None:
        if self.nodes is not None:
            if not self.nodes.members:
                raise ValueError(f"event {self.label} needs a non-empty node set")
            if self.nodes.members[-1] >= n:
                raise ValueError(f"event {self.label} names a node outside 0..{n - 1}")
        if self.kind == "subset-isolated" and len(self.nodes) == n:
            raise ValueError(f"event {self.label} covers every node")
        if self.kind == "tree" and len(self.nodes) != self.shape.r:
            raise ValueError(f"event {self.label} has a tree/node-set size mismatch")
        if self.kind == "a-event" and not 1 <= self.r < n:
            raise ValueError(f"event {self.label} needs 1 <= r < n={n}")

    def evaluate(self, g: KeyGraph) -> bool:
        if self.kind == "connected":
            return analysis.is_connected(g)
        if self.kind == "no-isolated":
            return analysis.isolated_count(g) == 0
        if self.kind == "disconnected-no-isolated":
            return analysis.isolated_count(g) == 0 and not analysis.is_connected(g)
        if self.kind == "subset-connected":
            return analysis.subset_connected(g, self.nodes)
        if self.kind == "subset-isolated":
            return analysis.subset_isolated(g, self.nodes)
        if self.kind == "tree":
            return analysis.contains_tree(g, self.nodes, self.shape)
        if self.kind == "a-event":
            return analysis.a_event(g, NodeSet.prefix(self.r))
        raise ValueError(f"event {self.label} is not a yes/no event")


@dataclass(frozen=True)
class EstimateWithCI:
    """Success frequency with a 95% Wilson score interval."""

    successes: int
    trials: int
    point: float
    ci_low: float
    ci_high: float

    @classmethod
    def wilson(cls, successes: int, trials: int, z: float = Z_95) -> EstimateWithCI:
        if trials < 1 or not 0 <= successes <= trials:
            raise ValueError(f"invalid tally {successes}/{trials}")
        point = successes / trials
        denom = 1.0 + z * z / trials
        centre = (point + z * z / (2 * trials)) / denom
        half = z * math.sqrt(point * (1 - point) / trials + z * z / (4 * trials * trials)) / denom
        return cls(
            successes=successes,
            trials=trials,
            point=point,
            ci_low=min(point, max(0.0, centre - half)),
            ci_high=max(point, min(1.0, centre + half)),
        )

    @property
    def std_error(self) -> float:
        return math.sqrt(self.point * (1.0 - self.point) / self.trials)


@dataclass(frozen=True)
class DegreeStats:
    """Mean and standard error of the degree of node 0."""

    trials: int
    mean: float
    std_error: float

    @classmethod
    def from_sums(cls, trials: int, total: int, squares: int) -> DegreeStats:
        mean = total / trials
        if trials < 2:
            return cls(trials, mean, math.inf)
        variance = (squares - trials * mean * mean) / (trials - 1)
        return cls(trials, mean, math.sqrt(max(variance, 0.0) / trials))


@dataclass(frozen=True)
class ExperimentSpec:
    n: int
    theta: Theta
    trials: int
    seed: Seed
    events: tuple[EventSelector, ...] = (EventSelector("connected"), EventSelector("no-isolated"))

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"node count n={self.n} must be at least 1")
        if self.trials < 1:
            raise ValueError(f"trials={self.trials} must be at least 1")
        if not self.events:
            raise ValueError("at least one event selector is required")
        for event in self.events:
            event.validate(self.n)


@dataclass(frozen=True)
class TrialResults:
    trials: int
    estimates: dict[str, EstimateWithCI]
    degree: DegreeStats | None = None

    def __getitem__(self, label: str) -> EstimateWithCI:
        return self.estimates[label]


@dataclass(frozen=True)
class PrefixEvents:
    """Exact P(C_r), P(B_{n,r}) and P(A_{n,r}) for the node set {0..r-1}."""

    connected: ExactProb
    isolated: ExactProb
    both: ExactProb


@dataclass(frozen=True)
class OracleResult:
    n: int
    theta: Theta
    assignments: int
    p_connected: ExactProb
    p_no_isolated: ExactProb
    p_events: dict[int, PrefixEvents] | None


@dataclass(frozen=True)
class SweepRow:
    n: int
    k: int | None
    p: int | None
    requested_alpha: float
    realized_alpha: float | None
    connected: EstimateWithCI | None = None
    no_isolated: EstimateWithCI | None = None
    er_connected: EstimateWithCI | None = None
    complete_graph: bool = False
    error: str | None = None

    def csv_row(self) -> dict[str, object]:
        row: dict[str, object] = {column: "" for column in SWEEP_COLUMNS}
        row.update(n=self.n, K=_blank(self.k), P=_blank(self.p), requested_alpha=self.requested_alpha)
        row["realized_alpha"] = _blank(self.realized_alpha)
        if self.connected is not None:
            row.update(
                p_connected=self.connected.point,
                ci_low=self.connected.ci_low,
                ci_high=self.connected.ci_high,
            )
        if self.no_isolated is not None:
            row.update(
                p_no_isolated=self.no_isolated.point,
                niso_ci_low=self.no_isolated.ci_low,
                niso_ci_high=self.no_isolated.ci_high,
            )
        if self.er_connected is not None:
            row["er_p_connected"] = self.er_connected.point
        row["complete_graph"] = int(self.complete_graph)
        row["error"] = self.error or ""
        return row


@dataclass(frozen=True)
class UnionBoundReport:
    n: int
    theta: Theta
    lhs: EstimateWithCI
    per_r: dict[int, EstimateWithCI]
    rhs_point: float
    rhs_upper: float
    rhs_crude: float
    consistent: bool


@dataclass(frozen=True)
class _Chunk:
    n: int
    theta: Theta | None
    edge_p: float
    seed: Seed
    events: tuple[EventSelector, ...]
    start: int
    stop: int


def run_trials(spec: ExperimentSpec, workers: int = 1) -> TrialResults:
    """Estimate every selected event over ``spec.trials`` independent key graphs."""

    logger.info(
        "running %d trials at n=%d theta=(%d, %d) with %d worker(s)",
        spec.trials, spec.n, spec.theta.k, spec.theta.p, workers,
    )
    chunks = _chunks(spec.n, spec.theta, 0.0, spec.seed, spec.events, spec.trials, workers)
    tally = _execute(_key_graph_chunk, chunks, workers)
    return _results(spec.trials, spec.events, tally)


def er_simulate(
    n: int,
    p: float,
    trials: int,
    seed: Seed,
    events: Sequence[EventSelector] = (
        EventSelector("connected"),
        EventSelector("no-isolated"),
        EventSelector("degree"),
    ),
    workers: int = 1,
) -> TrialResults:
    """Estimate events over independent-edge graphs G(n; p)."""

    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability p={p} is outside [0, 1]")
    if n < 1 or trials < 1:
        raise ValueError(f"er_simulate needs n >= 1 and trials >= 1, got n={n} trials={trials}")
    for event in events:
        if event.kind not in ER_KINDS:
            raise ValueError(f"event {event.label} is not available for Erdos-Renyi graphs")
    events = tuple(events)
    chunks = _chunks(n, None, p, seed, events, trials, workers)
    tally = _execute(_er_chunk, chunks, workers)
    return _results(trials, events, tally)


def brute_force(n: int, theta: Theta, with_events: bool = True) -> OracleResult:
    """Exact probabilities by enumerating every ring assignment.

    Node 0's ring is fixed to the first K-subset: relabelling keys maps any
    assignment to one with that first ring and preserves every event.
    """

    if n < 1:
        raise ValueError(f"node count n={n} must be at least 1")
    assignments = math.comb(theta.p, theta.k) ** n
    if assignments > ENUMERATION_BUDGET:
        raise BudgetExceededError(
            f"C({theta.p},{theta.k})^{n} = {assignments} assignments exceeds the "
            f"enumeration budget of {ENUMERATION_BUDGET}"
        )
    rings = [_mask(keys) for keys in combinations(range(theta.p), theta.k)]
    counts = _enumerate(rings, n)
    leaves = len(rings) ** (n - 1)
    p_events = None
    if with_events:
        p_events = {
            r: PrefixEvents(
                connected=ExactProb.exact(Fraction(counts[f"c{r}"], leaves)),
                isolated=ExactProb.exact(Fraction(counts[f"b{r}"], leaves)),
                both=ExactProb.exact(Fraction(counts[f"a{r}"], leaves)),
            )
            for r in range(1, n)
        }
    return OracleResult(
        n=n,
        theta=theta,
        assignments=assignments,
        p_connected=ExactProb.exact(Fraction(counts["connected"], leaves)),
        p_no_isolated=ExactProb.exact(Fraction(counts["no-isolated"], leaves)),
        p_events=p_events,
    )


def sweep(
    base: Scaling,
    n_values: Iterable[int],
    alpha_values: Iterable[float],
    trials: int,
    seed: Seed,
    workers: int = 1,
    er: bool = True,
) -> list[SweepRow]:
    """Estimate P(connected), P(no isolated) and the matched ER P(connected) per (n, alpha) cell."""

    alpha_values = list(alpha_values)
    rows = []
    for n in n_values:
        for alpha in alpha_values:
            rows.append(_sweep_cell(base, n, alpha, trials, seed, workers, er))
    return rows


def union_bound_check(
    n: int,
    theta: Theta,
    trials: int,
    seed: Seed,
    workers: int = 1,
    max_nodes: int = UNION_CHECK_MAX_NODES,
) -> UnionBoundReport:
    """Compare P(disconnected, no isolated nodes) with the union bound over A_{n,r}."""

    if n > max_nodes:
        raise BudgetExceededError(f"union bound check is limited to n <= {max_nodes}, got {n}")
    if n < 2:
        raise ValueError(f"union bound check needs n >= 2, got {n}")
    sizes = list(range(2, n // 2 + 1))
    lhs_event = EventSelector("disconnected-no-isolated")
    a_events = [EventSelector("a-event", r=r) for r in sizes]
    spec = ExperimentSpec(n, theta, trials, seed, (lhs_event, *a_events))
    results = run_trials(spec, workers)
    per_r = {event.r: results[event.label] for event in a_events}
    rhs_point = union_bound_rhs(n, theta, {r: est.point for r, est in per_r.items()})
    rhs_upper = union_bound_rhs(n, theta, {r: est.ci_high for r, est in per_r.items()})
    rhs_crude = union_bound_rhs(
        n, theta, {r: min(1.0, exp_or_inf(crude_a_bound(n, r, theta))) for r in sizes}
    )
    lhs = results[lhs_event.label]
    return UnionBoundReport(
        n=n,
        theta=theta,
        lhs=lhs,
        per_r=per_r,
        rhs_point=rhs_point,
        rhs_upper=rhs_upper,
        rhs_crude=rhs_crude,
        consistent=lhs.ci_low <= rhs_upper,
    )


def _sweep_cell(
    base: Scaling, n: int, alpha: float, trials: int, seed: Seed, workers: int, er: bool
) -> SweepRow:
    p: int | None = None
    try:
        p = base.pool_rule(n)
        k, realized = k_from_alpha(n, p, alpha)
        theta = Theta(k, p)
    except ValueError as exc:
        logger.info("sweep cell n=%d alpha=%g skipped: %s", n, alpha, exc)
        return SweepRow(n=n, k=None, p=p, requested_alpha=alpha, realized_alpha=None, error=str(exc))
    logger.info("sweep cell n=%d K=%d P=%d realized alpha=%.4f", n, k, p, realized)
    spec = ExperimentSpec(n, theta, trials, seed.child(KEY_GRAPH_STREAM, n, k, p))
    results = run_trials(spec, workers)
    er_connected = None
    if er:
        er_results = er_simulate(
            n,
            edge_prob(theta).value,
            trials,
            seed.child(ER_STREAM, n, k, p),
            events=(EventSelector("connected"),),
            workers=workers,
        )
        er_connected = er_results["connected"]
    return SweepRow(
        n=n,
        k=k,
        p=p,
        requested_alpha=alpha,
        realized_alpha=realized,
        connected=results["connected"],
        no_isolated=results["no-isolated"],
        er_connected=er_connected,
        complete_graph=theta.complete,
    )


def _chunks(
    n: int,
    theta: Theta | None,
    edge_p: float,
    seed: Seed,
    events: tuple[EventSelector, ...],
    trials: int,
    workers: int,
) -> list[_Chunk]:
    size = max(1, math.ceil(trials / (max(1, workers) * 4)))
    return [
        _Chunk(n, theta, edge_p, seed, events, start, min(start + size, trials))
        for start in range(0, trials, size)
    ]


def _execute(task: Callable[[_Chunk], Counter], chunks: list[_Chunk], workers: int) -> Counter:
    total: Counter = Counter()
    if workers <= 1 or len(chunks) == 1:
        for chunk in chunks:
            total.update(task(chunk))
        return total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(task, chunks):
            total.update(part)
    return total


def _key_graph_chunk(chunk: _Chunk) -> Counter:
    tally: Counter = Counter()
    for trial in range(chunk.start, chunk.stop):
        g = sample_graph(chunk.n, chunk.theta, chunk.seed.child(trial).generator())
        for event in chunk.events:
            if event.kind == "degree":
                _add_degree(tally, g.degree(0))
            else:
                tally[event.label] += int(event.evaluate(g))
    return tally


def _er_chunk(chunk: _Chunk) -> Counter:
    tally: Counter = Counter()
    n = chunk.n
    pairs = n * (n - 1) // 2
    rows = np.arange(n)
    row_start = rows * n - rows * (rows + 1) // 2
    for trial in range(chunk.start, chunk.stop):
        rng = chunk.seed.child(trial).generator()
        count = int(rng.binomial(pairs, chunk.edge_p)) if pairs else 0
        picked = rng.choice(pairs, size=count, replace=False) if count else np.empty(0, np.int64)
        heads = np.searchsorted(row_start, picked, side="right") - 1
        tails = picked - row_start[heads] + heads + 1
        degrees = np.bincount(np.concatenate([heads, tails]), minlength=n)
        no_isolated = n == 1 or bool((degrees > 0).all())
        forest = UnionFind(n)
        for head, tail in zip(heads.tolist(), tails.tolist()):
            forest.union(head, tail)
        connected = forest.count == 1
        for event in chunk.events:
            if event.kind == "connected":
                tally[event.label] += int(connected)
            elif event.kind == "no-isolated":
                tally[event.label] += int(no_isolated)
            elif event.kind == "disconnected-no-isolated":
                tally[event.label] += int(no_isolated and not connected)
            else:
                _add_degree(tally, int(degrees[0]))
    return tally


def _add_degree(tally: Counter, degree: int) -> None:
    tally[_DEGREE_SUM] += degree
    tally[_DEGREE_SQUARES] += degree * degree


def _results(trials: int, events: Sequence[EventSelector], tally: Counter) -> TrialResults:
    estimates = {}
    degree = None
    for event in events:
        if event.kind == "degree":
            degree = DegreeStats.from_sums(trials, tally[_DEGREE_SUM], tally[_DEGREE_SQUARES])
        else:
            estimates[event.label] = EstimateWithCI.wilson(tally[event.label], trials)
    return TrialResults(trials=trials, estimates=estimates, degree=degree)


def _enumerate(rings: list[int], n: int) -> Counter:
    counts: Counter = Counter()
    chosen = [rings[0]] + [0] * (n - 1)
    prefix_connected = [True] * n

    def place(depth: int, labels: tuple[int, ...], touched: int, groups: int) -> None:
        if depth == n:
            _score_leaf(counts, chosen, prefix_connected, touched, groups, n)
            return
        for ring in rings:
            chosen[depth] = ring
            hits = {labels[i] for i in range(depth) if chosen[i] & ring}
            if hits:
                keep = min(hits)
                merged = tuple(keep if label in hits else label for label in labels)
                new_touched = touched | (1 << depth)
                for i in range(depth):
                    if chosen[i] & ring:
                        new_touched |= 1 << i
                new_groups = groups - len(hits) + 1
            else:
                keep = depth
                merged = labels
                new_touched = touched
                new_groups = groups + 1
            prefix_connected[depth] = new_groups == 1
            place(depth + 1, merged + (keep,), new_touched, new_groups)

    place(1, (0,), 0, 1)
    return counts


def _score_leaf(
    counts: Counter,
    chosen: list[int],
    prefix_connected: list[bool],
    touched: int,
    groups: int,
    n: int,
) -> None:
    if groups == 1:
        counts["connected"] += 1
    if n == 1 or touched == (1 << n) - 1:
        counts["no-isolated"] += 1
    suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] | chosen[i]
    union = 0
    for r in range(1, n):
        union |= chosen[r - 1]
        connected = prefix_connected[r - 1]
        isolated = union & suffix[r] == 0
        counts[f"c{r}"] += connected
        counts[f"b{r}"] += isolated
        counts[f"a{r}"] += connected and isolated


def _mask(keys: Iterable[int]) -> int:
    bits = 0
    for key in keys:
        bits |= 1 << key
    return bits


def _parse_nodes(text: str) -> NodeSet:
    try:
        members = [int(token) for token in text.split(",") if token.strip()]
    except ValueError as exc:
        raise ValueError(f"node list {text!r} is not a comma-separated list of integers") from exc
    if len(set(members)) != len(members):
        raise ValueError(f"node list {text!r} repeats a node")
    return NodeSet.of(members)


def _format_nodes(nodes: NodeSet) -> str:
    return ",".join(str(member) for member in nodes.members)


def _blank(value: object) -> object:
    return "" if value is None else value
