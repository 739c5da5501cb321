"""Inequality audit over a parameter grid.

Every check produces one ``AuditRow`` with a left-hand side that must not
exceed its right-hand side. Violations are reported, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
import logging
import math
from typing import Any, Iterator

from .analysis import NodeSet
from .combinatorics import (
    cayley_bound,
    decomposition_bound,
    edge_prob,
    exp_or_inf,
    one_minus_q_bounds,
    one_minus_q_middle_bound,
    ratio_bounds,
    ring_avoid_prob,
    ur_distribution,
    ur_tail_bound,
)
from .model import Seed, Theta
from .montecarlo import EventSelector, ExperimentSpec, brute_force, run_trials

logger = logging.getLogger(__name__)

REL_TOLERANCE = 1e-9
SE_SLACK = 3.0

DECOMPOSITION_N = 10
DECOMPOSITION_R = 2
DECOMPOSITION_X = 3
CAYLEY_MC_SIZES = (2, 3, 4, 5)
EXACT_AUDIT_LEAVES = 5_000


@dataclass(frozen=True)
class AuditGrid:
    k_values: range = range(1, 7)
    l_values: range = range(0, 7)
    p_values: range = range(2, 41)
    r_values: range = range(1, 7)
    exact_pool_max: int = 8
    exact_nodes_max: int = 5
    mc_thetas: tuple[Theta, ...] = (Theta(2, 10),)
    mc_trials: int = 0
    seed: Seed = Seed(0)
    workers: int = 1

    def __post_init__(self) -> None:
        if min(self.k_values, default=1) < 1 or min(self.r_values, default=1) < 1:
            raise ValueError("audit ring sizes and subset sizes must be at least 1")
        if min(self.l_values, default=0) < 0:
            raise ValueError("audit avoided-set sizes must be non-negative")
        if min(self.p_values, default=1) < 1:
            raise ValueError("audit pool sizes must be at least 1")
        if self.mc_trials < 0:
            raise ValueError(f"audit trials={self.mc_trials} must be non-negative")

    def thetas(self) -> Iterator[Theta]:
        for p in self.p_values:
            for k in self.k_values:
                if k <= p:
                    yield Theta(k, p)


@dataclass(frozen=True)
class AuditRow:
    check: str
    params: dict[str, Any]
    lhs: float
    rhs: float
    ok: bool
    tight: bool


@dataclass(frozen=True)
class AuditReport:
    rows: list[AuditRow] = field(default_factory=list)

    @property
    def violations(self) -> list[AuditRow]:
        return [row for row in self.rows if not row.ok]

    def summary(self) -> dict[str, Any]:
        per_check: dict[str, int] = {}
        for row in self.rows:
            per_check[row.check] = per_check.get(row.check, 0) + 1
        return {
            "rows": len(self.rows),
            "violations": len(self.violations),
            "tight": sum(row.tight for row in self.rows),
            "per_check": per_check,
        }


def run_audit(grid: AuditGrid = AuditGrid()) -> AuditReport:
    """Evaluate every inequality on the grid and collect one row per comparison."""

    rows: list[AuditRow] = []
    rows.extend(_ratio_rows(grid))
    rows.extend(_edge_rows(grid))
    rows.extend(_tail_rows(grid))
    rows.extend(_exact_rows(grid))
    if grid.mc_trials:
        for theta in grid.mc_thetas:
            rows.extend(_monte_carlo_rows(theta, grid))
    report = AuditReport(rows)
    logger.info("audit finished: %s", report.summary())
    return report


def _row(check: str, lhs: float, rhs: float, **params: Any) -> AuditRow:
    slack = REL_TOLERANCE * max(abs(lhs), abs(rhs), 1e-300)
    return AuditRow(
        check=check,
        params=params,
        lhs=lhs,
        rhs=rhs,
        ok=lhs <= rhs + slack,
        tight=math.isclose(lhs, rhs, rel_tol=REL_TOLERANCE, abs_tol=1e-300),
    )


def _ratio_rows(grid: AuditGrid) -> Iterator[AuditRow]:
    for theta in grid.thetas():
        k, p = theta.k, theta.p
        for l in grid.l_values:
            if k + l > p:
                continue
            value = ring_avoid_prob(p, l, k).value
            bounds = ratio_bounds(p, l, k)
            yield _row("ratio-lower", bounds.lower, value, p=p, l=l, k=k)
            yield _row("ratio-upper", value, bounds.upper, p=p, l=l, k=k)
            yield _row("ratio-exp", value, bounds.exp_upper, p=p, l=l, k=k)


def _edge_rows(grid: AuditGrid) -> Iterator[AuditRow]:
    for theta in grid.thetas():
        if theta.complete:
            continue
        value = edge_prob(theta).value
        bounds = one_minus_q_bounds(theta)
        middle = one_minus_q_middle_bound(theta)
        yield _row("edge-lower", bounds.lower, value, k=theta.k, p=theta.p)
        yield _row("edge-middle", value, middle, k=theta.k, p=theta.p)
        yield _row("edge-upper", middle, bounds.upper, k=theta.k, p=theta.p)


def _tail_rows(grid: AuditGrid) -> Iterator[AuditRow]:
    for theta in grid.thetas():
        for r in grid.r_values:
            dist = ur_distribution(theta, r)
            cumulative = Fraction(0)
            cdf = {}
            for u in dist.support:
                cumulative += dist.pmf[u].rational if dist.is_exact else Fraction(dist.pmf[u].value)
                cdf[u] = cumulative
            running = Fraction(0)
            for x in range(theta.k, min(r * theta.k, theta.p) + 1):
                running = cdf.get(x, running)
                bounds = ur_tail_bound(theta, r, x)
                tight, loose = exp_or_inf(bounds.tight), exp_or_inf(bounds.loose)
                params = dict(k=theta.k, p=theta.p, r=r, x=x)
                yield _row("tail-exact", float(running), tight, **params)
                yield _row("tail-loose", tight, loose, **params)


def _exact_rows(grid: AuditGrid) -> Iterator[AuditRow]:
    for theta in grid.thetas():
        n = _exact_nodes(theta, grid)
        if n is None:
            continue
        oracle = brute_force(n, theta)
        for r in grid.r_values:
            if r >= n:
                continue
            events = oracle.p_events[r]
            base = dict(k=theta.k, p=theta.p, n=n, r=r)
            if r >= 2:
                yield _row(
                    "cayley-exact",
                    events.connected.value,
                    exp_or_inf(cayley_bound(theta, r)),
                    **base,
                )
            dist = ur_distribution(theta, r)
            for x in range(theta.k, min(r * theta.k, theta.p) + 1):
                bound = decomposition_bound(n, r, theta, x, dist.cdf(x), events.connected)
                yield _row("decomposition-exact", events.both.value, bound, x=x, **base)


def _exact_nodes(theta: Theta, grid: AuditGrid) -> int | None:
    """Largest node count whose enumeration stays within the audit leaf budget."""

    if theta.p > grid.exact_pool_max:
        return None
    rings = math.comb(theta.p, theta.k)
    fits = [n for n in range(3, grid.exact_nodes_max + 1) if rings ** (n - 1) <= EXACT_AUDIT_LEAVES]
    return max(fits, default=None)


def _monte_carlo_rows(theta: Theta, grid: AuditGrid) -> Iterator[AuditRow]:
    n = DECOMPOSITION_N
    connected = [
        EventSelector("subset-connected", nodes=NodeSet.prefix(r)) for r in CAYLEY_MC_SIZES
    ]
    both = EventSelector("a-event", r=DECOMPOSITION_R)
    spec = ExperimentSpec(
        n, theta, grid.mc_trials, grid.seed.child(theta.k, theta.p), (*connected, both)
    )
    results = run_trials(spec, grid.workers)
    base = dict(k=theta.k, p=theta.p, n=n, trials=grid.mc_trials)
    for r, event in zip(CAYLEY_MC_SIZES, connected):
        est = results[event.label]
        yield _row(
            "cayley-mc",
            est.point - SE_SLACK * est.std_error,
            exp_or_inf(cayley_bound(theta, r)),
            r=r,
            **base,
        )
    est = results[both.label]
    prob_er = ur_distribution(theta, DECOMPOSITION_R).cdf(DECOMPOSITION_X)
    prob_cr = results[connected[CAYLEY_MC_SIZES.index(DECOMPOSITION_R)].label].ci_high
    yield _row(
        "decomposition-mc",
        est.point - SE_SLACK * est.std_error,
        decomposition_bound(n, DECOMPOSITION_R, theta, DECOMPOSITION_X, prob_er, prob_cr),
        r=DECOMPOSITION_R,
        x=DECOMPOSITION_X,
        **base,
    )
