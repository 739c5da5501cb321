"""Exact and log-space evaluation of the closed-form probabilities and finite-n bounds.

Pool sizes up to ``EXACT_THRESHOLD`` are evaluated with big-integer
rationals; larger pools use product forms and log-gamma in log space.
Natural logarithms throughout.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import logging
import math
from typing import Mapping, NamedTuple

import numpy as np
from scipy import special, stats

from .model import Theta

logger = logging.getLogger(__name__)

EXACT_THRESHOLD = 64
PMF_FLOOR = 1e-300
_SMALL_CHOICE = 256


@dataclass(frozen=True)
class ExactProb:
    """A probability carried as float, natural log and (when available) rational."""

    value: float
    log_value: float
    rational: Fraction | None = None

    @classmethod
    def exact(cls, rational: Fraction | int) -> ExactProb:
        rational = Fraction(rational)
        if rational < 0:
            raise ValueError(f"probability {rational} is negative")
        if rational == 0:
            return cls(0.0, -math.inf, rational)
        value = float(rational)
        if value > 1e-300:
            log_value = math.log(value)
        else:
            log_value = math.log(rational.numerator) - math.log(rational.denominator)
        return cls(value, log_value, rational)

    @classmethod
    def from_log(cls, log_value: float) -> ExactProb:
        if log_value == -math.inf:
            return cls(0.0, -math.inf)
        return cls(math.exp(log_value), float(log_value))

    @property
    def is_exact(self) -> bool:
        return self.rational is not None

    def complement(self) -> ExactProb:
        if self.rational is not None:
            return ExactProb.exact(1 - self.rational)
        return ExactProb.from_log(_log1mexp(self.log_value))

    def __float__(self) -> float:
        return self.value


class RatioBounds(NamedTuple):
    lower: float
    exp_upper: float
    upper: float


class OneMinusQBounds(NamedTuple):
    lower: float
    upper: float


class TailBounds(NamedTuple):
    tight: float
    loose: float


class RThreshold(NamedTuple):
    r_of_theta: int
    r_n: int


@dataclass(frozen=True)
class UrDistribution:
    """Exact law of U_r, the number of distinct keys held by r nodes."""

    theta: Theta
    r: int
    pmf: dict[int, ExactProb]

    @property
    def support(self) -> list[int]:
        return sorted(self.pmf)

    @property
    def is_exact(self) -> bool:
        return all(prob.is_exact for prob in self.pmf.values())

    def total(self) -> ExactProb:
        return _sum_probs(self.pmf.values(), self.is_exact)

    def cdf(self, x: int) -> ExactProb:
        """P(U_r <= x)."""

        return _sum_probs((prob for u, prob in self.pmf.items() if u <= x), self.is_exact)


def exp_or_inf(log_value: float) -> float:
    """exp(log_value), or inf where the float range overflows."""

    try:
        return math.exp(log_value)
    except OverflowError:
        return math.inf


@lru_cache(maxsize=1 << 16)
def log_binomial(n: int, k: int, exact_threshold: int = EXACT_THRESHOLD) -> float:
    """Natural log of C(n, k); -inf when k > n."""

    if n < 0 or k < 0:
        raise ValueError(f"log_binomial needs non-negative arguments, got ({n}, {k})")
    if k > n:
        return -math.inf
    k = min(k, n - k)
    if n <= exact_threshold or k <= _SMALL_CHOICE:
        return math.log(math.comb(n, k))
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def ring_avoid_prob(
    p: int, l: int, k: int, exact_threshold: int = EXACT_THRESHOLD
) -> ExactProb:
    """Probability C(p-l, k) / C(p, k) that a ring avoids a fixed l-subset."""

    if p < 0 or l < 0 or k < 0:
        raise ValueError(f"ring_avoid_prob needs non-negative arguments, got ({p}, {l}, {k})")
    if l > p - k:
        return ExactProb.exact(0)
    if p <= exact_threshold:
        return ExactProb.exact(Fraction(math.comb(p - l, k), math.comb(p, k)))
    return ExactProb.from_log(_log_avoid(p, l, k))


def q_theta(theta: Theta, exact_threshold: int = EXACT_THRESHOLD) -> ExactProb:
    """Probability that two independent rings are disjoint (0 when P < 2K)."""

    if theta.complete:
        return ExactProb.exact(0)
    return ring_avoid_prob(theta.p, theta.k, theta.k, exact_threshold)


def edge_prob(theta: Theta, exact_threshold: int = EXACT_THRESHOLD) -> ExactProb:
    """1 - q(theta), the probability that two given nodes are adjacent."""

    return q_theta(theta, exact_threshold).complement()


def ratio_bounds(p: int, l: int, k: int) -> RatioBounds:
    """Lower, exponential and power bounds around C(p-l, k) / C(p, k)."""

    if p < 1 or l < 0 or k < 1:
        raise ValueError(f"ratio_bounds needs p >= 1, l >= 0, k >= 1, got ({p}, {l}, {k})")
    if k + l > p:
        raise ValueError(f"ratio_bounds needs k + l <= p, got k={k} l={l} p={p}")
    if l == 0:
        return RatioBounds(1.0, 1.0, 1.0)
    return RatioBounds(
        lower=(1.0 - l / (p - k)) ** k,
        exp_upper=math.exp(-k * l / p),
        upper=(1.0 - l / p) ** k,
    )


def one_minus_q_bounds(theta: Theta) -> OneMinusQBounds:
    """Bounds 1 - exp(-K^2/P) <= 1 - q(theta) <= K^2/(P-K)."""

    _require_double_ring(theta)
    k, p = theta.k, theta.p
    return OneMinusQBounds(lower=-math.expm1(-k * k / p), upper=k * k / (p - k))


def one_minus_q_middle_bound(theta: Theta) -> float:
    """The bound 1 - (1 - K/(P-K))^K, between 1 - q(theta) and K^2/(P-K)."""

    _require_double_ring(theta)
    k, p = theta.k, theta.p
    return 1.0 - (1.0 - k / (p - k)) ** k


def ur_distribution(
    theta: Theta, r: int, exact_threshold: int = EXACT_THRESHOLD
) -> UrDistribution:
    """Exact pmf of U_r by forward hypergeometric recursion over r."""

    if r < 1:
        raise ValueError(f"ur_distribution needs r >= 1, got {r}")
    if theta.p <= exact_threshold:
        pmf = {u: ExactProb.exact(w) for u, w in _ur_rational(theta, r).items()}
    else:
        pmf = {u: ExactProb.from_log(math.log(w)) for u, w in _ur_float(theta, r).items()}
    return UrDistribution(theta=theta, r=r, pmf=pmf)


def isolation_prob(
    n: int, r: int, theta: Theta, exact_threshold: int = EXACT_THRESHOLD
) -> ExactProb:
    """Exact probability that nodes 0..r-1 share no key with the other n - r nodes."""

    if not 1 <= r < n:
        raise ValueError(f"isolation_prob needs 1 <= r < n, got r={r} n={n}")
    dist = ur_distribution(theta, r, exact_threshold)
    rest = n - r
    if dist.is_exact:
        total = Fraction(0)
        for u, prob in dist.pmf.items():
            avoid = ring_avoid_prob(theta.p, u, theta.k, exact_threshold)
            if avoid.rational:
                total += prob.rational * avoid.rational**rest
        return ExactProb.exact(total)
    terms = []
    for u, prob in dist.pmf.items():
        avoid = ring_avoid_prob(theta.p, u, theta.k, exact_threshold)
        if avoid.log_value > -math.inf:
            terms.append(prob.log_value + rest * avoid.log_value)
    if not terms:
        return ExactProb.exact(0)
    return ExactProb.from_log(float(special.logsumexp(terms)))


def tree_prob(theta: Theta, r: int, exact_threshold: int = EXACT_THRESHOLD) -> ExactProb:
    """Probability (1 - q)^(r-1) that a fixed spanning tree on r nodes is present."""

    if r < 1:
        raise ValueError(f"tree_prob needs r >= 1, got {r}")
    edge = edge_prob(theta, exact_threshold)
    if edge.rational is not None:
        return ExactProb.exact(edge.rational ** (r - 1))
    return ExactProb.from_log((r - 1) * edge.log_value)


def cayley_bound(theta: Theta, r: int, exact_threshold: int = EXACT_THRESHOLD) -> float:
    """Log of r^(r-2) (1 - q)^(r-1), an upper bound on P(C_r)."""

    if r < 2:
        raise ValueError(f"cayley_bound needs r >= 2, got {r}")
    edge = edge_prob(theta, exact_threshold)
    return (r - 2) * math.log(r) + (r - 1) * edge.log_value


def crude_a_bound(
    n: int, r: int, theta: Theta, exact_threshold: int = EXACT_THRESHOLD
) -> float:
    """Log of the Cayley bound times exp(-(n - r) K^2 / P), bounding P(A_{n,r})."""

    if not 2 <= r < n:
        raise ValueError(f"crude_a_bound needs 2 <= r < n, got r={r} n={n}")
    return cayley_bound(theta, r, exact_threshold) - (n - r) * theta.k**2 / theta.p


def ur_tail_bound(theta: Theta, r: int, x: int) -> TailBounds:
    """Log-space upper bounds on P(U_r <= x): the subset union bound and its looser power form."""

    if r < 1:
        raise ValueError(f"ur_tail_bound needs r >= 1, got {r}")
    k, p = theta.k, theta.p
    if x < k:
        return TailBounds(-math.inf, -math.inf)
    if x > min(r * k, p):
        raise ValueError(f"x={x} exceeds min(rK, P)={min(r * k, p)}")
    head = log_binomial(p, x)
    tight = head + r * _log_avoid(p, p - x, k)
    loose = head + r * k * math.log1p(-(p - x) / p)
    return TailBounds(tight=tight, loose=loose)


def scaled_tail_bound(theta: Theta, n: int, r: int, x: int, sigma: float) -> float:
    """Log of C(floor(P/sigma), r) C(P, x) (x/P)^(rK), dominating C(n, r) P(U_r <= x)."""

    if sigma <= 0 or sigma * n > theta.p:
        raise ValueError(f"scaled_tail_bound needs sigma > 0 and sigma*n <= P, got sigma={sigma}")
    loose = ur_tail_bound(theta, r, x).loose
    if loose == -math.inf:
        return loose
    return log_binomial(int(theta.p // sigma), r) + loose


def decomposition_bound(
    n: int,
    r: int,
    theta: Theta,
    x: int,
    prob_er: ExactProb | float,
    prob_cr: ExactProb | float,
) -> float:
    """Upper bound on P(A_{n,r}) from P(U_r <= x) and P(C_r) (or bounds on them)."""

    if not 1 <= r < n:
        raise ValueError(f"decomposition_bound needs 1 <= r < n, got r={r} n={n}")
    if x < 1:
        raise ValueError(f"decomposition_bound needs a positive x, got {x}")
    er, cr = float(prob_er), float(prob_cr)
    for name, value in (("prob_er", er), ("prob_cr", cr)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name}={value} is not a probability")
    k, p = theta.k, theta.p
    return er * math.exp(-(n - r) * k * k / p) + cr * math.exp(-(n - r) * (k / p) * (x + 1))


def r_threshold(theta: Theta, n: int) -> RThreshold:
    """r(theta) = floor(P/K) - 1 and r_n(theta) = min(r(theta), floor(n/2))."""

    if n < 2:
        raise ValueError(f"r_threshold needs n >= 2, got {n}")
    r_of_theta = theta.p // theta.k - 1
    return RThreshold(r_of_theta, min(r_of_theta, n // 2))


def union_bound_rhs(n: int, theta: Theta, prob_a: Mapping[int, float]) -> float:
    """Sum over r = 2..floor(n/2) of C(n, r) prob_a[r], accumulated in log space."""

    terms = []
    for r in range(2, n // 2 + 1):
        if r not in prob_a:
            raise ValueError(f"prob_a is missing an entry for r={r}")
        value = float(prob_a[r])
        if value < 0.0:
            raise ValueError(f"prob_a[{r}]={value} is negative")
        if value > 0.0:
            terms.append(log_binomial(n, r) + math.log(value))
    logger.debug("union bound at n=%d theta=%s over %d terms", n, theta, len(terms))
    if not terms:
        return 0.0
    return exp_or_inf(float(special.logsumexp(terms)))


def one_key_connect_prob(n: int, p: int) -> ExactProb:
    """P(K(n; (1, P)) is connected) = P^-(n-1): every node must draw the same key."""

    if n < 1 or p < 1:
        raise ValueError(f"one_key_connect_prob needs n >= 1 and p >= 1, got ({n}, {p})")
    return ExactProb.exact(Fraction(1, p ** (n - 1)))


def _ur_rational(theta: Theta, r: int) -> dict[int, Fraction]:
    k, p = theta.k, theta.p
    total = math.comb(p, k)
    pmf: dict[int, Fraction] = {k: Fraction(1)}
    for _ in range(r - 1):
        step: dict[int, Fraction] = defaultdict(Fraction)
        for u, weight in pmf.items():
            for j in range(max(0, k - (p - u)), min(k, u) + 1):
                ways = math.comb(u, j) * math.comb(p - u, k - j)
                step[u + k - j] += weight * Fraction(ways, total)
        pmf = dict(step)
    return pmf


def _ur_float(theta: Theta, r: int) -> dict[int, float]:
    k, p = theta.k, theta.p
    pmf: dict[int, float] = {k: 1.0}
    for _ in range(r - 1):
        step: dict[int, float] = defaultdict(float)
        for u, weight in pmf.items():
            overlaps = np.arange(max(0, k - (p - u)), min(k, u) + 1)
            probs = stats.hypergeom.pmf(overlaps, p, u, k)
            for j, prob in zip(overlaps.tolist(), probs.tolist()):
                step[u + k - j] += weight * prob
        pmf = {u: w for u, w in step.items() if w >= PMF_FLOOR}
    return pmf


def _log_avoid(p: int, l: int, k: int) -> float:
    if l > p - k:
        return -math.inf
    if l == 0:
        return 0.0
    steps = p - np.arange(k, dtype=np.float64)
    return math.fsum(np.log1p(-l / steps).tolist())


def _log1mexp(log_value: float) -> float:
    if log_value == 0.0:
        return -math.inf
    if log_value > -math.log(2.0):
        return math.log(-math.expm1(log_value))
    return math.log1p(-math.exp(log_value))


def _sum_probs(probs, exact: bool) -> ExactProb:
    probs = list(probs)
    if exact:
        return ExactProb.exact(sum((prob.rational for prob in probs), Fraction(0)))
    logs = [prob.log_value for prob in probs if prob.log_value > -math.inf]
    if not logs:
        return ExactProb.exact(0)
    return ExactProb.from_log(min(0.0, float(special.logsumexp(logs))))


def _require_double_ring(theta: Theta) -> None:
    if 2 * theta.k > theta.p:
        raise ValueError(f"bound needs 2K <= P, got K={theta.k} P={theta.p}")
