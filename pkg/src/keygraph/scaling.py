"""Parameter scalings (K_n, P_n), the deviation function and admissibility reports."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Union

from .combinatorics import EXACT_THRESHOLD, ExactProb, edge_prob
from .model import Theta

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = (100, 1_000, 10_000, 100_000)


class KChoice(NamedTuple):
    k: int
    realized_alpha: float


@dataclass(frozen=True)
class LinearPool:
    """P_n = ceil(c * n)."""

    c: float
    kind: str = field(default="linear", init=False)

    def __call__(self, n: int) -> int:
        return math.ceil(self.c * n)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True)
class ConstantPool:
    p: int
    kind: str = field(default="constant", init=False)

    def __call__(self, n: int) -> int:
        return self.p

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True)
class TablePool:
    values: Mapping[int, int]
    kind: str = field(default="table", init=False)

    def __call__(self, n: int) -> int:
        return _table_lookup(self.values, n, "pool")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "values": {str(n): p for n, p in self.values.items()}}


@dataclass(frozen=True)
class AlphaRing:
    """K_n = k_from_alpha(n, P_n, alpha) for a constant target deviation."""

    alpha: float
    kind: str = field(default="alpha", init=False)

    def __call__(self, n: int, p: int) -> int:
        return k_from_alpha(n, p, self.alpha).k

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "alpha": self.alpha}


@dataclass(frozen=True)
class PowerAlphaRing:
    """K_n = k_from_alpha(n, P_n, coeff * n**exponent)."""

    coeff: float
    exponent: float
    kind: str = field(default="power", init=False)

    def target(self, n: int) -> float:
        return self.coeff * n**self.exponent

    def __call__(self, n: int, p: int) -> int:
        return k_from_alpha(n, p, self.target(n)).k

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "coeff": self.coeff, "exponent": self.exponent}


@dataclass(frozen=True)
class ErAlphaRing:
    """K_n from the exact matching n (1 - q(theta_n)) = log n + alpha."""

    alpha: float
    kind: str = field(default="er-alpha", init=False)

    def __call__(self, n: int, p: int) -> int:
        return k_from_er_alpha(n, p, self.alpha).k

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "alpha": self.alpha}


@dataclass(frozen=True)
class TableRing:
    values: Mapping[int, int]
    kind: str = field(default="table", init=False)

    def __call__(self, n: int, p: int) -> int:
        return _table_lookup(self.values, n, "ring")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "values": {str(n): k for n, k in self.values.items()}}


@dataclass(frozen=True)
class ReducedRing:
    """Ring rule with the deviation of ``base`` capped at log n, rounded up."""

    base: RingRule
    kind: str = field(default="reduced", init=False)

    def __call__(self, n: int, p: int) -> int:
        k = self.base(n, p)
        alpha_star = min(_deviation(n, k, p), math.log(n))
        return k_from_alpha(n, p, alpha_star).k

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "base": self.base.to_dict()}


PoolRule = Union[LinearPool, ConstantPool, TablePool]
RingRule = Union[AlphaRing, PowerAlphaRing, ErAlphaRing, TableRing, ReducedRing]


@dataclass(frozen=True)
class Scaling:
    """A pair of rules n -> P_n and (n, P_n) -> K_n."""

    pool_rule: PoolRule
    ring_rule: RingRule

    def evaluate(self, n: int) -> tuple[int, int]:
        """Return (K_n, P_n) without checking K_n <= P_n."""

        p = self.pool_rule(n)
        return self.ring_rule(n, p), p

    def theta(self, n: int) -> Theta:
        k, p = self.evaluate(n)
        return Theta(k, p)

    def to_dict(self) -> dict[str, Any]:
        return {"pool": self.pool_rule.to_dict(), "ring": self.ring_rule.to_dict()}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> Scaling:
        if "pool" not in payload or "ring" not in payload:
            raise ValueError("scaling config needs both 'pool' and 'ring' entries")
        try:
            return cls(
                pool_rule=_pool_from_dict(payload["pool"]),
                ring_rule=_ring_from_dict(payload["ring"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"scaling config is missing or mistypes a field: {exc}") from exc

    @classmethod
    def load(cls, path: Path) -> Scaling:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"scaling config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


@dataclass(frozen=True)
class DeviationReport:
    """Per-n admissibility diagnostics for a scaling."""

    n: int
    k: int
    p: int
    alpha: float
    realized_ratio: float
    k_over_p: float
    admissible: bool
    ring_fits: bool
    double_ring: bool
    sigma_floor: bool | None
    strongly_admissible_window: bool


@dataclass(frozen=True)
class WindowTrends:
    alpha_increasing: bool
    alpha_over_n_decreasing: bool
    ratio_decreasing: bool


@dataclass(frozen=True)
class Classification:
    rows: list[DeviationReport]
    trends: WindowTrends


@dataclass(frozen=True)
class ReductionReport:
    n: int
    p: int
    k: int
    alpha: float
    alpha_star: float
    k_reduced: int | None
    alpha_tilde: float | None
    k_ok: bool
    alpha_ok: bool
    note: str | None = None


@dataclass(frozen=True)
class Reduction:
    scaling: Scaling
    reports: list[ReductionReport]


def deviation(n: int, theta: Theta) -> float:
    """alpha = n K^2 / P - log n."""

    if n < 2:
        raise ValueError(f"deviation needs n >= 2, got {n}")
    return _deviation(n, theta.k, theta.p)


def er_deviation(n: int, theta: Theta, exact_threshold: int = EXACT_THRESHOLD) -> float:
    """n (1 - q(theta)) - log n, the deviation of the matched Erdos-Renyi scaling."""

    if n < 2:
        raise ValueError(f"er_deviation needs n >= 2, got {n}")
    return n * edge_prob(theta, exact_threshold).value - math.log(n)


def k_from_alpha(n: int, p: int, alpha: float) -> KChoice:
    """Smallest ring size whose deviation reaches ``alpha`` (ceil of the real solution, at least 1)."""

    if n < 2 or p < 1:
        raise ValueError(f"k_from_alpha needs n >= 2 and p >= 1, got n={n} p={p}")
    radicand = math.log(n) + alpha
    if radicand <= 0:
        raise ValueError(f"log n + alpha = {radicand:.6g} must be positive")
    k = max(1, math.ceil(math.sqrt(p * radicand / n)))
    # settle float noise in the root against the deviation itself
    while k > 1 and _deviation(n, k - 1, p) >= alpha:
        k -= 1
    while _deviation(n, k, p) < alpha:
        k += 1
    return KChoice(k, _deviation(n, k, p))


def k_from_er_alpha(n: int, p: int, alpha: float) -> KChoice:
    """Smallest ring size with n (1 - q(K, P)) - log n >= alpha."""

    if n < 2 or p < 1:
        raise ValueError(f"k_from_er_alpha needs n >= 2 and p >= 1, got n={n} p={p}")
    target = (math.log(n) + alpha) / n
    if target > 1.0:
        raise ValueError(f"edge probability target {target:.6g} exceeds 1")
    lo, hi = 1, p
    while lo < hi:
        mid = (lo + hi) // 2
        if edge_prob(Theta(mid, p)).value >= target:
            hi = mid
        else:
            lo = mid + 1
    theta = Theta(lo, p)
    return KChoice(lo, er_deviation(n, theta))


def matched_er_p(theta: Theta, exact_threshold: int = EXACT_THRESHOLD) -> ExactProb:
    """Edge probability 1 - q(theta) of the matched Erdos-Renyi graph."""

    return edge_prob(theta, exact_threshold)


def equivalence_ratio(theta: Theta) -> float:
    """(1 - q(theta)) / (K^2 / P)."""

    return edge_prob(theta).value / (theta.k**2 / theta.p)


def reduce_scaling(s: Scaling, n_values: Iterable[int] = DEFAULT_WINDOW) -> Reduction:
    """Cap the deviation at log n and report K~_n <= K_n and alpha*_n <= alpha~_n per n."""

    reduced = Scaling(pool_rule=s.pool_rule, ring_rule=ReducedRing(s.ring_rule))
    reports = []
    for n in n_values:
        k, p = s.evaluate(n)
        alpha = _deviation(n, k, p)
        alpha_star = min(alpha, math.log(n))
        try:
            k_reduced, alpha_tilde = k_from_alpha(n, p, alpha_star)
        except ValueError as exc:
            logger.info("reduction at n=%d is degenerate: %s", n, exc)
            reports.append(
                ReductionReport(n, p, k, alpha, alpha_star, None, None, False, False, str(exc))
            )
            continue
        reports.append(
            ReductionReport(
                n=n,
                p=p,
                k=k,
                alpha=alpha,
                alpha_star=alpha_star,
                k_reduced=k_reduced,
                alpha_tilde=alpha_tilde,
                k_ok=k_reduced <= k,
                alpha_ok=_at_most(alpha_star, alpha_tilde),
            )
        )
    return Reduction(scaling=reduced, reports=reports)


def classify(
    s: Scaling, n_values: Iterable[int] = DEFAULT_WINDOW, sigma: float | None = None
) -> Classification:
    """Per-n admissibility flags and finite-window trends (never asserted as limits)."""

    evaluated = []
    for n in n_values:
        k, p = s.evaluate(n)
        evaluated.append((n, k, p, _deviation(n, k, p)))
    trends = WindowTrends(
        alpha_increasing=_nondecreasing([alpha for _, _, _, alpha in evaluated]),
        alpha_over_n_decreasing=_nonincreasing([alpha / n for n, _, _, alpha in evaluated]),
        ratio_decreasing=_nonincreasing([k * k / p for _, k, p, _ in evaluated]),
    )
    rows = []
    for n, k, p, alpha in evaluated:
        admissible = k >= 2
        rows.append(
            DeviationReport(
                n=n,
                k=k,
                p=p,
                alpha=alpha,
                realized_ratio=k * k / p,
                k_over_p=k / p,
                admissible=admissible,
                ring_fits=k <= p,
                double_ring=2 * k <= p,
                sigma_floor=None if sigma is None else sigma * n <= p,
                strongly_admissible_window=admissible and trends.alpha_over_n_decreasing,
            )
        )
    return Classification(rows=rows, trends=trends)


def _deviation(n: int, k: int, p: int) -> float:
    return n * k * k / p - math.log(n)


def _at_most(a: float, b: float) -> bool:
    return a <= b or math.isclose(a, b, rel_tol=1e-8, abs_tol=1e-8)


def _nondecreasing(values: list[float]) -> bool:
    return all(b >= a for a, b in zip(values, values[1:]))


def _nonincreasing(values: list[float]) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def _table_lookup(values: Mapping[int, int], n: int, label: str) -> int:
    if n not in values:
        raise ValueError(f"{label} table has no entry for n={n}")
    return int(values[n])


def _int_table(raw: Mapping[str, Any]) -> dict[int, int]:
    return {int(n): int(value) for n, value in raw.items()}


def _pool_from_dict(payload: Mapping[str, Any]) -> PoolRule:
    kind = payload.get("kind")
    if kind == "linear":
        return LinearPool(float(payload["c"]))
    if kind == "constant":
        return ConstantPool(int(payload["p"]))
    if kind == "table":
        return TablePool(_int_table(payload["values"]))
    raise ValueError(f"unknown pool rule kind {kind!r}")


def _ring_from_dict(payload: Mapping[str, Any]) -> RingRule:
    kind = payload.get("kind")
    if kind == "alpha":
        return AlphaRing(float(payload["alpha"]))
    if kind == "power":
        return PowerAlphaRing(float(payload.get("coeff", 1.0)), float(payload["exponent"]))
    if kind == "er-alpha":
        return ErAlphaRing(float(payload["alpha"]))
    if kind == "table":
        return TableRing(_int_table(payload["values"]))
    if kind == "reduced":
        return ReducedRing(_ring_from_dict(payload["base"]))
    raise ValueError(f"unknown ring rule kind {kind!r}")
