r"""Exact and truncated Action Shapley computation.

The value of point :math:`k` over a dataset of :math:`n` points is

.. math::

    \phi_k = C_f \sum_{d \subseteq D \setminus \{k\}}
        \frac{U(d \cup \{k\}) - U(d)}{\binom{n-1}{|d|}}

where ``U`` returns a score or ``None`` when the downstream agent fails.
:func:`truncated_action_shapley` walks the subset lattice top-down and stops
once failures pile up at a cardinality level, which gives the point's cut-off
cardinality as a by-product.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Callable, Iterator, Optional, Sequence

__all__ = [
    "SubsetMask",
    "ValuationOutcome",
    "Valuation",
    "AlgoParams",
    "PointResult",
    "ShapleyReport",
    "enumerate_subsets",
    "exact_shapley",
    "truncated_action_shapley",
    "assemble_report",
    "p_comp",
    "global_cutoff",
]

MAX_POINTS = 30

#: ``float`` on success, ``None`` on failure (the agent missed its goal).
ValuationOutcome = Optional[float]


@total_ordering
@dataclass(frozen=True)
class SubsetMask:
    """Bitset identity of a subset of ``n`` training points.

    Masks order by cardinality first, then lexicographically on their sorted
    member indices. Every enumeration in this package uses that order.
    """

    bits: int
    n: int

    def __post_init__(self) -> None:
        if not 1 <= self.n <= MAX_POINTS:
            raise ValueError(f"n must be in [1, {MAX_POINTS}], got {self.n}")
        if self.bits < 0 or self.bits >> self.n:
            raise ValueError(f"bits {self.bits:#x} out of range for n={self.n}")

    @classmethod
    def from_members(cls, members: Sequence[int], n: int) -> SubsetMask:
        bits = 0
        for i in members:
            if not 0 <= i < n:
                raise ValueError(f"member {i} out of range for n={n}")
            bits |= 1 << i
        return cls(bits, n)

    @classmethod
    def full(cls, n: int) -> SubsetMask:
        return cls((1 << n) - 1, n)

    @classmethod
    def from_hex(cls, text: str, n: int) -> SubsetMask:
        return cls(int(text, 16), n)

    def members(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.bits >> i & 1)

    def cardinality(self) -> int:
        return bin(self.bits).count("1")

    def __len__(self) -> int:
        return self.cardinality()

    def __contains__(self, i: object) -> bool:
        return isinstance(i, int) and 0 <= i < self.n and bool(self.bits >> i & 1)

    def __iter__(self) -> Iterator[int]:
        return iter(self.members())

    def with_point(self, i: int) -> SubsetMask:
        return SubsetMask(self.bits | (1 << i), self.n)

    def without_point(self, i: int) -> SubsetMask:
        return SubsetMask(self.bits & ~(1 << i), self.n)

    def hex(self) -> str:
        return format(self.bits, "x")

    def sort_key(self) -> tuple[int, tuple[int, ...]]:
        return (self.cardinality(), self.members())

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, SubsetMask):
            return NotImplemented
        return self.sort_key() < other.sort_key()

    def __repr__(self) -> str:
        return f"SubsetMask({set(self.members()) or '{}'}, n={self.n})"


Valuation = Callable[[SubsetMask], ValuationOutcome]


@dataclass(frozen=True)
class AlgoParams:
    """Parameters of the truncated algorithm.

    Args:
        epsilon: Number of failures at one cardinality level that stops the
            walk.
        c_f: Normalising constant. ``None`` means ``1/n``.
        min_cardinality: Lowest subset size visited.
    """

    epsilon: int = 1
    c_f: Optional[float] = None
    min_cardinality: int = 2

    def __post_init__(self) -> None:
        if int(self.epsilon) != self.epsilon or self.epsilon < 1:
            raise ValueError(f"epsilon must be a positive integer, got {self.epsilon}")
        if self.c_f is not None and not self.c_f > 0:
            raise ValueError(f"c_f must be positive, got {self.c_f}")
        if self.min_cardinality < 0:
            raise ValueError("min_cardinality must be >= 0")

    def resolve_c_f(self, n: int) -> float:
        return 1.0 / n if self.c_f is None else float(self.c_f)


@dataclass
class PointResult:
    point_id: int
    phi: Optional[float]
    theta_k: int
    indispensable: bool
    evaluations_used: int

    def __post_init__(self) -> None:
        if self.indispensable and self.phi is not None:
            raise ValueError("an indispensable point carries no phi")


@dataclass
class ShapleyReport:
    n: int
    per_point: list[PointResult]
    global_theta: int
    p_comp: float
    params: AlgoParams = field(default_factory=AlgoParams)

    @property
    def indispensable(self) -> list[int]:
        return [r.point_id for r in self.per_point if r.indispensable]

    @property
    def dispensable(self) -> list[int]:
        return [r.point_id for r in self.per_point if not r.indispensable]

    def phi(self) -> list[Optional[float]]:
        return [r.phi for r in self.per_point]

    @property
    def evaluations_used(self) -> int:
        return sum(r.evaluations_used for r in self.per_point)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "global_theta": self.global_theta,
            "p_comp": self.p_comp,
            "epsilon": self.params.epsilon,
            "c_f": self.params.resolve_c_f(self.n),
            "min_cardinality": self.params.min_cardinality,
            "points": [
                {
                    "point_id": r.point_id,
                    "phi": r.phi,
                    "theta_k": r.theta_k,
                    "indispensable": r.indispensable,
                    "evaluations_used": r.evaluations_used,
                }
                for r in self.per_point
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> ShapleyReport:
        n = int(data["n"])
        params = AlgoParams(
            epsilon=int(data["epsilon"]),
            c_f=float(data["c_f"]),
            min_cardinality=int(data["min_cardinality"]),
        )
        points = [
            PointResult(
                point_id=int(p["point_id"]),
                phi=None if p["phi"] is None else float(p["phi"]),
                theta_k=int(p["theta_k"]),
                indispensable=bool(p["indispensable"]),
                evaluations_used=int(p["evaluations_used"]),
            )
            for p in data["points"]
        ]
        report = assemble_report(points, n, params)
        if report.global_theta != int(data["global_theta"]):
            raise ValueError("global_theta inconsistent with per-point theta_k")
        return report


def enumerate_subsets(n: int, cardinality: int, exclude: int) -> Iterator[SubsetMask]:
    """Yield every subset of ``{0..n-1} \\ {exclude}`` of the given size.

    Subsets come out in lexicographic order of their sorted members.
    """
    if not 0 <= exclude < n:
        raise ValueError(f"exclude={exclude} out of range for n={n}")
    if not 0 <= cardinality <= n - 1:
        raise ValueError(f"cardinality must be in [0, {n - 1}], got {cardinality}")
    pool = [i for i in range(n) if i != exclude]
    for combo in itertools.combinations(pool, cardinality):
        yield SubsetMask.from_members(combo, n)


def _check_point(n: int, k: int) -> None:
    if not 2 <= n <= MAX_POINTS:
        raise ValueError(f"n must be in [2, {MAX_POINTS}], got {n}")
    if not 0 <= k < n:
        raise ValueError(f"k={k} out of range for n={n}")


def exact_shapley(
    valuation: Valuation,
    n: int,
    k: int,
    c_f: Optional[float] = None,
    min_cardinality: int = 0,
) -> float:
    """Brute-force Action Shapley value of point ``k``.

    Visits every subset of the other points with at least ``min_cardinality``
    members, from the largest level down, in canonical order. A term where
    either valuation failed contributes nothing.
    """
    _check_point(n, k)
    if not 0 <= min_cardinality <= n - 1:
        raise ValueError(f"min_cardinality must be in [0, {n - 1}]")
    weight = 1.0 / n if c_f is None else float(c_f)
    total = 0.0
    for i in range(n - 1, min_cardinality - 1, -1):
        denom = math.comb(n - 1, i)
        for d in enumerate_subsets(n, i, k):
            with_k = valuation(d.with_point(k))
            if with_k is None:
                continue
            without_k = valuation(d)
            if without_k is None:
                continue
            total += weight * (with_k - without_k) / denom
    return total


def truncated_action_shapley(
    valuation: Valuation, n: int, k: int, params: AlgoParams = AlgoParams()
) -> PointResult:
    """Top-down truncated Action Shapley value and cut-off cardinality.

    Levels run from ``n - 1`` down to ``params.min_cardinality``. The failure
    counter resets at every level; once it reaches ``params.epsilon`` the walk
    stops and the cut-off cardinality is that level plus one. Stopping at the
    top level before any term was accumulated marks the point indispensable.

    ``evaluations_used`` counts the subsets examined by the inner loop.
    """
    _check_point(n, k)
    if params.min_cardinality >= n:
        raise ValueError(f"min_cardinality must be < n={n}")
    c_f = params.resolve_c_f(n)

    total = 0.0
    terms = 0
    examined = 0
    theta = max(1, params.min_cardinality)
    stopped_at = None
    for i in range(n - 1, params.min_cardinality - 1, -1):
        mem = 0
        denom = math.comb(n - 1, i)
        for d in enumerate_subsets(n, i, k):
            examined += 1
            with_k = valuation(d.with_point(k))
            without_k = None if with_k is None else valuation(d)
            if with_k is None or without_k is None:
                mem += 1
                if mem == params.epsilon:
                    stopped_at = i
                    break
            else:
                total += c_f * (with_k - without_k) / denom
                terms += 1
        if stopped_at is not None:
            theta = stopped_at + 1
            break

    indispensable = stopped_at == n - 1 and terms == 0
    return PointResult(
        point_id=k,
        phi=None if indispensable else total,
        theta_k=theta,
        indispensable=indispensable,
        evaluations_used=examined,
    )


def p_comp(global_theta: int, n: int) -> float:
    """Fraction of the ``2**n`` exhaustive evaluations avoided."""
    if not 0 <= global_theta <= n:
        raise ValueError(f"global_theta must be in [0, {n}]")
    return 1.0 - 2.0**global_theta / 2.0**n


def global_cutoff(results: Sequence[PointResult], n: int) -> int:
    """Largest cut-off cardinality among dispensable points.

    An indispensable point stops at the top level, so its ``theta_k == n``
    says nothing about how much data the agent needs. With no dispensable
    points the answer is ``n``.
    """
    thetas = [r.theta_k for r in results if not r.indispensable]
    return max(thetas) if thetas else n


def assemble_report(
    results: Sequence[PointResult], n: int, params: AlgoParams = AlgoParams()
) -> ShapleyReport:
    if not results:
        raise ValueError("cannot assemble a report from no results")
    ids = sorted(r.point_id for r in results)
    if ids != list(range(len(results))) or len(results) != n:
        raise ValueError("expected exactly one result per point 0..n-1")
    per_point = sorted(results, key=lambda r: r.point_id)
    theta = global_cutoff(per_point, n)
    return ShapleyReport(
        n=n, per_point=list(per_point), global_theta=theta, p_comp=p_comp(theta, n), params=params
    )
