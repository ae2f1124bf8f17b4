"""Training-set selection from a Shapley report, and the agent comparison.

The selected set has the report's global cut-off cardinality: every
indispensable point, then the dispensable points with the largest values.
:func:`validate` pits that set against the lowest-valued set of the same size
and against random sets over repeated seeded episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ShapleyReport, SubsetMask

__all__ = [
    "SelectionOutcome",
    "ValidationSummary",
    "choice_set_size",
    "select_best",
    "select_worst",
    "random_selections",
    "validate",
]

#: ``score(mask, episode_seed) -> J`` for one evaluation episode.
EpisodeScore = Callable[[SubsetMask, int], float]


@dataclass(frozen=True)
class SelectionOutcome:
    chosen: SubsetMask
    avg_phi: float
    includes_indispensable: list[bool]
    choice_set_size: int

    def to_dict(self) -> dict:
        return {
            "n": self.chosen.n,
            "chosen": list(self.chosen.members()),
            "mask": self.chosen.hex(),
            "avg_phi": self.avg_phi,
            "includes_indispensable": list(self.includes_indispensable),
            "choice_set_size": self.choice_set_size,
        }


@dataclass
class ValidationSummary:
    """J values per episode for the best, worst and random selections.

    ``random_J[e]`` lists the random agents of episode ``e``. ``fraction_beaten``
    counts random agents scoring strictly below the best agent of the same
    episode; ``fraction_outperforming`` counts those strictly above it.
    """

    best: SubsetMask
    worst: SubsetMask
    best_J: list[float]
    worst_J: list[float]
    random_J: list[list[float]] = field(default_factory=list)
    random_masks: list[list[SubsetMask]] = field(default_factory=list)
    baseline_J: Optional[list[float]] = None

    @property
    def episodes(self) -> int:
        return len(self.best_J)

    @property
    def best_of_random(self) -> list[Optional[float]]:
        return [max(row) if row else None for row in self.random_J]

    def _count(self, better: bool) -> tuple[int, int]:
        hits = total = 0
        for b, row in zip(self.best_J, self.random_J):
            for j in row:
                total += 1
                hits += (j > b) if better else (j < b)
        return hits, total

    @property
    def fraction_beaten(self) -> Optional[float]:
        hits, total = self._count(better=False)
        return hits / total if total else None

    @property
    def fraction_outperforming(self) -> Optional[float]:
        hits, total = self._count(better=True)
        return hits / total if total else None

    @property
    def best_over_worst(self) -> float:
        """Share of episodes where the best agent scores at least the worst one."""
        wins = sum(b >= w for b, w in zip(self.best_J, self.worst_J))
        return wins / self.episodes

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "best": list(self.best.members()),
            "worst": list(self.worst.members()),
            "best_J": list(self.best_J),
            "worst_J": list(self.worst_J),
            "random_J": [list(r) for r in self.random_J],
            "random_masks": [[m.hex() for m in row] for row in self.random_masks],
            "baseline_J": None if self.baseline_J is None else list(self.baseline_J),
            "best_of_random": self.best_of_random,
            "fraction_beaten": self.fraction_beaten,
            "fraction_outperforming": self.fraction_outperforming,
            "best_over_worst": self.best_over_worst,
        }


def choice_set_size(n_dispensable: int, slots: int) -> int:
    if n_dispensable < 0 or slots < 0:
        raise ValueError("counts must be non-negative")
    if slots > n_dispensable:
        raise ValueError(f"{slots} slots exceed {n_dispensable} dispensable points")
    return math.comb(n_dispensable, slots)


def _plan(report: ShapleyReport) -> tuple[list[int], list[int], int]:
    required = report.indispensable
    spare = report.dispensable
    target = min(report.global_theta, report.n)
    if len(required) > target:
        raise ValueError(
            f"{len(required)} indispensable points exceed the cut-off cardinality {target}"
        )
    return required, spare, target - len(required)


def _outcome(report, required, picked, n_spare) -> SelectionOutcome:
    phi = report.phi()
    chosen = SubsetMask.from_members(required + picked, report.n)
    avg = sum(phi[i] for i in picked) / len(picked) if picked else 0.0
    return SelectionOutcome(
        chosen=chosen,
        avg_phi=avg,
        includes_indispensable=[i in chosen for i in required],
        choice_set_size=choice_set_size(n_spare, len(picked)),
    )


def select_best(report: ShapleyReport) -> SelectionOutcome:
    """Indispensable points plus the highest-valued dispensable ones.

    Ties go to the lower point index. ``avg_phi`` averages the dispensable
    members only and is 0 when there are none.
    """
    required, spare, slots = _plan(report)
    phi = report.phi()
    ranked = sorted(spare, key=lambda i: (-phi[i], i))
    return _outcome(report, required, ranked[:slots], len(spare))


def select_worst(report: ShapleyReport) -> SelectionOutcome:
    """Same size as :func:`select_best` but filled with the lowest values."""
    required, spare, slots = _plan(report)
    phi = report.phi()
    ranked = sorted(spare, key=lambda i: (phi[i], i))
    return _outcome(report, required, ranked[:slots], len(spare))


def random_selections(
    report: ShapleyReport, count: int, rng: np.random.Generator, exclude=()
) -> list[SubsetMask]:
    """``count`` uniform draws (with replacement) from the choice set.

    Masks in ``exclude`` are redrawn. Returns an empty list when nothing
    else is left to draw.
    """
    required, spare, slots = _plan(report)
    size = len(required) + slots
    excluded = {m for m in exclude if m.cardinality() == size and all(i in m for i in required)}
    available = choice_set_size(len(spare), slots) - len(excluded)
    if available <= 0 or count <= 0:
        return []
    out = []
    while len(out) < count:
        picked = rng.choice(len(spare), size=slots, replace=False) if slots else []
        mask = SubsetMask.from_members(required + [spare[i] for i in picked], report.n)
        if mask not in excluded:
            out.append(mask)
    return out


def validate(
    report: ShapleyReport,
    score: EpisodeScore,
    episodes: int = 25,
    randoms_per_episode: int = 4,
    seed: int = 0,
    *,
    baseline: bool = False,
) -> ValidationSummary:
    """Compare best, worst and random selections over seeded episodes.

    Within an episode every agent is scored with the same ``episode_seed``
    so they face identical evaluation noise. Random sets never repeat the
    best set. With ``baseline`` the full dataset is scored as well.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if randoms_per_episode < 0:
        raise ValueError("randoms_per_episode must be >= 0")
    best = select_best(report).chosen
    worst = select_worst(report).chosen
    full = SubsetMask.full(report.n)
    children = np.random.SeedSequence(seed).spawn(episodes)
    summary = ValidationSummary(best=best, worst=worst, best_J=[], worst_J=[])
    if baseline:
        summary.baseline_J = []
    for child in children:
        episode_seed = int(child.generate_state(1)[0])
        rng = np.random.default_rng(child)
        masks = random_selections(report, randoms_per_episode, rng, exclude=(best,))
        summary.best_J.append(float(score(best, episode_seed)))
        summary.worst_J.append(float(score(worst, episode_seed)))
        summary.random_masks.append(masks)
        summary.random_J.append([float(score(m, episode_seed)) for m in masks])
        if baseline:
            summary.baseline_J.append(float(score(full, episode_seed)))
    return summary
