"""Valuation functions and their persistent cache.

A valuation maps a :class:`~action_shapley.core.SubsetMask` to a score, or to
``None`` when an agent trained on that subset misses its goal. The end-to-end
valuation trains a world model on the subset's transitions, tunes PID gains
against the model and scores the tuned gains on the true environment.
"""

from __future__ import annotations

import functools
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .agent import OPTIMIZERS, SUCCESS_RULES, EpisodeResult, PidGains, run_episode, tune_gains
from .core import SubsetMask, Valuation, ValuationOutcome
from .environments import EnvSpec, TrainingPoint, TrueDynamics, point_transitions
from .world_model import ModelDynamics, RbfModel, TrainConfig, fit_arrays

__all__ = [
    "SYNTHETIC_KINDS",
    "ValuationRecord",
    "ValuationCache",
    "CacheCorruptError",
    "cached",
    "synthetic_valuation",
    "EndToEndValuationConfig",
    "EndToEndValuation",
    "evaluate_subset",
    "derive_seed",
]

CACHE_FORMAT = "action-shapley valuation-cache v1"
SYNTHETIC_KINDS = ("cardinality", "linear-weights", "planted-null", "constant", "min-size", "random-table")


def derive_seed(*entropy: int) -> int:
    """Stable 32-bit seed from integers (independent of ``PYTHONHASHSEED``)."""
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1)[0])


# -- synthetic valuations ----------------------------------------------------


def synthetic_valuation(kind: str, **params) -> Valuation:
    """Closed-form valuations used as fixtures and oracles.

    ``cardinality``
        ``|d|``.
    ``linear-weights``
        ``sum(weights[i] for i in d)``; needs ``weights``.
    ``planted-null``
        fails unless ``pivot`` (or every index in ``pivots``) is in ``d``,
        otherwise ``|d|``.
    ``constant``
        ``value`` everywhere (default 1.0).
    ``min-size``
        fails when ``|d| < min_size``, otherwise ``|d|``.
    ``random-table``
        an arbitrary game: an independent standard normal draw per subset,
        reproducible from ``seed``.
    """
    if kind == "cardinality":
        return lambda d: float(d.cardinality())
    if kind == "linear-weights":
        w = [float(x) for x in params["weights"]]

        def linear(d: SubsetMask) -> ValuationOutcome:
            return float(sum(w[i] for i in d.members()))

        return linear
    if kind == "planted-null":
        pivots = params.get("pivots", [params.get("pivot", 0)])
        need = 0
        for p in pivots:
            need |= 1 << int(p)
        return lambda d: float(d.cardinality()) if d.bits & need == need else None
    if kind == "constant":
        value = float(params.get("value", 1.0))
        return lambda d: value
    if kind == "min-size":
        size = int(params["min_size"])
        return lambda d: float(d.cardinality()) if d.cardinality() >= size else None
    if kind == "random-table":
        seed = int(params.get("seed", 0))
        scale = float(params.get("scale", 1.0))

        def table(d: SubsetMask) -> ValuationOutcome:
            rng = np.random.default_rng([seed, d.n, d.bits])
            return scale * float(rng.standard_normal())

        return table
    raise ValueError(f"unknown synthetic valuation {kind!r}; expected one of {SYNTHETIC_KINDS}")


# -- persistent cache -------------------------------------------------------


class CacheCorruptError(RuntimeError):
    pass


@dataclass
class ValuationRecord:
    mask: SubsetMask
    outcome: ValuationOutcome
    wall_time: float
    seed: int
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "mask": self.mask.hex(),
                "n": self.mask.n,
                "seed": self.seed,
                "outcome": "failure" if self.outcome is None else "success",
                "score": self.outcome,
                "wall_time": self.wall_time,
                "metadata": self.metadata,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> ValuationRecord:
        obj = json.loads(text)
        tag = obj["outcome"]
        if tag not in ("success", "failure"):
            raise ValueError(f"bad outcome tag {tag!r}")
        score = None if tag == "failure" else float(obj["score"])
        if score is not None and not math.isfinite(score):
            raise ValueError("non-finite score")
        return cls(
            mask=SubsetMask.from_hex(obj["mask"], int(obj["n"])),
            outcome=score,
            wall_time=float(obj["wall_time"]),
            seed=int(obj["seed"]),
            metadata=dict(obj.get("metadata", {})),
        )


class ValuationCache:
    """Append-only JSON-lines store keyed by ``(mask, seed)``.

    The first line is a format header. Each later line is one
    :class:`ValuationRecord`, written with a single ``write`` call so records
    never interleave. A trailing line without a newline is an interrupted
    write and is dropped; any other malformed line is an error that names its
    byte offset. ``path=None`` keeps records in memory only.
    """

    def __init__(self, path=None):
        self.path = None if path is None else Path(path)
        self._records: dict[tuple[int, int, int], ValuationRecord] = {}
        if self.path is not None:
            self._load()

    def _load(self) -> None:
        if not self.path.exists() or self.path.stat().st_size == 0:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps({"format": CACHE_FORMAT}) + "\n")
            return
        data = self.path.read_bytes()
        complete = data.rfind(b"\n") + 1
        if complete < len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(complete)
        offset = 0
        for i, raw in enumerate(data[:complete].split(b"\n")[:-1]):
            try:
                if i == 0:
                    header = json.loads(raw)
                    if header.get("format") != CACHE_FORMAT:
                        raise ValueError(f"unsupported format {header.get('format')!r}")
                else:
                    rec = ValuationRecord.from_json(raw.decode())
                    self._records[self._key(rec.mask, rec.seed)] = rec
            except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
                raise CacheCorruptError(
                    f"{self.path}: malformed record at byte offset {offset}: {exc}"
                ) from exc
            offset += len(raw) + 1

    @staticmethod
    def _key(mask: SubsetMask, seed: int) -> tuple[int, int, int]:
        return (mask.n, mask.bits, int(seed))

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key) -> bool:
        mask, seed = key
        return self._key(mask, seed) in self._records

    def get(self, mask: SubsetMask, seed: int) -> Optional[ValuationRecord]:
        return self._records.get(self._key(mask, seed))

    def records(self) -> list[ValuationRecord]:
        return sorted(self._records.values(), key=lambda r: (r.seed, r.mask.sort_key()))

    def put(self, record: ValuationRecord) -> None:
        key = self._key(record.mask, record.seed)
        if key in self._records:
            return
        if record.outcome is not None and not math.isfinite(record.outcome):
            raise ValueError("refusing to store a non-finite score")
        self._records[key] = record
        if self.path is not None:
            line = (record.to_json() + "\n").encode()
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND)
            try:
                os.write(fd, line)
            finally:
                os.close(fd)


def cached(valuation: Valuation, store: ValuationCache, seed: Optional[int] = None) -> Valuation:
    """Memoise ``valuation`` through ``store``.

    ``seed`` defaults to ``valuation.seed`` when present, else 0. The wrapper
    exposes ``calls``, the number of times the wrapped function actually ran.
    """
    seed = int(getattr(valuation, "seed", 0) if seed is None else seed)

    @functools.wraps(valuation)
    def wrapper(mask: SubsetMask) -> ValuationOutcome:
        hit = store.get(mask, seed)
        if hit is not None:
            return hit.outcome
        start = time.perf_counter()
        outcome = valuation(mask)
        elapsed = time.perf_counter() - start
        if outcome is not None:
            outcome = float(outcome)
            if not math.isfinite(outcome):
                raise ValueError(f"valuation returned non-finite score for {mask!r}")
        wrapper.calls += 1
        store.put(ValuationRecord(mask, outcome, elapsed, seed))
        return outcome

    wrapper.calls = 0
    wrapper.seed = seed
    wrapper.store = store
    return wrapper


# -- end-to-end RL valuation --------------------------------------------------


@dataclass(frozen=True)
class EndToEndValuationConfig:
    """Everything :func:`evaluate_subset` needs besides the subset.

    ``horizon`` overrides the environment's episode length. ``repeats``
    averages the true-environment score over that many noise draws; the
    subset fails unless a strict majority of them meet the goal.
    ``success_rule`` decides whether the goal counts when reached at any step
    (``"within"``) or only at the last one (``"final"``).

    With ``common_noise`` every subset is tuned and scored on the same noise
    streams; k-means is always seeded per subset. With ``model_noise`` the
    tuning rollouts add Gaussian noise at the world model's residual scale.
    """

    env: EnvSpec
    points: Sequence[TrainingPoint]
    train: TrainConfig = TrainConfig(num_centers=8, width_scale=8.0, linear_tail=True)
    optimizer: str = "sacpid_like"
    budget: int = 96
    horizon: Optional[int] = None
    seed: int = 0
    repeats: int = 8
    pid_form: str = "direct"
    model_noise: bool = True
    success_rule: str = "within"
    common_noise: bool = True

    def __post_init__(self) -> None:
        if self.success_rule not in SUCCESS_RULES:
            raise ValueError(f"success_rule must be one of {SUCCESS_RULES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.budget < 1 or self.repeats < 1:
            raise ValueError("budget and repeats must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.points:
            raise ValueError("no training points")

    @property
    def N(self) -> int:
        return self.env.horizon if self.horizon is None else self.horizon


class EndToEndValuation:
    """Train-tune-score valuation over a fixed set of training points.

    Seeds for every subset derive from ``(config.seed, mask)`` alone, so
    results do not depend on evaluation order.
    """

    def __init__(self, config: EndToEndValuationConfig):
        self.config = config
        self.env = config.env
        self.n = len(config.points)
        self.seed = config.seed
        self._data = [point_transitions(self.env, p) for p in config.points]
        self._truth = TrueDynamics(self.env)

    def mask_seed(self, mask: SubsetMask) -> int:
        return derive_seed(self.seed, mask.n, mask.bits)

    def _noise_base(self, mask: SubsetMask) -> int:
        # shared noise streams make scores of different subsets comparable
        return derive_seed(self.seed) if self.config.common_noise else self.mask_seed(mask)

    def fit_model(self, mask: SubsetMask) -> Optional[RbfModel]:
        """World model for the subset, or ``None`` if it cannot be fitted."""
        if mask.n != self.n:
            raise ValueError(f"mask is over {mask.n} points, dataset has {self.n}")
        members = mask.members()
        if not members:
            return None
        X = np.vstack([self._data[i][0] for i in members])
        Y = np.vstack([self._data[i][1] for i in members])
        train = self.config.train
        seed = derive_seed(self.mask_seed(mask), 0)
        try:
            return fit_arrays(X, Y, self.env.state_dim, _with_seed(train, seed))
        except (ValueError, np.linalg.LinAlgError):
            return None

    def tuned_gains(self, mask: SubsetMask, tune_seed: Optional[int] = None) -> Optional[PidGains]:
        model = self.fit_model(mask)
        if model is None:
            return None
        if tune_seed is None:
            tune_seed = derive_seed(self._noise_base(mask), 1)
        noise = model.meta["residual_std"][0] if self.config.model_noise else 0.0
        return tune_gains(
            ModelDynamics(model, noise),
            self.env,
            self.config.optimizer,
            self.config.budget,
            tune_seed,
            N=self.config.N,
            form=self.config.pid_form,
        )

    def rollout(self, gains: PidGains, eval_seed: int) -> EpisodeResult:
        return run_episode(
            self._truth,
            gains,
            self.env,
            self.config.N,
            eval_seed,
            form=self.config.pid_form,
            success=self.config.success_rule,
        )

    def __call__(self, mask: SubsetMask) -> ValuationOutcome:
        gains = self.tuned_gains(mask)
        if gains is None:
            return None
        base = self._noise_base(mask)
        results = [
            self.rollout(gains, derive_seed(base, 2, r)) for r in range(self.config.repeats)
        ]
        if 2 * sum(r.goal_met for r in results) <= self.config.repeats:
            return None
        return math.fsum(r.J for r in results) / self.config.repeats

    def episode_score(self, mask: SubsetMask, eval_seed: int) -> float:
        """Return ``J`` of the subset's agent on a fresh noise draw.

        Gains are tuned once per subset; only the evaluation noise changes.
        An unfittable subset scores ``-inf``.
        """
        gains = self._gains_memo(mask)
        return -math.inf if gains is None else self.rollout(gains, eval_seed).J

    def episode_score_retuned(self, mask: SubsetMask, eval_seed: int) -> float:
        """Like :meth:`episode_score` but re-tunes the gains with ``eval_seed``."""
        gains = self.tuned_gains(mask, tune_seed=derive_seed(eval_seed, 1))
        return -math.inf if gains is None else self.rollout(gains, eval_seed).J

    @functools.lru_cache(maxsize=4096)
    def _gains_memo(self, mask: SubsetMask) -> Optional[PidGains]:
        return self.tuned_gains(mask)


def _with_seed(train: TrainConfig, seed: int) -> TrainConfig:
    return replace(train, seed=seed)


def evaluate_subset(config: EndToEndValuationConfig, mask: SubsetMask) -> ValuationOutcome:
    """Score of the agent built from the subset's data, or ``None`` on failure."""
    return EndToEndValuation(config)(mask)
