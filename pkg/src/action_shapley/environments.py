"""Synthetic stand-ins for the five control case studies.

Every family observes one scalar metric (CPU usage, latency, temperature)
and acts on a two-dimensional configuration. The steady-state metric is a
saturating logistic response of a signed linear score of the normalised
configuration, so it is monotone in each coordinate. Around that steady state
the metric follows an AR(1) process::

    s[t+1] = rho * s[t] + (1 - rho) * g(a[t]) + noise_scale * xi[t]
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "FAMILIES",
    "EnvSpec",
    "TrainingPoint",
    "make_env",
    "steady_state",
    "generate_training_point",
    "generate_dataset",
    "aggregate_percentile",
    "windowed_percentile",
    "reward",
    "true_step",
    "TrueDynamics",
    "point_transitions",
    "write_training_point",
    "read_training_point",
]

FAMILIES = ("vm_rightsizing", "load_balancing", "db_tuning", "k8s", "cooling")
PERCENTILES = (5.0, 50.0, 90.0, 99.9)
SERIES_FORMAT = "action-shapley training-point v1"


class ActionClampedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EnvSpec:
    """Fully specified synthetic environment.

    ``response`` holds the logistic surface: ``low``, ``high``, ``kappa``,
    per-dimension ``weights`` on the normalised configuration and ``v0``,
    the score at which the surface sits halfway between ``low`` and ``high``.
    ``cost_sense`` is ``+1`` when spending more of a dimension costs more and
    ``-1`` when holding it low is the costly side.
    """

    name: str
    family: str
    state_dim: int
    action_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    threshold: float
    unit: str
    percentile: float
    direction: str
    horizon: int
    noise_scale: float
    rho: float
    response: dict
    s0: tuple[float, ...]
    start_action: tuple[float, ...]
    grid: tuple[tuple[float, ...], ...]
    point_prefix: str
    cost_weight: float = 0.0
    cost_sense: tuple[float, ...] = (1.0, 1.0)
    gain_bound: float = 0.05
    window: int = 32

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        lo, hi = np.asarray(self.action_low), np.asarray(self.action_high)
        if lo.shape != (self.action_dim,) or hi.shape != (self.action_dim,):
            raise ValueError("action bounds must have one entry per action dimension")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("action bounds must be finite with low < high")
        if self.percentile not in PERCENTILES:
            raise ValueError(f"percentile must be one of {PERCENTILES}")
        if self.direction not in ("below", "above"):
            raise ValueError("direction must be 'below' or 'above'")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.noise_scale < 0 or not 0 <= self.rho < 1:
            raise ValueError("need noise_scale >= 0 and 0 <= rho < 1")
        if len(self.s0) != self.state_dim:
            raise ValueError("s0 has the wrong dimension")
        if self.window < 1 or self.gain_bound <= 0:
            raise ValueError("window and gain_bound must be positive")
        low, high = self.response["low"], self.response["high"]
        if not low < self.threshold < high:
            raise ValueError("threshold lies outside the reachable state range")
        for config in (self.start_action, *self.grid):
            _check_bounds(self, config)

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=float)

    @property
    def span(self) -> np.ndarray:
        return self.high - self.low

    def normalize(self, a: np.ndarray) -> np.ndarray:
        return (np.asarray(a, dtype=float) - self.low) / self.span

    def point_ids(self) -> list[str]:
        return [f"{self.point_prefix}{i + 1}" for i in range(len(self.grid))]

    def goal_met(self, stat) -> np.ndarray:
        stat = np.asarray(stat, dtype=float)
        if self.direction == "below":
            return stat <= self.threshold
        return stat >= self.threshold

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["grid"] = [list(c) for c in self.grid]
        for key in ("action_low", "action_high", "s0", "start_action", "cost_sense"):
            data[key] = list(data[key])
        data["response"] = dict(self.response, weights=list(self.response["weights"]))
        return data

    @classmethod
    def from_dict(cls, data: dict) -> EnvSpec:
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown EnvSpec keys: {sorted(unknown)}")
        for key in ("action_low", "action_high", "s0", "start_action", "cost_sense"):
            if key in data:
                data[key] = tuple(float(x) for x in data[key])
        if "grid" in data:
            data["grid"] = tuple(tuple(float(x) for x in c) for c in data["grid"])
        if "response" in data:
            resp = dict(data["response"])
            resp["weights"] = tuple(float(w) for w in resp["weights"])
            data["response"] = resp
        return cls(**data)


def _response(low, high, kappa, weights, v_star, threshold) -> dict:
    # place the threshold crossing at score v_star
    frac = (threshold - low) / (high - low)
    v0 = v_star - math.log(frac / (1 - frac)) / kappa
    return {"low": low, "high": high, "kappa": kappa, "weights": tuple(weights), "v0": v0}


def _families() -> dict[str, dict]:
    return {
        "vm_rightsizing": dict(
            name="VM right-sizing",
            action_low=(1.0, 1.0),
            action_high=(10.0, 32.0),
            threshold=90.0,
            unit="% CPU",
            percentile=50.0,
            response=_response(30.0, 100.0, 4.0, (-1.0, -0.6), -0.4, 90.0),
            start_action=(1.0, 1.0),
            grid=((2, 2), (2, 4), (2, 8), (4, 16), (8, 32)),
            point_prefix="a",
            cost_weight=0.02,
            cost_sense=(1.0, 1.0),
        ),
        "load_balancing": dict(
            name="Load balancing",
            action_low=(1.0, 1.0),
            action_high=(8.0, 16.0),
            threshold=70.0,
            unit="% CPU",
            percentile=5.0,
            response=_response(10.0, 100.0, 4.0, (1.0, 0.3), 0.975, 70.0),
            start_action=(8.0, 16.0),
            grid=((8, 16), (8, 12), (8, 2), (1, 2), (1, 16)),
            point_prefix="w",
            cost_weight=0.02,
            cost_sense=(-1.0, -1.0),
        ),
        "db_tuning": dict(
            name="Database tuning",
            action_low=(1.0, 1.0),
            action_high=(10.0, 10.0),
            threshold=25.0,
            unit="% CPU",
            percentile=90.0,
            response=_response(5.0, 100.0, 4.0, (-1.0, -0.4), -0.35, 25.0),
            start_action=(1.0, 1.0),
            grid=((1, 1), (4, 4), (6, 3), (8, 4), (8, 8), (10, 10)),
            point_prefix="p",
            cost_weight=0.02,
            cost_sense=(1.0, 1.0),
        ),
        "k8s": dict(
            name="Kubernetes management",
            action_low=(1.0e6, 10.0),
            action_high=(3.0e6, 100.0),
            threshold=100.0,
            unit="ms",
            percentile=99.9,
            response=_response(20.0, 300.0, 12.0, (1.0, -0.5), 0.375, 100.0),
            start_action=(3.0e6, 100.0),
            grid=tuple((r * 1.0e6, t) for r in (1, 2, 3) for t in (10, 25, 50, 75, 100)),
            point_prefix="r",
            cost_weight=0.02,
            cost_sense=(-1.0, 0.0),
        ),
        "cooling": dict(
            name="Data center cooling",
            action_low=(17.0, 4.0),
            action_high=(29.0, 10.0),
            threshold=65.0,
            unit="degC",
            percentile=99.9,
            response=_response(40.0, 85.0, 8.0, (1.0, -0.3), 0.525, 65.0),
            start_action=(29.0, 10.0),
            grid=tuple((t, p) for t in (29, 25, 21, 17) for p in (4, 7, 10)),
            point_prefix="c",
            cost_weight=0.05,
            cost_sense=(-1.0, 1.0),
        ),
    }


def make_env(family: str, **overrides) -> EnvSpec:
    """Build the synthetic environment for one case-study family.

    Keyword overrides replace any :class:`EnvSpec` field, e.g.
    ``make_env("cooling", noise_scale=0.0)``.
    """
    table = _families()
    if family not in table:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    base = table[family]
    threshold = base["threshold"]
    fields = dict(
        family=family,
        state_dim=1,
        action_dim=2,
        direction="below",
        horizon=64,
        noise_scale=0.01 * threshold,
        rho=0.8,
        gain_bound=0.4 / threshold,
        **base,
    )
    fields["grid"] = tuple(tuple(float(x) for x in c) for c in fields["grid"])
    names = {f.name for f in dataclasses.fields(EnvSpec)}
    unknown = set(overrides) - names
    if unknown:
        raise ValueError(f"unknown EnvSpec fields: {sorted(unknown)}")
    fields.update(overrides)
    if "s0" not in overrides:
        s_start = _surface(
            fields["response"], fields["action_low"], fields["action_high"], fields["start_action"]
        )
        fields["s0"] = (float(s_start),)
    return EnvSpec(**fields)


def _surface(response: dict, action_low, action_high, a) -> np.ndarray:
    low = np.asarray(action_low, dtype=float)
    span = np.asarray(action_high, dtype=float) - low
    x = (np.asarray(a, dtype=float) - low) / span
    v = x @ np.asarray(response["weights"], dtype=float)
    z = response["kappa"] * (v - response["v0"])
    return response["low"] + (response["high"] - response["low"]) / (1.0 + np.exp(-z))


def steady_state(env: EnvSpec, a) -> np.ndarray:
    """Noise-free steady-state metric ``g(a)``; vectorised over leading axes."""
    return _surface(env.response, env.action_low, env.action_high, a)


def _check_bounds(env: EnvSpec, config) -> np.ndarray:
    a = np.asarray(config, dtype=float)
    if a.shape != (env.action_dim,):
        raise ValueError(f"config must have {env.action_dim} entries")
    if np.any(a < env.low) or np.any(a > env.high):
        raise ValueError(f"config {tuple(a)} outside bounds {env.action_low}..{env.action_high}")
    return a


@dataclass
class TrainingPoint:
    id: str
    config: tuple[float, ...]
    series: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.series = np.asarray(self.series, dtype=float)
        if self.series.ndim != 1 or self.series.size == 0:
            raise ValueError("series must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.series)):
            raise ValueError("series contains non-finite values")

    @property
    def T(self) -> int:
        return self.series.size


def reward(env: EnvSpec, stat, a) -> np.ndarray:
    """Normalised constraint gap plus weighted action cost, negated.

    Never positive.
    """
    stat = np.asarray(stat, dtype=float)
    x = np.clip(env.normalize(a), 0.0, 1.0)
    sense = np.asarray(env.cost_sense, dtype=float)
    per_dim = np.where(sense > 0, x, 1.0 - x) * np.abs(sense)
    active = max(float(np.abs(sense).sum()), 1.0)
    cost = per_dim.sum(axis=-1) / active
    return -np.abs(stat - env.threshold) / env.threshold - env.cost_weight * cost


def true_step(env: EnvSpec, s, a, rng: np.random.Generator):
    """Ground-truth transition.

    ``s`` has shape ``(..., state_dim)`` and ``a`` shape ``(..., action_dim)``.
    Returns ``(s_next, r)`` where the reward is scored on ``s_next``.
    Out-of-bounds actions are clamped with an :class:`ActionClampedWarning`.
    """
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    clipped = np.clip(a, env.low, env.high)
    if np.any(clipped != a):
        warnings.warn("action clamped to bounds", ActionClampedWarning, stacklevel=2)
    g = steady_state(env, clipped)[..., None]
    noise = env.noise_scale * rng.standard_normal(s.shape) if env.noise_scale else 0.0
    s_next = env.rho * s + (1.0 - env.rho) * g + noise
    return s_next, reward(env, s_next[..., 0], clipped)


class TrueDynamics:
    """Step function over the ground-truth environment."""

    def __init__(self, env: EnvSpec):
        self.env = env

    def __call__(self, s, a, rng):
        return true_step(self.env, s, a, rng)


def generate_training_point(
    env: EnvSpec, config, T: int = 256, seed: int = 0, point_id: str = "x"
) -> TrainingPoint:
    """Log ``T`` observations of the metric under one fixed configuration.

    The series starts from ``env.s0``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    a = _check_bounds(env, config)
    rng = np.random.default_rng(seed)
    series = np.empty(T)
    s = np.asarray(env.s0, dtype=float)
    series[0] = s[0]
    for t in range(1, T):
        s, _ = true_step(env, s, a, rng)
        series[t] = s[0]
    return TrainingPoint(point_id, tuple(float(x) for x in a), series)


def generate_dataset(
    env: EnvSpec, T: int = 256, seed: int = 0, grid: Optional[Sequence] = None
) -> list[TrainingPoint]:
    """One training point per grid configuration, each with its own seed stream."""
    grid = env.grid if grid is None else grid
    children = np.random.SeedSequence(seed).spawn(len(grid))
    ids = [f"{env.point_prefix}{i + 1}" for i in range(len(grid))]
    return [
        generate_training_point(env, c, T, int(ss.generate_state(1)[0]), pid)
        for c, ss, pid in zip(grid, children, ids)
    ]


def point_transitions(env: EnvSpec, point: TrainingPoint) -> tuple[np.ndarray, np.ndarray]:
    """``(s_prev, a_prev) -> (s_cur, r_cur)`` arrays for one training series."""
    s = point.series
    a = np.broadcast_to(np.asarray(point.config, dtype=float), (s.size - 1, env.action_dim))
    X = np.column_stack([s[:-1], a])
    r = reward(env, s[1:], a)
    Y = np.column_stack([s[1:], r])
    return X, Y


def _rank_index(q: float, T: int) -> int:
    # nearest rank, 1-based; rounding guards against 0.1-style float noise
    return min(T, max(1, math.ceil(round(q * T / 100.0, 9))))


def aggregate_percentile(series, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q/100 * T)``-th smallest value."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty series")
    if not 0 < q <= 100:
        raise ValueError("q must be in (0, 100]")
    return float(np.sort(x)[_rank_index(q, x.size) - 1])


def windowed_percentile(history: np.ndarray, q: float, window: int) -> np.ndarray:
    """Nearest-rank percentile over the last ``window`` columns of ``history``.

    ``history`` has shape ``(batch, steps)``; returns one value per row.
    """
    recent = history[:, -window:]
    k = _rank_index(q, recent.shape[1]) - 1
    return np.partition(recent, k, axis=1)[:, k]


def write_training_point(path, point: TrainingPoint) -> None:
    lines = [
        f"# {SERIES_FORMAT}",
        f"# id\t{point.id}",
        "# config\t" + "\t".join(repr(float(x)) for x in point.config),
        "t\ts0",
    ]
    lines += [f"{t}\t{float(v)!r}" for t, v in enumerate(point.series)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_training_point(path) -> TrainingPoint:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# {SERIES_FORMAT}":
        raise ValueError(f"{path}: not a {SERIES_FORMAT!r} file")
    meta = {}
    body_start = 1
    for body_start, line in enumerate(lines[1:], start=1):
        if not line.startswith("# "):
            break
        key, *values = line[2:].split("\t")
        meta[key] = values
    header = lines[body_start]
    if header.split("\t")[0] != "t":
        raise ValueError(f"{path}: missing column header")
    values = [float(line.split("\t")[1]) for line in lines[body_start + 1 :] if line]
    return TrainingPoint(meta["id"][0], tuple(float(x) for x in meta["config"]), np.array(values))
