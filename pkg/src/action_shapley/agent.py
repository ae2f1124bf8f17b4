"""PID action updates, episode scoring and gain tuning.

The agent holds three gains and nudges every action dimension by the same
PID increment computed from ``threshold - statistic``, where the statistic is
the environment's percentile over a sliding window of recent observations.
Increments are applied in normalised action units (fractions of each
dimension's range) and clamped to the bounds.

Two derivative-free optimisers tune the gains against a world model:
``"sacpid_like"`` is a cross-entropy method and ``"ppopid_like"`` a clipped
hill-climb. Both evaluate whole populations at once through a batched
rollout.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np

from .environments import EnvSpec, TrueDynamics, _rank_index, reward, windowed_percentile
from .world_model import ModelDynamics

__all__ = [
    "OPTIMIZERS",
    "PidGains",
    "PidState",
    "EpisodeResult",
    "pid_update",
    "simulate",
    "run_episode",
    "optimize",
    "tune_gains",
    "gain_box",
]

OPTIMIZERS = ("sacpid_like", "ppopid_like")
PID_FORMS = ("direct", "accumulated")
SUCCESS_RULES = ("final", "within")

Dynamics = Callable[[np.ndarray, np.ndarray, np.random.Generator], tuple]


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(g) for g in (self.kp, self.ki, self.kd)):
            raise ValueError("gains must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.kp, self.ki, self.kd])

    @classmethod
    def from_array(cls, x) -> PidGains:
        kp, ki, kd = (float(v) for v in x)
        return cls(kp, ki, kd)

    def scaled(self, alpha: float) -> PidGains:
        return PidGains(alpha * self.kp, alpha * self.ki, alpha * self.kd)


@dataclass(frozen=True)
class PidState:
    """Controller memory. Every field may carry a leading batch axis."""

    prev_action: np.ndarray
    integral: Union[float, np.ndarray] = 0.0
    prev_error: Union[float, np.ndarray] = 0.0
    dt: float = 1.0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class EpisodeResult:
    J: float
    trajectory: list[tuple[np.ndarray, np.ndarray, float]]
    goal_met: bool
    final_statistic: float
    aborted: bool = False

    @property
    def rewards(self) -> list[float]:
        return [r for _, _, r in self.trajectory]


def pid_update(
    gains,
    state: PidState,
    error,
    dt: Optional[float] = None,
    *,
    low=None,
    high=None,
    scale=1.0,
    form: str = "direct",
) -> tuple[np.ndarray, PidState]:
    """One PID increment.

    ``form="direct"`` adds ``kp*e + ki*dt*e + kd*e/dt``. ``form="accumulated"``
    uses the running integral and the error difference instead:
    ``kp*e + ki*(integral + e*dt) + kd*(e - prev_error)/dt``.

    ``gains`` is a :class:`PidGains` or an array whose last axis holds
    ``(kp, ki, kd)``. Returns the increment broadcast over action dimensions
    and the updated state, whose ``prev_action`` has moved by
    ``increment * scale`` and been clamped to ``[low, high]``.
    """
    dt = state.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    if form not in PID_FORMS:
        raise ValueError(f"form must be one of {PID_FORMS}")
    g = gains.as_array() if isinstance(gains, PidGains) else np.asarray(gains, dtype=float)
    kp, ki, kd = g[..., 0], g[..., 1], g[..., 2]
    e = np.asarray(error, dtype=float)
    integral = state.integral + e * dt
    if form == "direct":
        delta = kp * e + ki * dt * e + kd * e / dt
    else:
        delta = kp * e + ki * integral + kd * (e - state.prev_error) / dt
    prev = np.asarray(state.prev_action, dtype=float)
    step = np.asarray(delta)[..., None] * np.ones(prev.shape[-1])
    action = prev + step * scale
    if low is not None or high is not None:
        action = np.clip(action, low, high)
    return step, PidState(action, integral, e, dt)


def simulate(
    dynamics: Dynamics,
    gains: np.ndarray,
    env: EnvSpec,
    N: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    dt: float = 1.0,
    form: str = "direct",
    success: str = "final",
    compiled: bool = True,
) -> dict:
    """Roll out a batch of gain vectors for ``N`` steps from ``env.s0``.

    ``gains`` has shape ``(B, 3)`` and every row shares the noise stream.
    Step ``n`` earns ``reward(env, stat_n, a_n)`` where ``stat_n`` is the
    windowed percentile of the observations so far, so an episode collects
    ``N + 1`` rewards. The reward returned by ``dynamics`` is not used.

    ``success="final"`` judges the goal on the last statistic only;
    ``"within"`` accepts any step of the episode. A row whose state turns
    non-finite is frozen, stops earning reward and is flagged as aborted.

    Ground-truth and world-model dynamics run through a compiled kernel
    unless ``compiled=False``.
    """
    N = env.horizon if N is None else N
    if N < 1:
        raise ValueError("N must be >= 1")
    if form not in PID_FORMS:
        raise ValueError(f"form must be one of {PID_FORMS}")
    if success not in SUCCESS_RULES:
        raise ValueError(f"success must be one of {SUCCESS_RULES}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    G = np.atleast_2d(np.asarray(gains, dtype=float))
    if compiled and isinstance(dynamics, (TrueDynamics, ModelDynamics)):
        return _simulate_compiled(dynamics, G, env, N, rng, dt, form, success)

    B, p, q = G.shape[0], env.state_dim, env.action_dim
    states = np.empty((B, N + 1, p))
    actions = np.empty((B, N + 1, q))
    rewards = np.zeros((B, N + 1))
    aborted = np.zeros(B, dtype=bool)
    met = np.zeros(B, dtype=bool)
    states[:, 0] = env.s0
    actions[:, 0] = env.start_action
    pid = PidState(actions[:, 0].copy(), np.zeros(B), np.zeros(B), dt)
    for n in range(N + 1):
        stat = windowed_percentile(states[:, : n + 1, 0], env.percentile, env.window)
        ok = env.goal_met(stat)
        met |= ok & ~aborted
        rewards[:, n] = np.where(aborted, 0.0, reward(env, stat, actions[:, n]))
        if n == N:
            break
        _, pid = pid_update(
            G, pid, env.threshold - stat, low=env.low, high=env.high, scale=env.span, form=form
        )
        s_next, _ = dynamics(states[:, n], pid.prev_action, rng)
        s_next = np.asarray(s_next, dtype=float)
        bad = ~np.all(np.isfinite(s_next), axis=-1) | aborted
        aborted |= bad
        states[:, n + 1] = np.where(bad[:, None], states[:, n], s_next)
        actions[:, n + 1] = np.where(bad[:, None], actions[:, n], pid.prev_action)
    final = stat
    goal = (met if success == "within" else ok) & ~aborted
    return {
        "states": states,
        "actions": actions,
        "rewards": rewards,
        "final_statistic": final,
        "goal_met": goal,
        "aborted": aborted,
    }


@functools.lru_cache(maxsize=64)
def _rank_table(q: float, window: int) -> np.ndarray:
    table = np.zeros(window + 1, dtype=np.int64)
    for T in range(1, window + 1):
        table[T] = _rank_index(q, T) - 1
    return table


def _simulate_compiled(dynamics, G, env, N, rng, dt, form, success) -> dict:
    from . import _kernels

    B, p = G.shape[0], env.state_dim
    is_model = isinstance(dynamics, ModelDynamics)
    sigma = dynamics.noise_scale if is_model else env.noise_scale
    noise = rng.standard_normal((N, B, p)) if sigma else np.zeros((N, B, p))
    resp = env.response
    if is_model:
        m = dynamics.model
        enc, lin = m.pre_encoder, m.linear_weights
        model_args = (
            m.input_mean, m.input_scale,
            np.zeros((1, 1)) if enc is None else np.ascontiguousarray(enc), enc is not None,
            np.ascontiguousarray(m.centers), m.widths, np.ascontiguousarray(m.output_weights),
            np.zeros((1, 1)) if lin is None else np.ascontiguousarray(lin), lin is not None,
            float(sigma),
        )
    else:
        model_args = (
            np.zeros(1), np.ones(1), np.zeros((1, 1)), False,
            np.zeros((1, 1)), np.ones(1), np.zeros((2, 2)), np.zeros((1, 1)), False, 0.0,
        )
    states, actions, rewards, final, goal, aborted = _kernels.episodes(
        G,
        np.asarray(env.s0, dtype=float),
        np.asarray(env.start_action, dtype=float),
        env.low,
        env.high,
        env.span,
        float(env.threshold),
        env.direction == "below",
        success == "within",
        _rank_table(env.percentile, env.window),
        int(env.window),
        int(N),
        float(env.cost_weight),
        np.asarray(env.cost_sense, dtype=float),
        _kernels.FORM_DIRECT if form == "direct" else _kernels.FORM_ACCUMULATED,
        float(dt),
        noise,
        is_model,
        float(env.rho),
        float(env.noise_scale),
        float(resp["low"]),
        float(resp["high"]),
        float(resp["kappa"]),
        np.asarray(resp["weights"], dtype=float),
        float(resp["v0"]),
        *model_args,
    )
    return {
        "states": states,
        "actions": actions,
        "rewards": rewards,
        "final_statistic": final,
        "goal_met": goal,
        "aborted": aborted,
    }


def run_episode(
    dynamics: Dynamics,
    gains: PidGains,
    env: EnvSpec,
    N: Optional[int] = None,
    seed: int = 0,
    *,
    dt: float = 1.0,
    form: str = "direct",
    success: str = "final",
) -> EpisodeResult:
    """Score one gain setting: ``J`` sums the ``N + 1`` rewards of the episode."""
    out = simulate(
        dynamics,
        gains.as_array()[None],
        env,
        N,
        np.random.default_rng(seed),
        dt=dt,
        form=form,
        success=success,
    )
    states, actions, rewards = out["states"][0], out["actions"][0], out["rewards"][0]
    trajectory = [
        (states[n].copy(), actions[n].copy(), float(rewards[n])) for n in range(rewards.size)
    ]
    J = 0.0
    for _, _, r in trajectory:
        J += r
    return EpisodeResult(
        J=J,
        trajectory=trajectory,
        goal_met=bool(out["goal_met"][0]),
        final_statistic=float(out["final_statistic"][0]),
        aborted=bool(out["aborted"][0]),
    )


def _cem(objective, low, high, budget, rng, population=16, elite_frac=0.25, std_floor=0.02):
    span = high - low
    mean = (low + high) / 2.0
    std = span / 4.0
    best_x, best_f = None, -np.inf
    used = 0
    while used < budget:
        size = min(population, budget - used)
        X = np.clip(mean + std * rng.standard_normal((size, low.size)), low, high)
        f = objective(X)
        used += size
        i = int(np.argmax(f))
        if best_x is None or f[i] > best_f:
            best_x, best_f = X[i].copy(), float(f[i])
        n_elite = max(1, math.ceil(elite_frac * size))
        elite = X[np.argsort(-f, kind="stable")[:n_elite]]
        mean = elite.mean(0)
        std = np.maximum(elite.std(0), std_floor * span)
    return best_x, best_f


def _hill_climb(
    objective, low, high, budget, rng, population=8, trust=0.2, floor=0.1, grow=1.5, shrink=0.6
):
    span = high - low
    sigma = span / 4.0
    x = np.clip((low + high) / 2.0 + sigma * rng.standard_normal(low.size), low, high)
    fx = float(objective(x[None])[0])
    used = 1
    while used < budget:
        size = min(population, budget - used)
        step = sigma * rng.standard_normal((size, low.size))
        limit = np.maximum(trust * np.abs(x), floor * span)
        X = np.clip(x + np.clip(step, -limit, limit), low, high)
        f = objective(X)
        used += size
        i = int(np.argmax(f))
        if f[i] > fx:
            x, fx = X[i].copy(), float(f[i])
            sigma = np.minimum(sigma * grow, span)
        else:
            sigma = np.maximum(sigma * shrink, 1e-3 * span)
    return x, fx


def optimize(
    objective: Callable[[np.ndarray], np.ndarray],
    low,
    high,
    method: str = "sacpid_like",
    budget: int = 48,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Maximise a batched objective over a box.

    ``objective`` maps an ``(B, d)`` array of candidates to ``B`` scores.
    ``budget`` is the total number of candidates scored. The first candidate
    drawn is returned when ``budget == 1``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    rng = np.random.default_rng(seed)

    def safe(X):
        f = np.asarray(objective(X), dtype=float)
        return np.where(np.isnan(f), -np.inf, f)

    if method == "sacpid_like":
        return _cem(safe, low, high, budget, rng)
    if method == "ppopid_like":
        return _hill_climb(safe, low, high, budget, rng)
    raise ValueError(f"unknown optimizer {method!r}; expected one of {OPTIMIZERS}")


def gain_box(env: EnvSpec) -> tuple[np.ndarray, np.ndarray]:
    b = env.gain_bound
    return np.full(3, -b), np.full(3, b)


def tune_gains(
    dynamics: Dynamics,
    env: EnvSpec,
    optimizer: str = "sacpid_like",
    budget: int = 48,
    seed: int = 0,
    *,
    N: Optional[int] = None,
    form: str = "direct",
) -> PidGains:
    """Gains maximising the episode return on ``dynamics`` (usually a world model).

    Every candidate population is scored on the same noise stream, so the
    search is deterministic per ``seed``.
    """
    low, high = gain_box(env)
    noise_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])

    def objective(X):
        out = simulate(dynamics, X, env, N, np.random.default_rng(noise_seed), form=form)
        J = out["rewards"].sum(axis=1)
        return np.where(out["aborted"], -np.inf, J)

    x, _ = optimize(objective, low, high, optimizer, budget, seed)
    return PidGains.from_array(np.clip(x, low, high))
