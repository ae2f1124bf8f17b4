"""Gaussian RBF network mapping ``(state, action)`` to ``(next state, reward)``.

Fitting standardises inputs, optionally projects them onto their leading
principal directions (a closed-form linear autoencoder), places centres with
seeded k-means, sets each width to the mean distance of a centre's members,
and solves one ridge least-squares problem for the state and reward heads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Transition",
    "TrainConfig",
    "RbfModel",
    "kmeans",
    "fit",
    "fit_arrays",
    "predict",
    "rollout",
    "lipschitz_bound",
    "ModelDynamics",
    "save_model",
    "load_model",
]

MODEL_FORMAT = "action-shapley rbf-model v1"
WIDTH_FLOOR = 1e-6
SINGULAR_RIDGE = 1e-8


@dataclass(frozen=True)
class Transition:
    s_prev: tuple[float, ...]
    a_prev: tuple[float, ...]
    s_cur: tuple[float, ...]
    r_cur: float


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of :func:`fit`.

    ``kmeans_max_points`` caps the rows k-means sees (an evenly strided
    subsample); the readout is always solved on every row. ``width_scale``
    multiplies every k-means width; the default makes neighbouring bumps
    overlap, which a smooth map needs. ``linear_tail`` adds a linear term in
    the (encoded) inputs to the readout, so predictions away from the data
    extrapolate linearly instead of decaying to the bias.
    """

    num_centers: int = 16
    ridge: float = 1e-6
    kmeans_iters: int = 10
    seed: int = 0
    pre_encode: bool = False
    encoder_dim: int = 2
    kmeans_max_points: int = 512
    width_scale: float = 8.0
    linear_tail: bool = False

    def __post_init__(self) -> None:
        if self.num_centers < 1:
            raise ValueError("num_centers must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.kmeans_iters < 0 or self.kmeans_max_points < 1:
            raise ValueError("kmeans_iters must be >= 0 and kmeans_max_points >= 1")
        if not self.width_scale > 0:
            raise ValueError("width_scale must be positive")
        if self.pre_encode and self.encoder_dim < 1:
            raise ValueError("encoder_dim must be >= 1")


@dataclass
class RbfModel:
    state_dim: int
    action_dim: int
    input_mean: np.ndarray
    input_scale: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    output_weights: np.ndarray
    pre_encoder: Optional[np.ndarray] = None
    linear_weights: Optional[np.ndarray] = None
    ridge: float = 0.0
    ridge_bumped: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if np.any(self.widths <= 0):
            raise ValueError("widths must be strictly positive")

    @property
    def num_centers(self) -> int:
        return self.centers.shape[0]

    def encode(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.input_mean) / self.input_scale
        if self.pre_encoder is not None:
            Z = Z @ self.pre_encoder
        return Z

    def features(self, X: np.ndarray) -> np.ndarray:
        return _features(self.encode(X), self.centers, self.widths)

    def _readout(self, X: np.ndarray) -> np.ndarray:
        Z = self.encode(X)
        out = _features(Z, self.centers, self.widths) @ self.output_weights
        if self.linear_weights is not None:
            out = out + Z @ self.linear_weights
        return out

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.state_dim + self.action_dim:
            raise ValueError(
                f"expected {self.state_dim + self.action_dim} input columns, got {X.shape[-1]}"
            )
        lead = X.shape[:-1]
        flat = X.reshape(-1, X.shape[-1])
        out = self._readout(flat)
        return out.reshape(*lead, out.shape[-1])


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] - 2.0 * A @ B.T + (B * B).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _features(Z: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    phi = np.exp(-_sq_dists(Z, centers) / (2.0 * widths**2))
    return np.hstack([phi, np.ones((Z.shape[0], 1))])


def kmeans(
    Z: np.ndarray, m: int, iters: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with deterministic tie-breaking.

    Initial centres are ``m`` distinct rows drawn by ``rng``. Ties in the
    assignment go to the lowest centre index; a centre left without members is
    moved onto the point farthest from its current centre.

    Returns ``(centers, labels)``.
    """
    n = Z.shape[0]
    if m > n:
        raise ValueError(f"need at least {m} points for {m} centres, got {n}")
    centers = Z[np.sort(rng.choice(n, size=m, replace=False))].copy()
    labels = np.argmin(_sq_dists(Z, centers), axis=1)
    for _ in range(iters):
        counts = np.bincount(labels, minlength=m)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, Z)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            d = _sq_dists(Z, centers)[np.arange(n), labels]
            order = np.argsort(-d, kind="stable")
            for j, idx in zip(np.flatnonzero(~filled), order):
                centers[j] = Z[idx]
        new_labels = np.argmin(_sq_dists(Z, centers), axis=1)
        if np.array_equal(new_labels, labels) and filled.all():
            break
        labels = new_labels
    return centers, labels


def _principal_directions(Z: np.ndarray, dim: int) -> np.ndarray:
    # closed-form linear autoencoder: the optimal rank-dim encoder spans the top principal axes
    _, _, vt = np.linalg.svd(Z - Z.mean(0), full_matrices=False)
    basis = vt[: min(dim, vt.shape[0])].T
    # fix the sign of each axis so the encoder is reproducible
    signs = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(basis.shape[1])])
    return basis * np.where(signs == 0, 1.0, signs)


def _solve_ridge(Phi: np.ndarray, Y: np.ndarray, ridge: float) -> tuple[np.ndarray, float, bool]:
    bumped = False
    if ridge == 0.0 and np.linalg.matrix_rank(Phi) < Phi.shape[1]:
        ridge, bumped = SINGULAR_RIDGE, True
    if ridge > 0.0:
        k = Phi.shape[1]
        A = np.vstack([Phi, math.sqrt(ridge) * np.eye(k)])
        B = np.vstack([Y, np.zeros((k, Y.shape[1]))])
    else:
        A, B = Phi, Y
    W, *_ = np.linalg.lstsq(A, B, rcond=None)
    return W, ridge, bumped


def fit_arrays(
    X: np.ndarray, Y: np.ndarray, state_dim: int, config: TrainConfig = TrainConfig()
) -> RbfModel:
    """Fit on stacked inputs ``X = [s_prev, a_prev]`` and targets ``Y = [s_cur, r_cur]``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be 2-D with matching row counts")
    if Y.shape[1] != state_dim + 1:
        raise ValueError("Y must hold the next state followed by the reward")
    n = X.shape[0]
    if n < config.num_centers:
        raise ValueError(f"{n} transitions is fewer than {config.num_centers} centres")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("transitions must be finite")

    mean = X.mean(0)
    scale = X.std(0)
    scale[scale < 1e-12 * np.maximum(1.0, np.abs(mean))] = 1.0
    Z = (X - mean) / scale
    encoder = None
    if config.pre_encode:
        encoder = _principal_directions(Z, config.encoder_dim)
        Z = Z @ encoder

    rng = np.random.default_rng(config.seed)
    stride = max(1, math.ceil(n / config.kmeans_max_points))
    sample = Z[::stride]
    if sample.shape[0] < config.num_centers:
        sample = Z
    centers, _ = kmeans(sample, config.num_centers, config.kmeans_iters, rng)
    labels = np.argmin(_sq_dists(Z, centers), axis=1)
    dist = np.sqrt(((Z - centers[labels]) ** 2).sum(1))
    counts = np.bincount(labels, minlength=centers.shape[0])
    sums = np.bincount(labels, weights=dist, minlength=centers.shape[0])
    widths = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    widths = np.maximum(widths * config.width_scale, WIDTH_FLOOR)

    Phi = _features(Z, centers, widths)
    if config.linear_tail:
        Phi = np.hstack([Phi, Z])
    # solve for deviations from the target mean so the ridge never shrinks the offset
    y_mean = Y.mean(0)
    W, ridge, bumped = _solve_ridge(Phi, Y - y_mean, config.ridge)
    m = centers.shape[0]
    W[m] += y_mean
    resid = Y - Phi @ W
    linear = W[m + 1 :] if config.linear_tail else None
    W = W[: m + 1]
    return RbfModel(
        state_dim=state_dim,
        action_dim=X.shape[1] - state_dim,
        input_mean=mean,
        input_scale=scale,
        centers=centers,
        widths=widths,
        output_weights=W,
        pre_encoder=encoder,
        linear_weights=linear,
        ridge=ridge,
        ridge_bumped=bumped,
        meta={"residual_std": [float(v) for v in resid.std(0)]},
    )


def fit(transitions: Sequence[Transition], config: TrainConfig = TrainConfig()) -> RbfModel:
    if not transitions:
        raise ValueError("no transitions")
    X = np.array([[*t.s_prev, *t.a_prev] for t in transitions], dtype=float)
    Y = np.array([[*t.s_cur, t.r_cur] for t in transitions], dtype=float)
    dims = {(len(t.s_prev), len(t.a_prev), len(t.s_cur)) for t in transitions}
    if len(dims) != 1:
        raise ValueError("inconsistent transition dimensions")
    p, _, p_cur = dims.pop()
    if p != p_cur:
        raise ValueError("s_prev and s_cur dimensions differ")
    return fit_arrays(X, Y, p, config)


def predict(model: RbfModel, s, a) -> tuple[np.ndarray, np.ndarray]:
    """Next state and reward for state ``s`` and action ``a``.

    Leading axes broadcast, so a batch of states can be stepped at once.
    """
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if s.shape[-1] != model.state_dim or a.shape[-1] != model.action_dim:
        raise ValueError(
            f"expected state dim {model.state_dim} and action dim {model.action_dim}, "
            f"got {s.shape[-1]} and {a.shape[-1]}"
        )
    lead = np.broadcast_shapes(s.shape[:-1], a.shape[:-1])
    s = np.broadcast_to(s, lead + s.shape[-1:])
    a = np.broadcast_to(a, lead + a.shape[-1:])
    out = model.predict_raw(np.concatenate([s, a], axis=-1))
    return out[..., : model.state_dim], out[..., model.state_dim]


def lipschitz_bound(model: RbfModel) -> float:
    """Upper bound on ``|f(x) - f(y)| / |x - y|`` in raw input units.

    Each Gaussian bump has gradient norm at most ``1 / (w * sqrt(e))``.
    """
    W = model.output_weights[:-1]
    per_center = np.linalg.norm(W, axis=1) / (model.widths * math.sqrt(math.e))
    slope = per_center.sum()
    if model.linear_weights is not None:
        slope += np.linalg.norm(model.linear_weights, 2)
    gain = 1.0 / model.input_scale.min()
    if model.pre_encoder is not None:
        gain *= np.linalg.norm(model.pre_encoder, 2)
    return float(slope * gain)


def rollout(
    model: RbfModel,
    policy: Callable[[np.ndarray], np.ndarray],
    s0,
    N: int,
    noise_scale: float = 0.0,
    seed: int = 0,
) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Simulate ``N`` steps of ``policy`` on the model.

    Returns ``(s_n, a_n, r_n)`` tuples, where ``r_n`` is the predicted reward
    for leaving ``s_n`` under ``a_n``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    s = np.asarray(s0, dtype=float)
    out = []
    for _ in range(N):
        a = np.asarray(policy(s), dtype=float)
        s_next, r = predict(model, s, a)
        if noise_scale:
            s_next = s_next + noise_scale * rng.standard_normal(s_next.shape)
        out.append((s, a, float(r)))
        s = s_next
    return out


class ModelDynamics:
    """Step function backed by a fitted model, with optional Gaussian noise."""

    def __init__(self, model: RbfModel, noise_scale: float = 0.0):
        self.model = model
        self.noise_scale = noise_scale

    def __call__(self, s, a, rng):
        s_next, r = predict(self.model, s, a)
        if self.noise_scale:
            s_next = s_next + self.noise_scale * rng.standard_normal(s_next.shape)
        return s_next, r


def _array(x: Optional[np.ndarray]):
    return None if x is None else {"shape": list(x.shape), "data": [float(v) for v in x.ravel()]}


def _unarray(obj) -> Optional[np.ndarray]:
    return None if obj is None else np.array(obj["data"], dtype=float).reshape(obj["shape"])


def save_model(model: RbfModel, path) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "ridge": model.ridge,
        "ridge_bumped": model.ridge_bumped,
        "input_mean": _array(model.input_mean),
        "input_scale": _array(model.input_scale),
        "centers": _array(model.centers),
        "widths": _array(model.widths),
        "output_weights": _array(model.output_weights),
        "pre_encoder": _array(model.pre_encoder),
        "linear_weights": _array(model.linear_weights),
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_model(path) -> RbfModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT!r} file")
    return RbfModel(
        state_dim=int(payload["state_dim"]),
        action_dim=int(payload["action_dim"]),
        input_mean=_unarray(payload["input_mean"]),
        input_scale=_unarray(payload["input_scale"]),
        centers=_unarray(payload["centers"]),
        widths=_unarray(payload["widths"]),
        output_weights=_unarray(payload["output_weights"]),
        pre_encoder=_unarray(payload["pre_encoder"]),
        linear_weights=_unarray(payload.get("linear_weights")),
        ridge=float(payload["ridge"]),
        ridge_bumped=bool(payload["ridge_bumped"]),
        meta=payload["meta"],
    )
