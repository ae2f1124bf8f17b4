"""Compiled batch rollouts for the two built-in step functions.

These mirror :func:`action_shapley.agent.simulate` step for step; the
generic path stays the reference and the test suite checks they agree.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

FORM_DIRECT = 0
FORM_ACCUMULATED = 1


@njit(cache=True)
def _window_stat(hist, n, window, rank_idx, buf):
    T = min(window, n + 1)
    for i in range(T):
        x = hist[n + 1 - T + i]
        j = i
        while j > 0 and buf[j - 1] > x:
            buf[j] = buf[j - 1]
            j -= 1
        buf[j] = x
    return buf[rank_idx[T]]


@njit(cache=True)
def _reward(stat, a, threshold, cost_weight, low, span, cost_sense, active):
    cost = 0.0
    for j in range(a.shape[0]):
        x = min(max((a[j] - low[j]) / span[j], 0.0), 1.0)
        c = cost_sense[j]
        if c > 0:
            cost += x * c
        elif c < 0:
            cost += (1.0 - x) * (-c)
    return -abs(stat - threshold) / threshold - cost_weight * (cost / active)


@njit(cache=True)
def _model_step(s, a, in_mean, in_scale, enc, use_enc, centers, widths, W, L, use_lin, out):
    p = s.shape[0]
    d = p + a.shape[0]
    z = np.empty(d)
    for i in range(p):
        z[i] = (s[i] - in_mean[i]) / in_scale[i]
    for i in range(a.shape[0]):
        z[p + i] = (a[i] - in_mean[p + i]) / in_scale[p + i]
    if use_enc:
        z = z @ enc
    m = centers.shape[0]
    for k in range(out.shape[0]):
        out[k] = W[m, k]
    for j in range(m):
        d2 = 0.0
        for i in range(z.shape[0]):
            diff = z[i] - centers[j, i]
            d2 += diff * diff
        phi = math.exp(-d2 / (2.0 * widths[j] * widths[j]))
        for k in range(out.shape[0]):
            out[k] += phi * W[j, k]
    if use_lin:
        for i in range(z.shape[0]):
            for k in range(out.shape[0]):
                out[k] += z[i] * L[i, k]


@njit(cache=True)
def _true_step(s, a, low, span, rho, sigma, noise, surf_low, surf_high, kappa, weights, v0, out):
    v = 0.0
    for j in range(a.shape[0]):
        v += (a[j] - low[j]) / span[j] * weights[j]
    g = surf_low + (surf_high - surf_low) / (1.0 + math.exp(-kappa * (v - v0)))
    for i in range(s.shape[0]):
        out[i] = rho * s[i] + (1.0 - rho) * g + sigma * noise[i]


@njit(cache=True)
def episodes(
    G,
    s0,
    a0,
    low,
    high,
    span,
    threshold,
    below,
    within,
    rank_idx,
    window,
    N,
    cost_weight,
    cost_sense,
    form,
    dt,
    noise,
    is_model,
    # ground truth
    rho,
    sigma,
    surf_low,
    surf_high,
    kappa,
    weights,
    v0,
    # world model
    in_mean,
    in_scale,
    enc,
    use_enc,
    centers,
    widths,
    W,
    L,
    use_lin,
    model_sigma,
):
    B = G.shape[0]
    p = s0.shape[0]
    q = a0.shape[0]
    states = np.empty((B, N + 1, p))
    actions = np.empty((B, N + 1, q))
    rewards = np.zeros((B, N + 1))
    final = np.empty(B)
    goal = np.zeros(B, dtype=np.bool_)
    aborted = np.zeros(B, dtype=np.bool_)
    active = 0.0
    for j in range(q):
        active += abs(cost_sense[j])
    active = max(active, 1.0)
    buf = np.empty(window)
    hist = np.empty(N + 1)
    s_next = np.empty(p)
    out = np.empty(p + 1)
    a = np.empty(q)
    for b in range(B):
        kp, ki, kd = G[b, 0], G[b, 1], G[b, 2]
        integral = 0.0
        prev_error = 0.0
        for i in range(p):
            states[b, 0, i] = s0[i]
        for j in range(q):
            a[j] = a0[j]
            actions[b, 0, j] = a0[j]
        hist[0] = s0[0]
        met = False
        stop = N
        for n in range(N + 1):
            stat = _window_stat(hist, n, window, rank_idx, buf)
            ok = stat <= threshold if below else stat >= threshold
            met = met or ok
            rewards[b, n] = _reward(stat, a, threshold, cost_weight, low, span, cost_sense, active)
            if n == N:
                final[b] = stat
                goal[b] = met if within else ok
                break
            e = threshold - stat
            integral += e * dt
            if form == FORM_DIRECT:
                delta = kp * e + ki * dt * e + kd * e / dt
            else:
                delta = kp * e + ki * integral + kd * (e - prev_error) / dt
            prev_error = e
            for j in range(q):
                a[j] = min(max(a[j] + delta * span[j], low[j]), high[j])
            if is_model:
                _model_step(states[b, n], a, in_mean, in_scale, enc, use_enc, centers, widths, W, L, use_lin, out)
                for i in range(p):
                    s_next[i] = out[i] + model_sigma * noise[n, b, i]
            else:
                _true_step(
                    states[b, n], a, low, span, rho, sigma, noise[n, b],
                    surf_low, surf_high, kappa, weights, v0, s_next,
                )
            finite = True
            for i in range(p):
                if not math.isfinite(s_next[i]):
                    finite = False
            if not finite:
                stop = n
                break
            for i in range(p):
                states[b, n + 1, i] = s_next[i]
            for j in range(q):
                actions[b, n + 1, j] = a[j]
            hist[n + 1] = s_next[0]
        if stop < N:
            aborted[b] = True
            goal[b] = False
            for n in range(stop + 1, N + 1):
                for i in range(p):
                    states[b, n, i] = states[b, stop, i]
                for j in range(q):
                    actions[b, n, j] = actions[b, stop, j]
            final[b] = _window_stat(hist, stop, window, rank_idx, buf)
    return states, actions, rewards, final, goal, aborted
