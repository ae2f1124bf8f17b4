"""Fit the RBF world model on one family's logs and roll it out.

Compares a model trained on every configuration with one trained on a
single configuration, stepping both under the same fixed action.
"""

import numpy as np

from action_shapley.environments import generate_dataset, make_env, point_transitions, steady_state
from action_shapley.world_model import TrainConfig, fit_arrays, lipschitz_bound, rollout

env = make_env("vm_rightsizing")
points = generate_dataset(env, T=256, seed=0)
data = [point_transitions(env, p) for p in points]
config = TrainConfig(num_centers=8, linear_tail=True)


def fit(members):
    X = np.vstack([data[i][0] for i in members])
    Y = np.vstack([data[i][1] for i in members])
    return fit_arrays(X, Y, env.state_dim, config)


full = fit(range(len(points)))
single = fit([0])
for name, model in (("all points", full), ("point a1 only", single)):
    print(f"{name}: residual std {model.meta['residual_std'][0]:.3g}, Lipschitz bound {lipschitz_bound(model):.3g}")

probe = np.array(points[-1].config)
print(f"\nholding action {probe} (steady state {float(steady_state(env, probe)):.2f})")
for name, model in (("all points", full), ("point a1 only", single)):
    path = rollout(model, lambda s: probe, env.s0, N=40)
    print(f"  {name:>13}: s after 40 steps = {path[-1][0][0]:.2f}")
