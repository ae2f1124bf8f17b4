"""One family end to end: value the logged configurations, pick a training
set, and check the pick against the worst set and random sets.

Takes well under a minute. Pass a family name to try another one, e.g.
``python demos/case_study.py k8s``.
"""

import sys

from action_shapley import assemble_report, truncated_action_shapley
from action_shapley.environments import generate_dataset, make_env
from action_shapley.selection import select_best, select_worst, validate
from action_shapley.valuation import EndToEndValuation, EndToEndValuationConfig, ValuationCache, cached

family = sys.argv[1] if len(sys.argv) > 1 else "db_tuning"
env = make_env(family)
points = generate_dataset(env, T=256, seed=0)
n = len(points)
valuation = EndToEndValuation(EndToEndValuationConfig(env, points, seed=0))
store = ValuationCache()
U = cached(valuation, store)

report = assemble_report([truncated_action_shapley(U, n, k) for k in range(n)], n)
print(f"{family}: {n} configurations, {len(store)} distinct subsets trained")
for p, r in zip(points, report.per_point):
    value = "ind." if r.indispensable else f"{r.phi:8.3f}"
    print(f"  {p.id:>4} {str(p.config):>24}  {value}")
print(f"cut-off {report.global_theta}, P_comp {report.p_comp:.1%}")

best, worst = select_best(report), select_worst(report)
ids = lambda m: [points[i].id for i in m.members()]  # noqa: E731
print(f"\nbest  {ids(best.chosen)} (avg phi {best.avg_phi:.3f}, {best.choice_set_size} candidates)")
print(f"worst {ids(worst.chosen)} (avg phi {worst.avg_phi:.3f})")

summary = validate(report, valuation.episode_score, episodes=25, randoms_per_episode=4, seed=0)
print(f"\nbest >= worst in {summary.best_over_worst:.0%} of 25 episodes")
print(f"random agents beaten by best: {summary.fraction_beaten:.0%}, outperforming it: {summary.fraction_outperforming:.0%}")
