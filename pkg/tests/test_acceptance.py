"""Acceptance checks, one per criterion.

Each ``check_*`` returns ``(ok, detail)``. Under pytest every check is a test
and its PASS/FAIL line is collected into the terminal summary; run the file
directly to print the lines without pytest.
"""

import contextlib
import io
import json
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from action_shapley.agent import PidGains, PidState, pid_update
from action_shapley.cli import main as cli_main
from action_shapley.core import (
    AlgoParams,
    SubsetMask,
    assemble_report,
    exact_shapley,
    p_comp,
    truncated_action_shapley,
)
from action_shapley.environments import FAMILIES, generate_dataset, make_env
from action_shapley.selection import choice_set_size, validate
from action_shapley.valuation import (
    EndToEndValuation,
    EndToEndValuationConfig,
    ValuationCache,
    cached,
    synthetic_valuation,
)
from action_shapley.world_model import TrainConfig, fit_arrays, predict

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {title}: {detail}")
    return ok


def table_valuation(n: int, rng: np.random.Generator):
    values = rng.standard_normal(2**n)
    return lambda d: float(values[d.bits])


# -- 1 ------------------------------------------------------------------------------


def check_1():
    cases = [(5, 4, 0.50), (5, 3, 0.75), (6, 4, 0.75), (15, 5, 1 - 2**5 / 2**15), (12, 6, 0.984375)]
    got = [p_comp(theta, n) for n, theta, _ in cases]
    ok = all(g == want for g, (_, _, want) in zip(got, cases))
    ok &= round(100 * p_comp(5, 15), 1) == 99.9
    detail = ", ".join(f"n={n},theta={t}: {100 * g:.4g}%" for (n, t, _), g in zip(cases, got))
    return ok, detail


# -- 2 ------------------------------------------------------------------------------


def check_2():
    pairs = [(2, 1), (5, 3), (5, 2), (15, 5), (10, 4)]
    got = [choice_set_size(a, b) for a, b in pairs]
    return got == [2, 10, 10, 3003, 210], f"choice sets {got}"


# -- 3 ------------------------------------------------------------------------------


def check_3():
    rng = np.random.default_rng(20240603)
    mismatches = trials = 0
    for n in range(4, 11):
        for _ in range(50):
            U = table_valuation(n, rng)
            params = AlgoParams(epsilon=int(rng.integers(1, 4)))
            for k in range(n):
                r = truncated_action_shapley(U, n, k, params)
                mismatches += r.phi != exact_shapley(U, n, k, min_cardinality=params.min_cardinality)
            trials += 1
    return mismatches == 0, f"{trials} valuations, n=4..10, {mismatches} non-identical values"


# -- 4 ------------------------------------------------------------------------------


def check_4():
    rng = np.random.default_rng(7)
    worst_sym = worst_lin = 0.0
    null_ok = True
    for _ in range(100):
        n = int(rng.integers(3, 8))
        levels = rng.standard_normal(n + 1)
        phis = [exact_shapley(lambda d: levels[d.cardinality()], n, k, min_cardinality=0) for k in range(n)]
        scale = max(1.0, max(abs(p) for p in phis))
        worst_sym = max(worst_sym, (max(phis) - min(phis)) / scale)

        base = table_valuation(n, rng)
        k = int(rng.integers(n))
        null_ok &= exact_shapley(lambda d: base(d.without_point(k)), n, k, min_cardinality=0) == 0.0

        U1, U2 = table_valuation(n, rng), table_valuation(n, rng)
        a, b = rng.uniform(-3, 3, 2)
        for j in range(n):
            lhs = exact_shapley(lambda d: a * U1(d) + b * U2(d), n, j, min_cardinality=0)
            rhs = a * exact_shapley(U1, n, j, min_cardinality=0) + b * exact_shapley(U2, n, j, min_cardinality=0)
            worst_lin = max(worst_lin, abs(lhs - rhs) / max(abs(rhs), 1e-12))
    ok = worst_sym <= 1e-12 and null_ok and worst_lin <= 1e-9
    return ok, f"symmetry spread {worst_sym:.1e}, nullity exact={null_ok}, linearity rel err {worst_lin:.1e}"


# -- 5 ------------------------------------------------------------------------------


def check_5():
    # epsilon = 1: the top level holds a single subset
    bad = []
    for n in range(2, 16):
        for pivot in (0, n - 1):
            U = synthetic_valuation("planted-null", pivot=pivot)
            r = truncated_action_shapley(U, n, pivot, AlgoParams(epsilon=1, min_cardinality=min(2, n - 1)))
            if not (r.indispensable and r.theta_k == n and r.evaluations_used == 1):
                bad.append((n, pivot))
    return not bad, f"n=2..15, epsilon=1, failures {bad or 'none'}"


# -- 6 ------------------------------------------------------------------------------


def planted_report(n: int, theta: int):
    U = synthetic_valuation("min-size", min_size=theta)
    return assemble_report([truncated_action_shapley(U, n, k) for k in range(n)], n)


def check_6():
    lines = []
    ok = True
    for n in range(5, 13):
        rep = planted_report(n, n - 2)
        bound_ok = all(
            r.evaluations_used <= sum(math.comb(n - 1, i) for i in range(r.theta_k - 1, n))
            for r in rep.per_point
        )
        per_point = max(r.evaluations_used for r in rep.per_point)
        ok &= rep.global_theta == n - 2 and bound_ok and per_point < 2 ** (n - 1)
    lines.append(f"theta=n-2 for n=5..12: per-point evaluations < 2^(n-1) {'holds' if ok else 'broken'}")
    rep = planted_report(15, 5)
    per_point = max(r.evaluations_used for r in rep.per_point)
    ratio = per_point / 2**15
    ok &= rep.global_theta == 5 and ratio < 0.2
    lines.append(f"k8s grid n=15 theta=5: {per_point} evaluations per point, ratio {ratio:.3f} (need < 0.2)")
    return ok, "; ".join(lines)


# -- 7 ------------------------------------------------------------------------------


def end_to_end(family: str, seed: int):
    env = make_env(family)
    points = generate_dataset(env, T=256, seed=seed)
    n = len(points)
    valuation = EndToEndValuation(EndToEndValuationConfig(env, points, seed=seed))
    U = cached(valuation, ValuationCache())
    report = assemble_report([truncated_action_shapley(U, n, k) for k in range(n)], n)
    return report, validate(report, valuation.episode_score, 25, 4, seed)


def check_7():
    start = time.perf_counter()
    cases = []
    for family in FAMILIES:
        for seed in (0, 1, 2):
            report, s = end_to_end(family, seed)
            out = s.fraction_outperforming
            good = s.best_over_worst >= 0.8 and out is not None and out < 0.5
            cases.append((family, seed, report.global_theta, report.n, s.best_over_worst, out, good))
    elapsed = time.perf_counter() - start
    passed = sum(c[-1] for c in cases)
    parts = [
        f"{f}/{seed}: theta {t}/{n}, best>=worst {bw:.2f}, outperforming {'n/a' if o is None else f'{o:.2f}'}"
        + ("" if g else " <-")
        for f, seed, t, n, bw, o, g in cases
    ]
    ok = passed == len(cases) and elapsed < 1800
    return ok, f"{passed}/{len(cases)} family-seed runs pass in {elapsed:.0f}s [" + "; ".join(parts) + "]"


# -- 8 ------------------------------------------------------------------------------


def check_8():
    rng = np.random.default_rng(0)

    def data(m):
        X = rng.uniform(-1, 1, (m, 2))
        s_next = 0.9 * X[:, 0] + 0.1 * X[:, 1]
        return X, np.column_stack([s_next, -np.abs(s_next)])

    X, Y = data(500)
    model = fit_arrays(X, Y, 1, TrainConfig(num_centers=16))
    Xt, Yt = data(200)
    s_hat, _ = predict(model, Xt[:, :1], Xt[:, 1:])
    rmse = float(np.sqrt(np.mean(((s_hat[:, 0] - Yt[:, 0]) / Yt[:, 0].std()) ** 2)))

    Xi = rng.uniform(-1, 1, (50, 3))
    Yi = rng.standard_normal((50, 3))
    interp = fit_arrays(Xi, Yi, 2, TrainConfig(num_centers=50, ridge=1e-12, kmeans_iters=0))
    resid = float(np.max(np.abs(interp.predict_raw(Xi) - Yi)))
    return rmse < 1e-2 and resid < 1e-6, f"held-out RMSE {rmse:.2e}, interpolation residual {resid:.1e}"


# -- 9 ------------------------------------------------------------------------------


def check_9():
    s = PidState(np.array([1.0]), 0.0, 0.0, 1.0)
    results = {}
    for form in ("direct", "accumulated"):
        p, _ = pid_update(PidGains(1, 0, 0), s, 2.0, form=form)
        i, _ = pid_update(PidGains(0, 1, 0), s, 3.0, dt=1.0, form=form)
        z, new = pid_update(PidGains(0.4, 0.3, 0.2), s, 0.0, form=form)
        results[form] = p[0] == 2.0 and i[0] == 3.0 and z[0] == 0.0 and new.prev_action[0] == 1.0
    return all(results.values()), ", ".join(f"{k} form {'exact' if v else 'wrong'}" for k, v in results.items())


# -- 10 -----------------------------------------------------------------------------


def check_10():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config = tmp / "run.json"
        config.write_text(json.dumps({"family": "db_tuning"}))
        snapshots = []
        for run in ("a", "b"):
            out = tmp / run
            for cmd in ("generate", "shapley", "select", "validate", "report"):
                flags = ["--baseline"] if cmd == "validate" else []
                with contextlib.redirect_stdout(io.StringIO()):
                    code = cli_main([cmd, "--config", str(config), "--out", str(out), "--jobs", "1", *flags])
                if code != 0:
                    return False, f"{cmd} exited with {code}"
            snapshots.append(
                {
                    str(p.relative_to(out)): p.read_bytes()
                    for p in sorted(out.rglob("*"))
                    if p.is_file() and "cache" not in p.parts
                }
            )
        same = snapshots[0] == snapshots[1]
        return same, f"{len(snapshots[0])} output files, byte-identical={same}"


CRITERIA = [
    (1, "effort-saving ratio", check_1),
    (2, "choice-set sizes", check_2),
    (3, "oracle equivalence", check_3),
    (4, "axiom suite", check_4),
    (5, "indispensability", check_5),
    (6, "effort bound", check_6),
    (7, "end-to-end selection", check_7),
    (8, "world-model fidelity", check_8),
    (9, "PID update examples", check_9),
    (10, "determinism", check_10),
]


def _run(number):
    _, title, fn = CRITERIA[number - 1]
    ok, detail = fn()
    assert record(number, title, ok, detail), detail


def test_criterion_01_effort_saving():
    _run(1)


def test_criterion_02_choice_sets():
    _run(2)


def test_criterion_03_oracle_equivalence():
    _run(3)


def test_criterion_04_axioms():
    _run(4)


def test_criterion_05_indispensability():
    _run(5)


def test_criterion_06_effort_bound():
    _run(6)


def test_criterion_07_end_to_end():
    _run(7)


def test_criterion_08_world_model():
    _run(8)


def test_criterion_09_pid():
    _run(9)


def test_criterion_10_determinism():
    _run(10)


if __name__ == "__main__":
    failed = 0
    for number, title, fn in CRITERIA:
        ok, detail = fn()
        record(number, title, ok, detail)
        print(RESULTS[-1], flush=True)
        failed += not ok
    sys.exit(1 if failed else 0)
