import math
from fractions import Fraction
from itertools import combinations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from action_shapley.core import (
    AlgoParams,
    PointResult,
    ShapleyReport,
    SubsetMask,
    assemble_report,
    enumerate_subsets,
    exact_shapley,
    global_cutoff,
    p_comp,
    truncated_action_shapley,
)
from action_shapley.valuation import synthetic_valuation


def members(masks):
    return [set(m.members()) for m in masks]


# -- SubsetMask ---------------------------------------------------------------


def test_mask_basics():
    m = SubsetMask.from_members([3, 0, 2], 5)
    assert m.members() == (0, 2, 3)
    assert m.cardinality() == len(m) == 3
    assert 2 in m and 1 not in m
    assert m.with_point(1).members() == (0, 1, 2, 3)
    assert m.without_point(0).members() == (2, 3)
    assert SubsetMask.from_hex(m.hex(), 5) == m
    assert SubsetMask.full(4).members() == (0, 1, 2, 3)


def test_mask_rejects_bits_beyond_n():
    with pytest.raises(ValueError):
        SubsetMask(bits=1 << 5, n=5)
    with pytest.raises(ValueError):
        SubsetMask.from_members([5], 5)


@given(st.integers(2, 12).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, 2**n - 1))))
def test_popcount_is_cardinality(nb):
    n, bits = nb
    m = SubsetMask(bits=bits, n=n)
    assert m.cardinality() == bin(bits).count("1")
    assert all((bits >> i) & 1 for i in m.members())


@given(st.integers(2, 7))
def test_total_order_is_cardinality_then_lexicographic(n):
    masks = [SubsetMask(bits=b, n=n) for b in range(2**n)]
    expected = sorted(masks, key=lambda m: (m.cardinality(), m.members()))
    assert sorted(masks) == expected


# -- enumerate_subsets ----------------------------------------------------------


def test_enumerate_small_orders():
    assert members(enumerate_subsets(3, 1, 0)) == [{1}, {2}]
    assert members(enumerate_subsets(4, 2, 1)) == [{0, 2}, {0, 3}, {2, 3}]


def test_enumerate_count_matches_binomial():
    assert sum(1 for _ in enumerate_subsets(15, 5, 0)) == math.factorial(14) // (
        math.factorial(5) * math.factorial(9)
    )


def test_enumerate_domain_errors():
    with pytest.raises(ValueError):
        list(enumerate_subsets(4, 4, 0))
    with pytest.raises(ValueError):
        list(enumerate_subsets(4, 1, 4))


@given(st.integers(2, 9).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n - 1), st.integers(0, n - 1))))
def test_enumerate_is_sorted_and_complete(args):
    n, card, k = args
    out = list(enumerate_subsets(n, card, k))
    assert out == sorted(out)
    assert len(set(out)) == len(out) == math.comb(n - 1, card)
    assert all(k not in m and m.cardinality() == card for m in out)


# -- exact_shapley --------------------------------------------------------------


def test_exact_cardinality_valuation():
    U = synthetic_valuation("cardinality")
    assert exact_shapley(U, 3, 0, c_f=1, min_cardinality=0) == 3.0


def test_exact_constant_is_zero():
    U = synthetic_valuation("constant", value=7.5)
    for k in range(5):
        assert exact_shapley(U, 5, k, min_cardinality=0) == 0.0


def test_exact_planted_null_hand_enumeration():
    U = synthetic_valuation("planted-null", pivot=0)
    assert exact_shapley(U, 4, 2, c_f=1, min_cardinality=2) == pytest.approx(1 + 2 / 3, abs=1e-12)


def brute_force(U, n, k, c_f, min_card):
    # independent oracle in exact rational arithmetic
    total = Fraction(0)
    others = [i for i in range(n) if i != k]
    for size in range(min_card, n):
        for d in combinations(others, size):
            a = U(SubsetMask.from_members(d + (k,), n))
            b = U(SubsetMask.from_members(d, n))
            if a is None or b is None:
                continue
            total += (Fraction(a) - Fraction(b)) / math.comb(n - 1, size)
    return float(Fraction(c_f) * total)


@given(
    st.integers(2, 7).flatmap(
        lambda n: st.tuples(
            st.just(n),
            st.lists(st.integers(-20, 20), min_size=n, max_size=n),
            st.integers(0, n - 1),
            st.integers(0, n - 1),
        )
    )
)
def test_exact_matches_rational_oracle(args):
    n, w, k, min_card = args
    U = synthetic_valuation("linear-weights", weights=w)
    assert exact_shapley(U, n, k, c_f=1, min_cardinality=min_card) == pytest.approx(
        brute_force(U, n, k, 1, min_card), abs=1e-9
    )


@given(st.integers(2, 8), st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_symmetry_for_cardinality_only_valuations(n, table):
    U = lambda d: table[d.cardinality()]  # noqa: E731
    phis = [exact_shapley(U, n, k, min_cardinality=0) for k in range(n)]
    spread = max(phis) - min(phis)
    assert spread <= 1e-12 * max(1.0, max(abs(p) for p in phis))


@given(st.integers(2, 7), st.integers(0, 2**16))
def test_nullity(n, seed):
    base = synthetic_valuation("random-table", seed=seed)
    k = seed % n
    U = lambda d: base(d.without_point(k))  # noqa: E731
    assert exact_shapley(U, n, k, min_cardinality=0) == 0.0


@given(st.integers(2, 7), st.integers(0, 2**16), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(n, seed, a, b):
    U1 = synthetic_valuation("random-table", seed=seed)
    U2 = synthetic_valuation("random-table", seed=seed + 1)
    mix = lambda d: a * U1(d) + b * U2(d)  # noqa: E731
    for k in range(n):
        lhs = exact_shapley(mix, n, k, min_cardinality=0)
        rhs = a * exact_shapley(U1, n, k, min_cardinality=0) + b * exact_shapley(
            U2, n, k, min_cardinality=0
        )
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_linear_weights_closed_form():
    w = [1.0, -2.5, 4.0, 0.5, 3.0]
    U = synthetic_valuation("linear-weights", weights=w)
    n = len(w)
    for k in range(n):
        # every level contributes w_k, and there are n levels when starting from 0
        assert exact_shapley(U, n, k, min_cardinality=0) == pytest.approx(w[k] * n / n, rel=1e-9)


# -- truncated_action_shapley ------------------------------------------------------


def test_truncated_indispensable_point():
    U = synthetic_valuation("planted-null", pivot=0)
    r = truncated_action_shapley(U, 4, 0, AlgoParams(epsilon=1, c_f=1))
    assert r.indispensable and r.phi is None
    assert r.theta_k == 4
    assert r.evaluations_used == 1


def test_truncated_planted_null_hand_enumeration():
    U = synthetic_valuation("planted-null", pivot=0)
    r = truncated_action_shapley(U, 4, 2, AlgoParams(epsilon=1, c_f=1))
    assert not r.indispensable
    assert r.theta_k == 3
    assert r.phi == pytest.approx(1 + 2 / 3, abs=1e-12)


def test_truncated_without_failures_runs_to_floor():
    U = synthetic_valuation("cardinality")
    for k in range(5):
        r = truncated_action_shapley(U, 5, k, AlgoParams(epsilon=1))
        assert r.theta_k == 2
        assert r.phi == exact_shapley(U, 5, k, min_cardinality=2)


@given(st.integers(2, 8), st.integers(0, 2**16), st.integers(1, 4), st.integers(0, 3))
def test_oracle_equivalence_bit_identical(n, seed, eps, min_card):
    min_card = min(min_card, n - 1)
    U = synthetic_valuation("random-table", seed=seed)
    for k in range(n):
        r = truncated_action_shapley(U, n, k, AlgoParams(epsilon=eps, min_cardinality=min_card))
        assert r.phi == exact_shapley(U, n, k, min_cardinality=min_card)
        assert r.theta_k == max(1, min_card)


@given(st.integers(3, 12))
def test_best_case_effort(n):
    # the top level holds a single subset, so one failure there ends the walk
    r = truncated_action_shapley(lambda d: None, n, 0, AlgoParams(epsilon=1))
    assert r.evaluations_used == 1
    assert r.theta_k == n
    assert r.indispensable


@given(st.integers(4, 12), st.integers(2, 3))
def test_best_case_effort_wider_epsilon(n, eps):
    # mem restarts below the single-subset top level: 1 + eps evaluations
    r = truncated_action_shapley(lambda d: None, n, 0, AlgoParams(epsilon=eps))
    assert r.evaluations_used == 1 + eps
    assert r.theta_k == n - 1
    assert not r.indispensable and r.phi == 0.0


@given(st.integers(3, 9), st.integers(0, 2**16), st.integers(1, 3))
def test_evaluation_count_bound(n, seed, eps):
    base = synthetic_valuation("random-table", seed=seed)
    U = lambda d: None if base(d) < -1.0 else base(d)  # noqa: E731
    params = AlgoParams(epsilon=eps)
    bound = sum(math.comb(n - 1, i) for i in range(params.min_cardinality, n))
    for k in range(n):
        r = truncated_action_shapley(U, n, k, params)
        assert r.evaluations_used <= bound
        assert 1 <= r.theta_k <= n
        assert r.indispensable == (r.phi is None)


def test_mem_resets_per_level():
    # one failure per level at eps=2 never stops the walk
    n = 5
    first = {i: next(enumerate_subsets(n, i, 0)).with_point(0) for i in range(n)}

    def U(d):
        if 0 in d and first.get(d.cardinality() - 1) == d:
            return None
        return float(d.cardinality())

    r = truncated_action_shapley(U, n, 0, AlgoParams(epsilon=2))
    assert r.theta_k == 2
    assert r.evaluations_used == sum(math.comb(n - 1, i) for i in range(2, n))


def test_min_size_valuation_gives_planted_cutoff():
    U = synthetic_valuation("min-size", min_size=5)
    r = truncated_action_shapley(U, 15, 0)
    assert r.theta_k == 5 and not r.indispensable


def test_algo_params_validation():
    with pytest.raises(ValueError):
        AlgoParams(epsilon=0)
    with pytest.raises(ValueError):
        AlgoParams(c_f=0)
    with pytest.raises(ValueError):
        AlgoParams(min_cardinality=-1)
    with pytest.raises(ValueError):
        truncated_action_shapley(lambda d: 1.0, 3, 0, AlgoParams(min_cardinality=3))


# -- report -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "n,theta,expected",
    [(5, 4, 0.5), (5, 3, 0.75), (6, 4, 0.75), (15, 5, 1 - 2**5 / 2**15), (12, 6, 0.984375)],
)
def test_p_comp(n, theta, expected):
    assert p_comp(theta, n) == expected


def test_p_comp_k8s_rounds_to_99_9_percent():
    assert round(100 * p_comp(5, 15), 1) == 99.9


def result(k, theta, ind=False):
    return PointResult(k, None if ind else 0.1 * k, theta, ind, 1)


def test_assemble_report_all_dispensable():
    report = assemble_report([result(k, 4) for k in range(5)], 5)
    assert report.global_theta == 4
    assert report.p_comp == 0.5


def test_global_cutoff_skips_indispensable_points():
    results = [result(0, 5, True), result(1, 4), result(2, 5, True), result(3, 3), result(4, 5, True)]
    assert global_cutoff(results, 5) == 4
    assert global_cutoff([result(k, 3, True) for k in range(3)], 3) == 3


def test_assemble_report_errors():
    with pytest.raises(ValueError):
        assemble_report([], 3)
    with pytest.raises(ValueError):
        assemble_report([result(0, 2), result(0, 2)], 2)


def test_indispensable_point_cannot_carry_phi():
    with pytest.raises(ValueError):
        PointResult(0, 1.0, 3, True, 1)


def test_report_round_trip():
    params = AlgoParams(epsilon=2, c_f=0.5, min_cardinality=1)
    report = assemble_report([result(0, 3, True), result(1, 2), result(2, 1)], 3, params)
    again = ShapleyReport.from_dict(report.to_dict())
    assert again.to_dict() == report.to_dict()
    broken = report.to_dict()
    broken["global_theta"] = 1
    with pytest.raises(ValueError):
        ShapleyReport.from_dict(broken)
