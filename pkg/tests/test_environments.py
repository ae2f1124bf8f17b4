import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from action_shapley.environments import (
    FAMILIES,
    ActionClampedWarning,
    EnvSpec,
    aggregate_percentile,
    generate_dataset,
    generate_training_point,
    make_env,
    read_training_point,
    reward,
    steady_state,
    true_step,
    windowed_percentile,
    write_training_point,
)


@pytest.mark.parametrize(
    "family,percentile,threshold,count",
    [
        ("vm_rightsizing", 50.0, 90.0, 5),
        ("load_balancing", 5.0, 70.0, 5),
        ("db_tuning", 90.0, 25.0, 6),
        ("k8s", 99.9, 100.0, 15),
        ("cooling", 99.9, 65.0, 12),
    ],
)
def test_family_definitions(family, percentile, threshold, count):
    env = make_env(family)
    assert env.percentile == percentile
    assert env.threshold == threshold
    assert env.direction == "below"
    assert len(env.grid) == count


def test_unknown_family_and_field():
    with pytest.raises(ValueError):
        make_env("quantum")
    with pytest.raises(ValueError):
        make_env("k8s", colour="red")


def test_spec_round_trip():
    for family in FAMILIES:
        env = make_env(family)
        assert EnvSpec.from_dict(env.to_dict()) == env


def test_vm_cpu_never_rises_with_more_vcpus():
    env = make_env("vm_rightsizing")
    lo, hi = env.low, env.high
    vcpu = np.linspace(lo[0], hi[0], 25)
    for mem in np.linspace(lo[1], hi[1], 7):
        g = steady_state(env, np.column_stack([vcpu, np.full_like(vcpu, mem)]))
        assert np.all(np.diff(g) <= 1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_surface_is_monotone_per_coordinate(family):
    env = make_env(family)
    w = np.asarray(env.response["weights"])
    grid = np.linspace(0, 1, 15)
    for j in range(env.action_dim):
        for other in np.linspace(0, 1, 5):
            x = np.full((grid.size, env.action_dim), other)
            x[:, j] = grid
            g = steady_state(env, env.low + x * env.span)
            steps = np.diff(g) * np.sign(w[j])
            assert np.all(steps >= -1e-12)


def test_generation_is_deterministic_and_sized():
    env = make_env("db_tuning")
    c = env.grid[2]
    a = generate_training_point(env, c, T=64, seed=5)
    b = generate_training_point(env, c, T=64, seed=5)
    assert np.array_equal(a.series, b.series)
    assert a.T == 64
    assert generate_training_point(env, c, T=1, seed=5).series.size == 1


def test_noise_free_series_settles_on_surface():
    env = make_env("cooling", noise_scale=0.0)
    c = env.grid[4]
    point = generate_training_point(env, c, T=256)
    assert point.series[-1] == pytest.approx(float(steady_state(env, c)), abs=1e-9)


def test_out_of_bounds_config():
    env = make_env("vm_rightsizing")
    with pytest.raises(ValueError):
        generate_training_point(env, (0.0, 4.0))


def test_dataset_ids_and_seeds():
    env = make_env("load_balancing")
    pts = generate_dataset(env, T=32, seed=1)
    assert [p.id for p in pts] == env.point_ids()
    assert len({p.series.tobytes() for p in pts}) == len(pts)


def test_percentile_examples():
    assert aggregate_percentile(np.arange(1, 101), 50) == 50
    assert aggregate_percentile([7.0] * 9, 99.9) == 7.0
    assert aggregate_percentile([10, 20, 30, 40], 99.9) == 40
    with pytest.raises(ValueError):
        aggregate_percentile([], 50)
    with pytest.raises(ValueError):
        aggregate_percentile([1.0], 0)


@given(
    st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200),
    st.sampled_from([5.0, 50.0, 90.0, 99.9, 100.0, 0.1]),
    st.randoms(),
)
def test_percentile_is_member_and_permutation_invariant(xs, q, rnd):
    p = aggregate_percentile(xs, q)
    assert p in xs
    ys = list(xs)
    rnd.shuffle(ys)
    assert aggregate_percentile(ys, q) == p


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60), st.integers(1, 40))
def test_windowed_percentile_matches_scalar(xs, window):
    hist = np.array([xs])
    got = windowed_percentile(hist, 90.0, window)[0]
    assert got == aggregate_percentile(xs[-window:], 90.0)


def test_reward_examples():
    env = make_env("vm_rightsizing", cost_weight=0.0)
    a = np.array(env.start_action)
    assert reward(env, env.threshold, a) == 0.0
    assert reward(env, 2 * env.threshold, a) == -1.0


@given(st.floats(0, 500), st.floats(0, 1), st.floats(0, 1), st.sampled_from(FAMILIES))
def test_rewards_are_never_positive(stat, x0, x1, family):
    env = make_env(family, cost_weight=0.3)
    a = env.low + np.array([x0, x1]) * env.span
    assert reward(env, stat, a) <= 0.0


def test_true_step_clamps_with_warning():
    env = make_env("vm_rightsizing")
    rng = np.random.default_rng(0)
    with pytest.warns(ActionClampedWarning):
        s_hi, _ = true_step(env, np.array([90.0]), env.high + 5, np.random.default_rng(0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s_ok, _ = true_step(env, np.array([90.0]), env.high, rng)
    assert np.array_equal(s_hi, s_ok)


def test_series_file_round_trip(tmp_path):
    env = make_env("k8s")
    point = generate_training_point(env, env.grid[3], T=20, seed=2, point_id="c4")
    write_training_point(tmp_path / "c4.tsv", point)
    again = read_training_point(tmp_path / "c4.tsv")
    assert again.id == "c4" and again.config == point.config
    assert np.array_equal(again.series, point.series)
    (tmp_path / "bad.tsv").write_text("t\ts0\n0\t1.0\n")
    with pytest.raises(ValueError):
        read_training_point(tmp_path / "bad.tsv")
