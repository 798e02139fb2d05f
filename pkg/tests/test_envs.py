import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from diffail.envs import (
    LearnerBatch,
    PendulumEnv,
    PointMassEnv,
    ReplayBuffer,
    episode_return,
    make_env,
    rollout,
)
from diffail.errors import ConfigError, UsageError


def test_make_env_ids():
    assert make_env("pointmass").spec.obs_dim == 4
    assert make_env("pendulum").spec.act_dim == 1
    with pytest.raises(ConfigError):
        make_env("mujoco")


# --- point mass -------------------------------------------------------------


def test_pointmass_origin_is_fixed_point():
    env = PointMassEnv()
    s_next, r = env.step(np.zeros(4), np.zeros(2))
    np.testing.assert_array_equal(s_next, np.zeros(4))
    assert r == 0.0


def test_pointmass_hand_step():
    # state (1,0,0,0), no action: position unchanged, r = -1
    env = PointMassEnv()
    s_next, r = env.step(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(2))
    np.testing.assert_array_equal(s_next, [1.0, 0.0, 0.0, 0.0])
    assert r == pytest.approx(-1.0)


def test_pointmass_clips_actions():
    env = PointMassEnv()
    wild, r_wild = env.step(np.zeros(4), np.array([5.0, 0.0]))
    tame, r_tame = env.step(np.zeros(4), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(wild, tame)
    assert r_wild == r_tame


def test_pointmass_returns_nonpositive():
    env = PointMassEnv()
    rng = np.random.default_rng(0)
    for _ in range(5):
        traj = rollout(env, lambda s: rng.uniform(-1, 1, 2), rng)
        assert episode_return(traj) <= 0.0
        assert len(traj) == env.spec.horizon
        assert traj[-1].done and not traj[0].done


# --- pendulum ---------------------------------------------------------------


def test_pendulum_upright_fixed_point():
    env = PendulumEnv()
    s_next, r = env.step(np.array([1.0, 0.0, 0.0]), np.zeros(1))
    np.testing.assert_allclose(s_next, [1.0, 0.0, 0.0], atol=1e-15)
    assert r == 0.0


def test_pendulum_bottom_equilibrium():
    # sin(pi) = 0: no gravity torque at the exact bottom, reward -pi^2
    env = PendulumEnv()
    state = np.array([math.cos(math.pi), math.sin(math.pi), 0.0])
    s_next, r = env.step(state, np.zeros(1))
    np.testing.assert_allclose(s_next, state, atol=1e-12)
    assert r == pytest.approx(-math.pi**2)


def test_pendulum_observation_on_unit_circle():
    env = PendulumEnv()
    rng = np.random.default_rng(7)
    s = env.initial_state(rng)
    for _ in range(300):
        assert abs(s[0] ** 2 + s[1] ** 2 - 1.0) < 1e-9
        s, _ = env.step(s, rng.uniform(-1, 1, 1))


def test_pendulum_speed_clipped():
    env = PendulumEnv()
    s = np.array([math.cos(2.0), math.sin(2.0), 7.9])
    for _ in range(50):
        s, _ = env.step(s, np.ones(1))
        assert abs(s[2]) <= 8.0


# --- purity -----------------------------------------------------------------


@pytest.mark.parametrize("env_id", ["pointmass", "pendulum"])
def test_steps_are_pure_functions(env_id):
    env = make_env(env_id)
    rng = np.random.default_rng(3)
    s = env.initial_state(rng)
    a = rng.uniform(-1, 1, env.spec.act_dim)
    out1 = env.step(s.copy(), a.copy())
    out2 = env.step(s.copy(), a.copy())
    np.testing.assert_array_equal(out1[0], out2[0])
    assert out1[1] == out2[1]


# --- replay buffer ----------------------------------------------------------


def test_learner_batch_has_no_true_reward_field():
    names = {f.name for f in dataclasses.fields(LearnerBatch)}
    assert names == {"s", "a", "s_next", "done"}
    assert "true_r" not in names


def test_buffer_empty_sample_is_usage_error():
    buf = ReplayBuffer(8, 4, 2)
    with pytest.raises(UsageError):
        buf.sample(1, np.random.default_rng(0))


def test_buffer_singleton_sampling():
    buf = ReplayBuffer(8, 2, 1)
    buf.push(np.array([1.0, 2.0]), np.array([0.5]), np.array([3.0, 4.0]), 0.0)
    batch = buf.sample(3, np.random.default_rng(0))
    assert batch.s.shape == (3, 2)
    for row in batch.s:
        np.testing.assert_array_equal(row, [1.0, 2.0])


def test_buffer_ring_evicts_oldest():
    buf = ReplayBuffer(4, 1, 1)
    for i in range(5):
        buf.push(np.array([float(i)]), np.zeros(1), np.zeros(1), 0.0)
    assert len(buf) == 4
    batch = buf.sample(500, np.random.default_rng(1))
    seen = set(batch.s.reshape(-1))
    assert 0.0 not in seen
    assert seen <= {1.0, 2.0, 3.0, 4.0}


def test_buffer_uniformity_chi_squared():
    """10^5 draws over a 10-item buffer pass a chi^2 test at p > 0.001."""
    buf = ReplayBuffer(16, 1, 1)
    for i in range(10):
        buf.push(np.array([float(i)]), np.zeros(1), np.zeros(1), 0.0)
    draws = buf.sample(100_000, np.random.default_rng(12)).s.reshape(-1)
    counts = np.bincount(draws.astype(int), minlength=10)
    expected = len(draws) / 10
    stat = float(((counts - expected) ** 2 / expected).sum())
    # df = 9; reject only below the 0.001 tail
    assert stat < chi2.ppf(0.999, df=9), f"chi2 stat {stat:.1f}"


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=1, max_value=30))
def test_buffer_count_never_exceeds_capacity(capacity, pushes):
    buf = ReplayBuffer(capacity, 1, 1)
    for i in range(pushes):
        buf.push(np.array([float(i)]), np.zeros(1), np.zeros(1), 0.0)
    assert len(buf) == min(capacity, pushes)
    batch = buf.sample(8, np.random.default_rng(0))
    live = set(range(max(0, pushes - capacity), pushes))
    assert set(batch.s.reshape(-1).astype(int)) <= live
