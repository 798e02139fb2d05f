import math

import numpy as np
import pytest

from diffail.envs import make_env, rollout, episode_return
from diffail.errors import ConfigError, UsageError
from diffail.expert import (
    ExpertDataset,
    NotADatasetError,
    TruncatedDatasetError,
    UnsupportedDatasetVersion,
    generate_expert,
    load_dataset,
    lqr_policy,
    pointmass_system,
    riccati_step,
    save_dataset,
    solve_lqr,
    split_dataset,
    subsample,
)


# --- LQR --------------------------------------------------------------------


def test_lqr_dead_state_matrix():
    # A = 0: the recursion fixes at P = Q and K = 0
    sol = solve_lqr(np.zeros((2, 2)), np.eye(2), np.diag([2.0, 3.0]), np.eye(2))
    np.testing.assert_allclose(sol.P, np.diag([2.0, 3.0]), atol=1e-12)
    np.testing.assert_allclose(sol.K, 0.0, atol=1e-12)


def test_lqr_scalar_golden_ratio():
    # A=B=Q=R=1: P solves P = 1 + P - P^2/(1+P), i.e. P = (1+sqrt(5))/2
    sol = solve_lqr(1.0, 1.0, 1.0, 1.0)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    assert sol.P[0, 0] == pytest.approx(golden, abs=1e-9)
    assert sol.K[0, 0] == pytest.approx(golden / (1.0 + golden), abs=1e-9)


def test_lqr_residual_below_tolerance_at_return():
    A, B, Q, R = pointmass_system()
    sol = solve_lqr(A, B, Q, R, tol=1e-12)
    residual = np.max(np.abs(sol.P - riccati_step(sol.P, A, B, Q, R)))
    assert residual < 1e-12


def test_lqr_solution_is_symmetric_psd():
    sol = solve_lqr(*pointmass_system())
    np.testing.assert_allclose(sol.P, sol.P.T, atol=1e-9)
    assert np.min(np.linalg.eigvalsh(sol.P)) > -1e-9


def test_pointmass_closed_loop_stable_by_power_iteration():
    """Spectral radius oracle independent of the eigvals call inside.

    The dominant eigenvalues come as a complex pair, so the single-step
    growth factor oscillates; the geometric mean of the growth factors
    still converges to the spectral radius.
    """
    A, B, Q, R = pointmass_system()
    sol = solve_lqr(A, B, Q, R)
    M = A - B @ sol.K
    rng = np.random.default_rng(0)
    v = rng.standard_normal(4)
    log_growth = 0.0
    n = 5000
    for _ in range(n):
        w = M @ v
        nw = np.linalg.norm(w)
        log_growth += np.log(nw / np.linalg.norm(v))
        v = w / nw
    radius_est = float(np.exp(log_growth / n))
    assert radius_est < 1.0
    assert sol.spectral_radius == pytest.approx(radius_est, rel=1e-2)
    assert sol.spectral_radius < 1.0


def test_lqr_nonconvergence_raises():
    # unstabilizable: A doubles the state, B cannot touch it
    with pytest.raises(ConfigError):
        solve_lqr(np.diag([2.0, 2.0]), np.zeros((2, 1)), np.eye(2), np.eye(1), iters=50)


# --- expert generation ------------------------------------------------------


def test_generate_expert_rejects_empty():
    with pytest.raises(UsageError):
        generate_expert("pointmass", "lqr", 0, seed=0)


def test_generate_expert_rejects_lqr_on_pendulum():
    with pytest.raises(ConfigError):
        generate_expert("pendulum", "lqr", 1, seed=0)


def test_generate_expert_rejects_unknown_method():
    with pytest.raises(ConfigError):
        generate_expert("pointmass", "mpc", 1, seed=0)


def test_lqr_expert_beats_random_rollouts():
    dataset, report = generate_expert("pointmass", "lqr", 40, seed=0)
    assert dataset.n_traj == 40
    assert all(len(t) == 200 for t in dataset.trajectories)
    # oracle: 40 fresh random-policy rollouts
    env = make_env("pointmass")
    rng = np.random.default_rng(123)
    random_returns = [
        episode_return(rollout(env, lambda s: rng.uniform(-1, 1, 2), rng))
        for _ in range(40)
    ]
    assert dataset.mean_return > np.mean(random_returns)
    for traj in dataset.trajectories:
        assert traj.ret > np.mean(random_returns)
    assert report.margin > 0
    assert report.expert_mean_return == pytest.approx(dataset.mean_return)


def test_trajectories_chain_consecutively():
    dataset, _ = generate_expert("pointmass", "lqr", 2, seed=1)
    for traj in dataset.trajectories:
        for a, b in zip(traj.transitions[:-1], traj.transitions[1:]):
            np.testing.assert_array_equal(a.s_next, b.s)


def test_generation_is_deterministic(tmp_path):
    d1, _ = generate_expert("pointmass", "lqr", 3, seed=7)
    d2, _ = generate_expert("pointmass", "lqr", 3, seed=7)
    p1, p2 = tmp_path / "a.dax", tmp_path / "b.dax"
    save_dataset(p1, d1)
    save_dataset(p2, d2)
    assert p1.read_bytes() == p2.read_bytes()


# --- subsampling ------------------------------------------------------------


@pytest.fixture(scope="module")
def ten_traj_dataset():
    return generate_expert("pointmass", "lqr", 10, seed=3)[0]


def test_subsample_full_count_is_permutation(ten_traj_dataset):
    ds = subsample(ten_traj_dataset, 10, seed=5)
    orig = sorted(t.ret for t in ten_traj_dataset.trajectories)
    got = sorted(t.ret for t in ds.trajectories)
    np.testing.assert_allclose(got, orig)


def test_subsample_too_large_is_usage_error(ten_traj_dataset):
    with pytest.raises(UsageError):
        subsample(ten_traj_dataset, 11, seed=0)


def test_subsample_seeds_differ(ten_traj_dataset):
    picks = {subsample(ten_traj_dataset, 1, seed=s).trajectories[0].ret for s in range(8)}
    assert len(picks) > 1


def test_split_complement_partition(ten_traj_dataset):
    train, held = split_dataset(ten_traj_dataset, 2, seed=11)
    assert train.n_traj == 2 and held.n_traj == 8
    all_returns = sorted(t.ret for t in ten_traj_dataset.trajectories)
    got = sorted([t.ret for t in train.trajectories] + [t.ret for t in held.trajectories])
    np.testing.assert_allclose(got, all_returns)


def test_split_is_deterministic(ten_traj_dataset):
    a1, b1 = split_dataset(ten_traj_dataset, 4, seed=2)
    a2, b2 = split_dataset(ten_traj_dataset, 4, seed=2)
    for x, y in ((a1, a2), (b1, b2)):
        for t1, t2 in zip(x.trajectories, y.trajectories):
            np.testing.assert_array_equal(t1.transitions[0].s, t2.transitions[0].s)


# --- serialization ----------------------------------------------------------


def test_round_trip_field_equality(tmp_path, ten_traj_dataset):
    path = tmp_path / "ds.dax"
    save_dataset(path, ten_traj_dataset)
    loaded = load_dataset(path)
    assert loaded.env_id == ten_traj_dataset.env_id
    assert loaded.obs_dim == ten_traj_dataset.obs_dim
    assert loaded.act_dim == ten_traj_dataset.act_dim
    assert loaded.horizon == ten_traj_dataset.horizon
    assert loaded.method == ten_traj_dataset.method
    assert loaded.seed == ten_traj_dataset.seed
    assert loaded.n_traj == ten_traj_dataset.n_traj
    for t1, t2 in zip(loaded.trajectories, ten_traj_dataset.trajectories):
        for tr1, tr2 in zip(t1.transitions, t2.transitions):
            np.testing.assert_array_equal(tr1.s, tr2.s)
            np.testing.assert_array_equal(tr1.a, tr2.a)
            np.testing.assert_array_equal(tr1.s_next, tr2.s_next)
            assert tr1.true_r == tr2.true_r
            assert tr1.done == tr2.done


def test_round_trip_is_byte_stable(tmp_path, ten_traj_dataset):
    p1 = tmp_path / "one.dax"
    p2 = tmp_path / "two.dax"
    save_dataset(p1, ten_traj_dataset)
    save_dataset(p2, load_dataset(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.dax"
    path.write_bytes(b"WHAT" + bytes(64))
    with pytest.raises(NotADatasetError, match="not a DiffAIL dataset"):
        load_dataset(path)


def test_load_rejects_future_version(tmp_path, ten_traj_dataset):
    path = tmp_path / "v.dax"
    save_dataset(path, ten_traj_dataset)
    raw = bytearray(path.read_bytes())
    raw[4] = VERSION_PLUS = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedDatasetVersion, match="unsupported"):
        load_dataset(path)


def test_load_rejects_truncation(tmp_path, ten_traj_dataset):
    path = tmp_path / "t.dax"
    save_dataset(path, ten_traj_dataset)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(TruncatedDatasetError):
        load_dataset(path)
