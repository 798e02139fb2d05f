"""Expert demonstration construction and serialization.

Two expert builders: an analytic LQR regulator for the point mass, and a
SAC policy trained on the hidden true reward for anything else (the only
place in the package where training code touches true rewards).

Dataset files (little-endian):

    magic  b"DAEX"
    version u32 (currently 1)
    env-id length u16 + utf-8 bytes
    obs_dim u32, act_dim u32, horizon u32, n_traj u32
    method u8 (0 = lqr, 1 = sac), generator seed u64
    per trajectory, horizon records of [s, a, s_next, true_r] as f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import ReplayBuffer, Transition, episode_return, make_env, rollout
from .errors import ConfigError, UsageError
from .sac import SacAgent, SacBatch, evaluate_policy

MAGIC = b"DAEX"
VERSION = 1
METHOD_TAGS = {"lqr": 0, "sac": 1}
METHOD_NAMES = {v: k for k, v in METHOD_TAGS.items()}


class DatasetError(Exception):
    pass


class NotADatasetError(DatasetError):
    pass


class UnsupportedDatasetVersion(DatasetError):
    pass


class TruncatedDatasetError(DatasetError):
    pass


@dataclass
class Trajectory:
    transitions: list[Transition]

    @property
    def ret(self) -> float:
        return episode_return(self.transitions)

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class ExpertDataset:
    env_id: str
    obs_dim: int
    act_dim: int
    horizon: int
    method: str
    seed: int
    trajectories: list[Trajectory]

    @property
    def n_traj(self) -> int:
        return len(self.trajectories)

    @property
    def mean_return(self) -> float:
        return float(np.mean([t.ret for t in self.trajectories]))

    def stacked(self):
        """All transitions as (S, A, S_next) arrays, trajectory order."""
        s = np.array([t.s for tr in self.trajectories for t in tr.transitions])
        a = np.array([t.a for tr in self.trajectories for t in tr.transitions])
        sn = np.array([t.s_next for tr in self.trajectories for t in tr.transitions])
        return s, a, sn


@dataclass
class GenerationReport:
    expert_mean_return: float
    random_mean_return: float

    @property
    def margin(self) -> float:
        return self.expert_mean_return - self.random_mean_return


@dataclass
class LqrSolution:
    K: np.ndarray
    P: np.ndarray
    spectral_radius: float


def riccati_step(P, A, B, Q, R):
    BtPA = B.T @ P @ A
    return Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)


def solve_lqr(A, B, Q, R, iters: int = 10_000, tol: float = 1e-10) -> LqrSolution:
    """Iterate the discrete-time Riccati recursion to its fixed point."""
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (A, B, Q, R))
    P = Q.copy()
    residual = np.inf
    for _ in range(iters):
        P_next = riccati_step(P, A, B, Q, R)
        P_next = 0.5 * (P_next + P_next.T)  # kill symmetry drift
        residual = np.max(np.abs(P_next - P))
        P = P_next
        if residual < tol:
            break
    else:
        raise ConfigError(
            f"Riccati iteration did not converge in {iters} steps "
            f"(residual {residual:.3e}); is (A, B) stabilizable?"
        )
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    radius = float(np.max(np.abs(np.linalg.eigvals(A - B @ K))))
    return LqrSolution(K=K, P=P, spectral_radius=radius)


def pointmass_system():
    """State-space matrices and stage costs matching the point-mass reward."""
    dt = 0.05
    A = np.eye(4)
    A[0, 2] = dt
    A[1, 3] = dt
    B = np.zeros((4, 2))
    B[2, 0] = dt
    B[3, 1] = dt
    Q = np.diag([1.0, 1.0, 0.1, 0.1])
    R = 0.01 * np.eye(2)
    return A, B, Q, R


def lqr_policy(sol: LqrSolution):
    return lambda s: np.clip(-sol.K @ s, -1.0, 1.0)


def random_policy(act_dim: int, rng: np.random.Generator):
    return lambda s: rng.uniform(-1.0, 1.0, act_dim)


def _collect(env, policy, n_traj: int, rng) -> list[Trajectory]:
    return [Trajectory(rollout(env, policy, rng)) for _ in range(n_traj)]


def train_sac_on_true_reward(
    env,
    steps: int,
    seed: int,
    hidden: int = 128,
    batch_size: int = 256,
    warmup: int = 1000,
    eval_interval: int = 2000,
    eval_episodes: int = 10,
    lr: float = 3e-4,
):
    """Plain forward RL on the environment's true reward.

    Returns the trained agent, the evaluation history [(step, mean return)],
    and the best evaluation mean seen.
    """
    root = np.random.SeedSequence(seed)
    train_ss, eval_ss = root.spawn(2)
    rng = np.random.default_rng(train_ss)
    spec = env.spec
    agent = SacAgent(
        spec.obs_dim, spec.act_dim, rng, hidden=hidden,
        lr_policy=lr, lr_critic=lr, lr_alpha=lr,
    )
    buf = ReplayBuffer(int(1e6), spec.obs_dim, spec.act_dim)
    rewards = np.zeros(buf.capacity)

    history = []
    best = -np.inf
    s = env.initial_state(rng)
    t_in_episode = 0
    for n in range(1, steps + 1):
        if n <= warmup:
            a = rng.uniform(-1.0, 1.0, spec.act_dim)
        else:
            a = agent.policy_sample(s, rng)[0][0]
        s_next, r = env.step(s, a)
        rewards[buf.cursor] = r
        # horizon truncation is not a terminal state: bootstrap through it
        buf.push(s, a, s_next, 0.0)
        t_in_episode += 1
        if t_in_episode >= spec.horizon:
            s = env.initial_state(rng)
            t_in_episode = 0
        else:
            s = s_next

        if n > warmup:
            idx = buf.sample_indices(batch_size, rng)
            batch = SacBatch(
                s=buf.s[idx], a=buf.a[idx], s_next=buf.s_next[idx],
                r=rewards[idx], done=buf.done[idx],
            )
            agent.update(batch, rng)

        if n % eval_interval == 0 or n == steps:
            mean_ret = float(
                np.mean(evaluate_policy(agent, env, eval_episodes, eval_ss.spawn(1)[0]))
            )
            history.append((n, mean_ret))
            best = max(best, mean_ret)
    return agent, history, best


def generate_expert(
    env_id: str,
    method: str,
    n_traj: int,
    seed: int,
    sac_steps: int = 200_000,
    return_floor_frac: float = 0.9,
) -> tuple[ExpertDataset, GenerationReport]:
    """Full-horizon demonstrations from a freshly built expert policy."""
    if n_traj < 1:
        raise UsageError("n_traj must be at least 1")
    if method not in METHOD_TAGS:
        raise ConfigError(f"unknown expert method {method!r}")
    env = make_env(env_id)
    root = np.random.SeedSequence(seed)
    policy_ss, collect_ss, baseline_ss = root.spawn(3)

    if method == "lqr":
        if env_id != "pointmass":
            raise ConfigError("the lqr expert is only defined for pointmass")
        sol = solve_lqr(*pointmass_system())
        policy = lqr_policy(sol)
    else:
        agent, history, best = train_sac_on_true_reward(
            env, sac_steps, seed=int(policy_ss.generate_state(1)[0])
        )
        final = history[-1][1]
        floor = best - (1.0 - return_floor_frac) * abs(best)
        if final < floor:
            raise UsageError(
                f"sac expert final return {final:.1f} fell below {floor:.1f} "
                f"(best seen {best:.1f}); rerun with more training steps"
            )
        policy = lambda s: agent.policy_act(s)[0]

    collect_rng = np.random.default_rng(collect_ss)
    trajectories = _collect(env, policy, n_traj, collect_rng)
    dataset = ExpertDataset(
        env_id=env_id,
        obs_dim=env.spec.obs_dim,
        act_dim=env.spec.act_dim,
        horizon=env.spec.horizon,
        method=method,
        seed=seed,
        trajectories=trajectories,
    )
    baseline_rng = np.random.default_rng(baseline_ss)
    baseline = _collect(env, random_policy(env.spec.act_dim, baseline_rng), 40, baseline_rng)
    report = GenerationReport(
        expert_mean_return=dataset.mean_return,
        random_mean_return=float(np.mean([t.ret for t in baseline])),
    )
    return dataset, report


def split_dataset(dataset: ExpertDataset, n: int, seed: int):
    """Uniform draw of n trajectories without replacement, plus the rest."""
    if n < 1 or n > dataset.n_traj:
        raise UsageError(f"requested {n} of {dataset.n_traj} trajectories")
    order = np.random.default_rng(seed).permutation(dataset.n_traj)
    chosen = [dataset.trajectories[i] for i in sorted(order[:n])]
    rest = [dataset.trajectories[i] for i in sorted(order[n:])]

    def mk(trajs):
        return ExpertDataset(
            env_id=dataset.env_id,
            obs_dim=dataset.obs_dim,
            act_dim=dataset.act_dim,
            horizon=dataset.horizon,
            method=dataset.method,
            seed=dataset.seed,
            trajectories=trajs,
        )

    return mk(chosen), mk(rest)


def subsample(dataset: ExpertDataset, n: int, seed: int) -> ExpertDataset:
    return split_dataset(dataset, n, seed)[0]


def save_dataset(path, dataset: ExpertDataset) -> None:
    env_raw = dataset.env_id.encode("utf-8")
    header = b"".join(
        [
            MAGIC,
            struct.pack("<I", VERSION),
            struct.pack("<H", len(env_raw)),
            env_raw,
            struct.pack(
                "<IIII", dataset.obs_dim, dataset.act_dim, dataset.horizon, dataset.n_traj
            ),
            struct.pack("<B", METHOD_TAGS[dataset.method]),
            struct.pack("<Q", dataset.seed),
        ]
    )
    chunks = [header]
    for traj in dataset.trajectories:
        if len(traj) != dataset.horizon:
            raise ConfigError(
                f"trajectory length {len(traj)} != horizon {dataset.horizon}"
            )
        rows = np.concatenate(
            [
                np.array([t.s for t in traj.transitions]),
                np.array([t.a for t in traj.transitions]),
                np.array([t.s_next for t in traj.transitions]),
                np.array([[t.true_r] for t in traj.transitions]),
            ],
            axis=1,
        )
        chunks.append(np.ascontiguousarray(rows, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_dataset(path) -> ExpertDataset:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise NotADatasetError(f"{path}: not a DiffAIL dataset")
    if len(buf) < 10:
        raise TruncatedDatasetError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise UnsupportedDatasetVersion(f"{path}: unsupported dataset version {version}")
    pos = 8
    (env_len,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    env_id = buf[pos : pos + env_len].decode("utf-8")
    pos += env_len
    obs_dim, act_dim, horizon, n_traj = struct.unpack_from("<IIII", buf, pos)
    pos += 16
    (method_tag,) = struct.unpack_from("<B", buf, pos)
    pos += 1
    (seed,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    if method_tag not in METHOD_NAMES:
        raise DatasetError(f"{path}: unknown method tag {method_tag}")

    row_width = 2 * obs_dim + act_dim + 1
    expected = n_traj * horizon * row_width * 8
    if len(buf) - pos != expected:
        raise TruncatedDatasetError(
            f"{path}: expected {expected} payload bytes, found {len(buf) - pos}"
        )
    data = np.frombuffer(buf, dtype="<f8", offset=pos).reshape(n_traj, horizon, row_width)
    trajectories = []
    for ti in range(n_traj):
        transitions = []
        for hi in range(horizon):
            row = data[ti, hi]
            transitions.append(
                Transition(
                    s=row[:obs_dim].copy(),
                    a=row[obs_dim : obs_dim + act_dim].copy(),
                    s_next=row[obs_dim + act_dim : 2 * obs_dim + act_dim].copy(),
                    true_r=float(row[-1]),
                    done=hi == horizon - 1,
                )
            )
        trajectories.append(Trajectory(transitions))
    return ExpertDataset(
        env_id=env_id,
        obs_dim=obs_dim,
        act_dim=act_dim,
        horizon=horizon,
        method=METHOD_NAMES[method_tag],
        seed=int(seed),
        trajectories=trajectories,
    )
