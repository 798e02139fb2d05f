"""Analytic control environments with hidden true rewards, plus the replay
buffer.

Environment steps are pure functions of (state, action): all randomness
lives in the initial state. The true reward exists for evaluation and
expert construction only; the replay buffer (the learner's data path)
never stores it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    obs_dim: int
    act_dim: int
    horizon: int
    action_low: float = -1.0
    action_high: float = 1.0


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    true_r: float
    done: bool


@dataclass
class LearnerBatch:
    """What training code is allowed to see: no true reward field."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    done: np.ndarray


class PointMassEnv:
    """2-D double integrator, dt = 0.05.

    Position costs dominate, so the optimal behaviour is a clean regulation
    to the origin; returns are always <= 0.
    """

    dt = 0.05

    def __init__(self):
        self.spec = EnvSpec("pointmass", obs_dim=4, act_dim=2, horizon=200)

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        p = rng.uniform(-1.0, 1.0, size=2)
        return np.concatenate([p, np.zeros(2)])

    def step(self, state: np.ndarray, action: np.ndarray):
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        p, v = state[:2], state[2:]
        p_next = p + self.dt * v
        v_next = v + self.dt * a
        s_next = np.concatenate([p_next, v_next])
        true_r = -(p_next @ p_next + 0.1 * (v_next @ v_next) + 0.01 * (a @ a))
        return s_next, float(true_r)


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    return math.atan2(math.sin(theta), math.cos(theta))


class PendulumEnv:
    """Underactuated pendulum; observation (cos th, sin th, thdot).

    theta = 0 is upright (the reward's zero point), theta = pi the stable
    bottom. Torque is the action scaled by 2.
    """

    dt = 0.05
    g = 10.0
    m = 1.0
    length = 1.0
    max_speed = 8.0
    torque_scale = 2.0

    def __init__(self):
        self.spec = EnvSpec("pendulum", obs_dim=3, act_dim=1, horizon=200)

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(-math.pi, math.pi)
        return np.array([math.cos(theta), math.sin(theta), 0.0])

    def step(self, state: np.ndarray, action: np.ndarray):
        cos_t, sin_t, thdot = state
        theta = math.atan2(sin_t, cos_t)
        u = self.torque_scale * float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        cost = wrap_angle(theta) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        acc = (3.0 * self.g / (2.0 * self.length)) * math.sin(theta) + (
            3.0 / (self.m * self.length**2)
        ) * u
        thdot_next = float(np.clip(thdot + acc * self.dt, -self.max_speed, self.max_speed))
        theta_next = theta + thdot_next * self.dt
        s_next = np.array([math.cos(theta_next), math.sin(theta_next), thdot_next])
        return s_next, float(-cost)


ENV_REGISTRY = {"pointmass": PointMassEnv, "pendulum": PendulumEnv}


def make_env(env_id: str):
    try:
        return ENV_REGISTRY[env_id]()
    except KeyError:
        raise ConfigError(
            f"unknown env {env_id!r}; choose from {sorted(ENV_REGISTRY)}"
        ) from None


def rollout(env, policy, rng: np.random.Generator) -> list[Transition]:
    """One full-horizon episode. ``policy`` maps an observation to an action."""
    transitions = []
    s = env.initial_state(rng)
    for i in range(env.spec.horizon):
        a = np.asarray(policy(s), dtype=np.float64).reshape(env.spec.act_dim)
        s_next, true_r = env.step(s, a)
        transitions.append(
            Transition(s=s, a=a, s_next=s_next, true_r=true_r, done=i == env.spec.horizon - 1)
        )
        s = s_next
    return transitions


def episode_return(transitions) -> float:
    return float(sum(t.true_r for t in transitions))


class ReplayBuffer:
    """Fixed-capacity ring of learner-visible transitions."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ConfigError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.s_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def push(self, s, a, s_next, done: float) -> None:
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.s_next[i] = s_next
        self.done[i] = done
        self.cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def sample_indices(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """k independent uniform index draws with replacement."""
        if self.count == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.count, size=k)

    def sample(self, k: int, rng: np.random.Generator) -> LearnerBatch:
        idx = self.sample_indices(k, rng)
        return LearnerBatch(
            s=self.s[idx].copy(),
            a=self.a[idx].copy(),
            s_next=self.s_next[idx].copy(),
            done=self.done[idx].copy(),
        )
