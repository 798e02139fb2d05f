"""Soft actor-critic: twin critics with polyak targets, tanh-squashed
Gaussian policy, and automatic entropy temperature.

The learner consumes whatever reward its batch carries; in the imitation
loop that is always the discriminator's surrogate, never the environment's
hidden reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import AdamState, Graph, MlpParams, Tensor, adam_step, forward_mlp, init_mlp, no_grad
from .numerics import autodiff as ad
from .numerics.checkpoint import pack_scalar, unpack_scalar

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)
_TANH_EPS = 1e-6


@dataclass
class SacBatch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    done: np.ndarray


def _clone_params(params: MlpParams) -> MlpParams:
    from .numerics.autodiff import leaf

    return MlpParams(
        [leaf(w.data.copy()) for w in params.weights],
        [leaf(b.data.copy()) for b in params.biases],
        list(params.activations),
    )


class SacAgent:
    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        rng: np.random.Generator,
        hidden: int = 128,
        gamma: float = 0.99,
        tau: float = 0.005,
        lr_policy: float = 3e-4,
        lr_critic: float = 3e-4,
        lr_alpha: float = 3e-4,
    ):
        if not 0.0 <= gamma <= 1.0:
            raise ConfigError(f"discount must lie in [0, 1], got {gamma}")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.gamma = gamma
        self.tau = tau
        acts = ["relu", "relu", "linear"]
        self.policy = init_mlp([obs_dim, hidden, hidden, 2 * act_dim], acts, rng)
        self.q1 = init_mlp([obs_dim + act_dim, hidden, hidden, 1], acts, rng)
        self.q2 = init_mlp([obs_dim + act_dim, hidden, hidden, 1], acts, rng)
        self.q1_target = _clone_params(self.q1)
        self.q2_target = _clone_params(self.q2)
        self.log_alpha = ad.leaf(np.array(0.0))
        self.target_entropy = -float(act_dim)
        self.opt_policy = AdamState.for_params(self.policy.parameters(), lr_policy)
        self.opt_q1 = AdamState.for_params(self.q1.parameters(), lr_critic)
        self.opt_q2 = AdamState.for_params(self.q2.parameters(), lr_critic)
        self.opt_alpha = AdamState.for_params([self.log_alpha], lr_alpha)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    # --- policy -------------------------------------------------------------

    def _dist(self, s) -> tuple[Tensor, Tensor]:
        out = forward_mlp(self.policy, s)
        mu = ad.slice_cols(out, 0, self.act_dim)
        log_std = ad.clip(
            ad.slice_cols(out, self.act_dim, 2 * self.act_dim), LOG_STD_MIN, LOG_STD_MAX
        )
        return mu, log_std

    def sample_action(self, s, z) -> tuple[Tensor, Tensor]:
        """Reparameterized draw a = tanh(mu + sigma z) and its log-prob.

        Builds graph nodes when called inside a recording Graph; ``z`` is a
        fixed standard-normal array.
        """
        mu, log_std = self._dist(s)
        sigma = ad.exp(log_std)
        u = ad.add(mu, ad.mul(sigma, ad.constant(z)))
        a = ad.tanh(u)
        z_eff = ad.mul(ad.sub(u, mu), ad.exp(ad.neg(log_std)))
        gauss = ad.sub(
            ad.mul(ad.square(z_eff), -0.5), ad.add(log_std, 0.5 * _LOG_2PI)
        )
        squash = ad.log(ad.add(ad.sub(1.0, ad.square(a)), _TANH_EPS))
        logp = ad.tsum(ad.sub(gauss, squash), axis=1)
        return a, logp

    def policy_sample(self, s: np.ndarray, rng: np.random.Generator):
        """Stochastic action(s) in [-1, 1]^act_dim with log-probabilities."""
        s = np.atleast_2d(s)
        z = rng.standard_normal((s.shape[0], self.act_dim))
        with no_grad():
            a, logp = self.sample_action(ad.constant(s), z)
        return a.data, logp.data

    def policy_act(self, s: np.ndarray) -> np.ndarray:
        """Deterministic evaluation action tanh(mu)."""
        with no_grad():
            mu, _ = self._dist(ad.constant(np.atleast_2d(s)))
        return np.tanh(mu.data)

    # --- updates --------------------------------------------------------------

    def critic_targets(self, batch: SacBatch, rng: np.random.Generator) -> np.ndarray:
        """y = r + gamma (1 - done) (min target Q - alpha log pi) at s_next."""
        z = rng.standard_normal((batch.s_next.shape[0], self.act_dim))
        with no_grad():
            a_next, logp_next = self.sample_action(ad.constant(batch.s_next), z)
            sa = np.concatenate([batch.s_next, a_next.data], axis=1)
            q1t = forward_mlp(self.q1_target, sa).data[:, 0]
            q2t = forward_mlp(self.q2_target, sa).data[:, 0]
        soft_q = np.minimum(q1t, q2t) - self.alpha * logp_next.data
        return batch.r + self.gamma * (1.0 - batch.done) * soft_q

    def update(self, batch: SacBatch, rng: np.random.Generator) -> dict:
        y = self.critic_targets(batch, rng)[:, None]
        sa = np.concatenate([batch.s, batch.a], axis=1)

        g = Graph()
        with g:
            q1 = forward_mlp(self.q1, ad.constant(sa))
            q2 = forward_mlp(self.q2, ad.constant(sa))
            loss_q1 = ad.mean(ad.square(ad.sub(q1, ad.constant(y))))
            loss_q2 = ad.mean(ad.square(ad.sub(q2, ad.constant(y))))
            loss_critic = ad.add(loss_q1, loss_q2)
        critic_params = self.q1.parameters() + self.q2.parameters()
        grads = g.backward(loss_critic, wrt=critic_params)
        adam_step(self.opt_q1, self.q1.parameters(), grads)
        adam_step(self.opt_q2, self.q2.parameters(), grads)

        z = rng.standard_normal((batch.s.shape[0], self.act_dim))
        g = Graph()
        with g:
            a_new, logp = self.sample_action(ad.constant(batch.s), z)
            sa_new = ad.concat(ad.constant(batch.s), a_new)
            q_min = ad.minimum(forward_mlp(self.q1, sa_new), forward_mlp(self.q2, sa_new))
            loss_policy = ad.mean(
                ad.sub(ad.mul(logp, self.alpha), ad.slice_cols(q_min, 0, 1))
            )
        pgrads = g.backward(loss_policy, wrt=self.policy.parameters())
        adam_step(self.opt_policy, self.policy.parameters(), pgrads)

        # temperature: d/dlog_alpha of -log_alpha * (logp + target_entropy)
        alpha_grad = -(np.mean(logp.data) + self.target_entropy)
        adam_step(
            self.opt_alpha, [self.log_alpha], {self.log_alpha: ad.constant(np.array(alpha_grad))}
        )

        self.polyak_update()
        return {
            "critic_loss": loss_critic.item(),
            "policy_loss": loss_policy.item(),
            "alpha": self.alpha,
            "entropy_estimate": -float(np.mean(logp.data)),
        }

    def polyak_update(self) -> None:
        for target, online in ((self.q1_target, self.q1), (self.q2_target, self.q2)):
            for tp, op in zip(target.parameters(), online.parameters()):
                tp.data *= 1.0 - self.tau
                tp.data += self.tau * op.data

    # --- persistence ----------------------------------------------------------

    def to_raw(self) -> dict:
        def layers(p: MlpParams):
            return [(w.data.copy(), b.data.copy()) for w, b in zip(p.weights, p.biases)]

        return {
            "pi": layers(self.policy),
            "q1": layers(self.q1),
            "q2": layers(self.q2),
            "q1_target": layers(self.q1_target),
            "q2_target": layers(self.q2_target),
            "log_alpha": pack_scalar(float(self.log_alpha.data)),
        }

    def load_raw(self, raw: dict) -> None:
        def fill(p: MlpParams, layers):
            for (w, b), wt, bt in zip(layers, p.weights, p.biases):
                np.copyto(wt.data, w)
                np.copyto(bt.data, b)

        fill(self.policy, raw["pi"])
        fill(self.q1, raw["q1"])
        fill(self.q2, raw["q2"])
        fill(self.q1_target, raw["q1_target"])
        fill(self.q2_target, raw["q2_target"])
        self.log_alpha.data = np.array(unpack_scalar(raw["log_alpha"]))


def evaluate_policy(agent: SacAgent, env, episodes: int, seed_seq) -> np.ndarray:
    """True returns of the deterministic policy over fresh derived seeds."""
    from .envs import episode_return, rollout

    returns = []
    for child in seed_seq.spawn(episodes):
        rng = np.random.default_rng(child)
        traj = rollout(env, lambda s: agent.policy_act(s)[0], rng)
        returns.append(episode_return(traj))
    return np.array(returns)
