"""The adversarial imitation loop: off-policy SAC driven by a learned
surrogate reward, with either the diffusion-loss discriminator or a vanilla
sigmoid discriminator behind the same interface.

Per environment step after warmup: one discriminator ascent step on
mean log D(expert) + mean log(1 - D(policy)) (minus the optional gradient
penalty), then one SAC update on a freshly sampled batch relabeled with
surrogate rewards from the current discriminator. True rewards never enter
this module; evaluation rollouts report them out of band.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .diffusion import (
    D_CEIL,
    D_FLOOR,
    DenoiserNet,
    DiffusionSchedule,
    NoiseDraw,
    PairBatch,
    diff_loss,
    discriminate,
    make_schedule,
    sample_draw,
    surrogate_reward,
)
from .envs import ReplayBuffer, episode_return, make_env, rollout
from .errors import ConfigError, TrainingAborted, UsageError
from .expert import load_dataset, subsample
from .metrics import MetricsRow, MetricsWriter
from .numerics import AdamState, Graph, MlpParams, adam_step, forward_mlp, init_mlp, no_grad
from .numerics import autodiff as ad
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .sac import SacAgent, SacBatch

ALGOS = ("diffail", "gail")

# per-env gradient-penalty defaults: (enabled, weight)
GP_DEFAULTS = {"pointmass": (True, 0.1), "pendulum": (False, 0.0)}


# ---------------------------------------------------------------------------
# pair construction


def make_pairs(s, a, s_next, mode: str) -> PairBatch:
    """state_action -> concat(s, a); state_only -> concat(s, s_next)."""
    s = np.atleast_2d(s)
    if mode == "state_action":
        if a is None:
            raise ConfigError("state_action mode needs actions")
        return PairBatch(np.concatenate([s, np.atleast_2d(a)], axis=1), mode)
    if mode == "state_only":
        if s_next is None:
            raise ConfigError("state_only mode needs successor states")
        return PairBatch(np.concatenate([s, np.atleast_2d(s_next)], axis=1), mode)
    raise ConfigError(f"unknown pair mode {mode!r}")


def pairs_from_batch(batch, mode: str) -> PairBatch:
    return make_pairs(batch.s, batch.a, batch.s_next, mode)


def pairs_from_transitions(transitions, mode: str) -> PairBatch:
    s = np.array([t.s for t in transitions])
    a = np.array([t.a for t in transitions])
    sn = np.array([t.s_next for t in transitions])
    return make_pairs(s, a, sn, mode)


def pair_dim(obs_dim: int, act_dim: int, mode: str) -> int:
    return obs_dim + (act_dim if mode == "state_action" else obs_dim)


# ---------------------------------------------------------------------------
# discriminators


def disc_loss_diffail(
    denoiser: DenoiserNet,
    expert_batch: PairBatch,
    policy_batch: PairBatch,
    draw: NoiseDraw,
    sched: DiffusionSchedule,
):
    """Scalar adversarial objective (to be maximized), shared draw on both
    sides. Also returns per-side stats for logging."""
    if expert_batch.mode != policy_batch.mode or expert_batch.dim != policy_batch.dim:
        raise ConfigError("expert and policy batches must share mode and dims")
    diff_e = diff_loss(denoiser, expert_batch, draw, sched)
    diff_p = diff_loss(denoiser, policy_batch, draw, sched)
    d_e = discriminate(diff_e)
    d_p = discriminate(diff_p)
    obj = ad.add(ad.mean(ad.log(d_e)), ad.mean(ad.log(ad.sub(1.0, d_p))))
    stats = {
        "disc_expert_mean": float(d_e.data.mean()),
        "disc_policy_mean": float(d_p.data.mean()),
        "diff_loss_expert": float(diff_e.data.mean()),
        "diff_loss_policy": float(diff_p.data.mean()),
    }
    return obj, stats


def disc_loss_gail(disc: "GailDiscriminator", expert_batch: PairBatch, policy_batch: PairBatch):
    if expert_batch.mode != policy_batch.mode or expert_batch.dim != policy_batch.dim:
        raise ConfigError("expert and policy batches must share mode and dims")
    d_e = disc.d_values(ad.constant(expert_batch.x0))
    d_p = disc.d_values(ad.constant(policy_batch.x0))
    obj = ad.add(ad.mean(ad.log(d_e)), ad.mean(ad.log(ad.sub(1.0, d_p))))
    stats = {
        "disc_expert_mean": float(d_e.data.mean()),
        "disc_policy_mean": float(d_p.data.mean()),
        "diff_loss_expert": float("nan"),
        "diff_loss_policy": float("nan"),
    }
    return obj, stats


class DiffusionDiscriminator:
    """Diffusion-loss discriminator plus its surrogate reward."""

    algo = "diffail"

    def __init__(self, denoiser: DenoiserNet, sched: DiffusionSchedule):
        self.denoiser = denoiser
        self.sched = sched

    @classmethod
    def create(cls, dim: int, sched: DiffusionSchedule, rng, hidden=128, embed_dim=8):
        return cls(DenoiserNet.create(dim, rng, hidden=hidden, embed_dim=embed_dim), sched)

    def parameters(self):
        return self.denoiser.parameters()

    def objective(self, expert_batch, policy_batch, draw):
        return disc_loss_diffail(self.denoiser, expert_batch, policy_batch, draw, self.sched)

    def logd_rows(self, x, draw: NoiseDraw):
        """Per-row log D at a fixed draw; differentiable w.r.t. x."""
        return ad.log(discriminate(diff_loss(self.denoiser, x, draw, self.sched)))

    def rewards(self, x0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal(x0.shape)
        return surrogate_reward(self.denoiser, x0, eps, self.sched)

    def score(self, x0: np.ndarray, rng: np.random.Generator, draws: int = 16) -> np.ndarray:
        """Monte-Carlo mean discriminator output per pair."""
        total = np.zeros(x0.shape[0])
        with no_grad():
            for _ in range(draws):
                draw = sample_draw(rng, x0.shape[0], x0.shape[1], self.sched.T)
                diff = diff_loss(self.denoiser, x0, draw, self.sched).data
                total += np.clip(np.exp(-diff), D_FLOOR, D_CEIL)
        return total / draws

    def probe(self, x0: np.ndarray, rng: np.random.Generator, draws: int = 4):
        d_mean = 0.0
        diff_mean = 0.0
        with no_grad():
            for _ in range(draws):
                draw = sample_draw(rng, x0.shape[0], x0.shape[1], self.sched.T)
                diff = diff_loss(self.denoiser, x0, draw, self.sched).data
                d_mean += float(np.clip(np.exp(-diff), D_FLOOR, D_CEIL).mean())
                diff_mean += float(diff.mean())
        return d_mean / draws, diff_mean / draws

    def to_raw(self) -> dict:
        return self.denoiser.to_raw()

    @classmethod
    def from_raw(cls, raw: dict, sched: DiffusionSchedule):
        return cls(DenoiserNet.from_raw(raw), sched)


class GailDiscriminator:
    """MLP logit -> sigmoid, clamped to the same range as the diffusion D."""

    algo = "gail"

    def __init__(self, net: MlpParams):
        self.net = net

    @classmethod
    def create(cls, dim: int, rng, hidden=128):
        return cls(init_mlp([dim, hidden, hidden, 1], ["mish", "mish", "linear"], rng))

    def parameters(self):
        return self.net.parameters()

    def d_values(self, x):
        logits = forward_mlp(self.net, x)
        return ad.clip(ad.sigmoid(ad.slice_cols(logits, 0, 1)), D_FLOOR, D_CEIL)

    def objective(self, expert_batch, policy_batch, draw=None):
        return disc_loss_gail(self, expert_batch, policy_batch)

    def logd_rows(self, x, draw=None):
        return ad.tsum(ad.log(self.d_values(x)), axis=1)

    def rewards(self, x0: np.ndarray, rng=None) -> np.ndarray:
        with no_grad():
            d = self.d_values(ad.constant(x0)).data[:, 0]
        return -np.log1p(-d)

    def score(self, x0: np.ndarray, rng=None, draws: int = 1) -> np.ndarray:
        with no_grad():
            return self.d_values(ad.constant(x0)).data[:, 0]

    def probe(self, x0: np.ndarray, rng=None, draws: int = 1):
        return float(self.score(x0).mean()), float("nan")

    def to_raw(self) -> dict:
        return {
            "disc": [
                (w.data.copy(), b.data.copy())
                for w, b in zip(self.net.weights, self.net.biases)
            ]
        }

    @classmethod
    def from_raw(cls, raw: dict):
        from .numerics.autodiff import leaf

        layers = raw["disc"]
        acts = ["mish"] * (len(layers) - 1) + ["linear"]
        return cls(MlpParams([leaf(w) for w, _ in layers], [leaf(b) for _, b in layers], acts))


def gradient_penalty(graph: Graph, logd_fn, expert_x0, policy_x0, rng):
    """Mean (|grad_x log D(x_hat)| - 1)^2 on rowwise interpolates.

    Must run inside ``graph``; the inner backward keeps the gradient in the
    graph so the penalty trains the discriminator parameters.
    """
    if expert_x0.shape != policy_x0.shape:
        raise ConfigError("gradient penalty needs equal-size batches")
    u = rng.uniform(size=(expert_x0.shape[0], 1))
    x_hat = ad.leaf(u * expert_x0 + (1.0 - u) * policy_x0)
    rows = logd_fn(x_hat)
    gx = graph.backward(ad.tsum(rows), wrt=[x_hat], create_graph=True)[x_hat]
    # 1e-12 keeps the sqrt differentiable when the gradient vanishes
    norms = ad.sqrt(ad.add(ad.tsum(ad.square(gx), axis=1), 1e-12))
    return ad.mean(ad.square(ad.sub(norms, 1.0)))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    algo: str = "diffail"
    env_id: str = "pointmass"
    mode: str = "state_action"
    expert_path: str = ""
    traj_count: int = 1
    seed: int = 0
    total_steps: int = 200_000
    batch_size: int = 256
    diffusion_T: int = 10
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    lr_disc: float = 3e-4
    lr_policy: float = 3e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    grad_penalty: bool | None = None
    gp_weight: float | None = None
    disc_updates_per_step: int = 1
    gamma: float = 0.99
    tau: float = 0.005
    warmup: int = 1000
    eval_interval: int = 2000
    eval_episodes: int = 10
    sac_hidden: int = 128
    disc_hidden: int = 128
    embed_dim: int = 8
    buffer_capacity: int = 1_000_000
    log_path: str = "run.csv"
    ckpt_path: str = ""


def resolve_config(config: TrainConfig) -> TrainConfig:
    """Fill per-env defaults and validate."""
    if config.algo not in ALGOS:
        raise ConfigError(f"unknown algo {config.algo!r}; choose from {ALGOS}")
    gp_default, gp_w_default = GP_DEFAULTS.get(config.env_id, (False, 0.0))
    gp = config.grad_penalty if config.grad_penalty is not None else gp_default
    gp_w = config.gp_weight if config.gp_weight is not None else gp_w_default
    ckpt = config.ckpt_path or str(Path(config.log_path).with_suffix(".ckpt"))
    out = replace(config, grad_penalty=gp, gp_weight=gp_w, ckpt_path=ckpt)
    for name in ("batch_size", "diffusion_T", "eval_interval", "eval_episodes"):
        if getattr(out, name) < 1:
            raise ConfigError(f"{name} must be positive")
    if out.total_steps < 0 or out.warmup < 0:
        raise ConfigError("step counts must be non-negative")
    if out.mode not in ("state_action", "state_only"):
        raise ConfigError(f"unknown mode {out.mode!r}")
    return out


def config_echo(config: TrainConfig) -> dict:
    return {k: v for k, v in sorted(asdict(config).items())}


@dataclass
class TrainResult:
    config: TrainConfig
    log_path: str
    ckpt_path: str
    final_return_mean: float
    final_return_std: float
    expert_mean_return: float
    disc_updates: int
    sac_updates: int
    env_steps: int
    rows: list


# ---------------------------------------------------------------------------
# the loop


def _check_finite(step: int, **values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise TrainingAborted(step, f"{name} is {v}")


def train(config: TrainConfig) -> TrainResult:
    cfg = resolve_config(config)
    env = make_env(cfg.env_id)
    spec = env.spec
    dataset = load_dataset(cfg.expert_path)
    if dataset.env_id != cfg.env_id:
        raise ConfigError(
            f"expert dataset is for {dataset.env_id!r}, not {cfg.env_id!r}"
        )
    if cfg.traj_count > dataset.n_traj:
        raise UsageError(f"requested {cfg.traj_count} of {dataset.n_traj} trajectories")
    demo = subsample(dataset, cfg.traj_count, seed=cfg.seed)
    s_e, a_e, sn_e = demo.stacked()
    expert_x0 = make_pairs(s_e, a_e, sn_e, cfg.mode).x0
    dim = expert_x0.shape[1]
    if dim != pair_dim(spec.obs_dim, spec.act_dim, cfg.mode):
        raise ConfigError("expert pair dims do not match the environment")

    sched = make_schedule(cfg.diffusion_T, cfg.beta_start, cfg.beta_end)
    root = np.random.SeedSequence(cfg.seed)
    train_ss, eval_ss = root.spawn(2)
    rng = np.random.default_rng(train_ss)

    if cfg.algo == "diffail":
        disc = DiffusionDiscriminator.create(
            dim, sched, rng, hidden=cfg.disc_hidden, embed_dim=cfg.embed_dim
        )
    else:
        disc = GailDiscriminator.create(dim, rng, hidden=cfg.disc_hidden)
    agent = SacAgent(
        spec.obs_dim,
        spec.act_dim,
        rng,
        hidden=cfg.sac_hidden,
        gamma=cfg.gamma,
        tau=cfg.tau,
        lr_policy=cfg.lr_policy,
        lr_critic=cfg.lr_critic,
        lr_alpha=cfg.lr_alpha,
    )
    disc_opt = AdamState.for_params(disc.parameters(), cfg.lr_disc)
    buf = ReplayBuffer(cfg.buffer_capacity, spec.obs_dim, spec.act_dim)

    t0 = time.perf_counter()
    disc_updates = sac_updates = 0
    rows: list[MetricsRow] = []
    writer = MetricsWriter(cfg.log_path, config_echo(cfg))

    def run_eval(step: int):
        eval_rng = np.random.default_rng(eval_ss.spawn(1)[0])
        returns, surrogates = [], []
        for _ in range(cfg.eval_episodes):
            traj = rollout(env, lambda s: agent.policy_act(s)[0], eval_rng)
            returns.append(episode_return(traj))
            ep_pairs = pairs_from_transitions(traj, cfg.mode)
            surrogates.append(float(disc.rewards(ep_pairs.x0, eval_rng).sum()))
        idx = eval_rng.integers(0, expert_x0.shape[0], size=min(cfg.batch_size, 256))
        d_e, diff_e = disc.probe(expert_x0[idx], eval_rng)
        pol_probe = pairs_from_batch(buf.sample(len(idx), eval_rng), cfg.mode)
        d_p, diff_p = disc.probe(pol_probe.x0, eval_rng)
        for p in disc.parameters() + agent.policy.parameters():
            if not np.all(np.isfinite(p.data)):
                raise TrainingAborted(step, "non-finite parameter detected")
        row = MetricsRow(
            step=step,
            episode_return_mean=float(np.mean(returns)),
            episode_return_std=float(np.std(returns)),
            surrogate_return_mean=float(np.mean(surrogates)),
            disc_expert_mean=d_e,
            disc_policy_mean=d_p,
            diff_loss_expert=diff_e,
            diff_loss_policy=diff_p,
            wallclock_s=time.perf_counter() - t0,
        )
        rows.append(row)
        writer.write(row)

    s = env.initial_state(rng)
    t_in_episode = 0
    try:
        for n in range(1, cfg.total_steps + 1):
            if n <= cfg.warmup:
                a = rng.uniform(-1.0, 1.0, spec.act_dim)
            else:
                a = agent.policy_sample(s, rng)[0][0]
            s_next, _ = env.step(s, a)  # hidden reward stays hidden
            buf.push(s, a, s_next, 0.0)
            t_in_episode += 1
            if t_in_episode >= spec.horizon:
                s = env.initial_state(rng)
                t_in_episode = 0
            else:
                s = s_next

            if n > cfg.warmup:
                for _ in range(cfg.disc_updates_per_step):
                    pol_batch = pairs_from_batch(buf.sample(cfg.batch_size, rng), cfg.mode)
                    idx = rng.integers(0, expert_x0.shape[0], size=cfg.batch_size)
                    exp_batch = PairBatch(expert_x0[idx], cfg.mode)
                    draw = (
                        sample_draw(rng, cfg.batch_size, dim, sched.T)
                        if cfg.algo == "diffail"
                        else None
                    )
                    g = Graph()
                    with g:
                        obj, _stats = disc.objective(exp_batch, pol_batch, draw)
                        loss = ad.neg(obj)
                        if cfg.grad_penalty:
                            pen = gradient_penalty(
                                g,
                                lambda xh: disc.logd_rows(xh, draw),
                                exp_batch.x0,
                                pol_batch.x0,
                                rng,
                            )
                            loss = ad.add(loss, ad.mul(pen, cfg.gp_weight))
                    grads = g.backward(loss, wrt=disc.parameters())
                    adam_step(disc_opt, disc.parameters(), grads)
                    disc_updates += 1
                    _check_finite(n, disc_loss=loss.item())

                sac_batch = buf.sample(cfg.batch_size, rng)
                x0 = pairs_from_batch(sac_batch, cfg.mode).x0
                r = disc.rewards(x0, rng)
                losses = agent.update(
                    SacBatch(
                        s=sac_batch.s,
                        a=sac_batch.a,
                        s_next=sac_batch.s_next,
                        r=r,
                        done=sac_batch.done,
                    ),
                    rng,
                )
                sac_updates += 1
                _check_finite(
                    n,
                    critic_loss=losses["critic_loss"],
                    policy_loss=losses["policy_loss"],
                )

            if n % cfg.eval_interval == 0 or n == cfg.total_steps:
                run_eval(n)
    finally:
        writer.close()

    save_checkpoint(cfg.ckpt_path, {**disc.to_raw(), **agent.to_raw()})
    return TrainResult(
        config=cfg,
        log_path=cfg.log_path,
        ckpt_path=cfg.ckpt_path,
        final_return_mean=rows[-1].episode_return_mean if rows else float("nan"),
        final_return_std=rows[-1].episode_return_std if rows else float("nan"),
        expert_mean_return=demo.mean_return,
        disc_updates=disc_updates,
        sac_updates=sac_updates,
        env_steps=cfg.total_steps,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# checkpoint loading for evaluation tools


def load_run(ckpt_path, sched: DiffusionSchedule | None = None):
    """Rebuild (discriminator, agent) from a checkpoint.

    The algorithm is inferred from the stored network names; shapes come
    from the arrays. The diffusion discriminator needs its schedule back
    (the checkpoint stores parameters only).
    """
    raw = load_checkpoint(ckpt_path)
    if "denoiser" in raw:
        disc = DiffusionDiscriminator.from_raw(raw, sched or make_schedule(10))
    elif "disc" in raw:
        disc = GailDiscriminator.from_raw(raw)
    else:
        raise ConfigError(f"{ckpt_path}: no discriminator networks found")
    pi_layers = raw["pi"]
    obs_dim = pi_layers[0][0].shape[0]
    act_dim = pi_layers[-1][0].shape[1] // 2
    hidden = pi_layers[0][0].shape[1]
    agent = SacAgent(obs_dim, act_dim, np.random.default_rng(0), hidden=hidden)
    agent.load_raw(raw)
    return disc, agent
