"""Forward-noising process and the diffusion-loss discriminator.

A linear variance schedule defines the noising process. The discriminator
score of a pair vector x0 is exp(-Diff) where Diff is the squared error of
the denoiser's noise prediction at a noised version of x0: pairs the
denoiser has learned well score near 1, everything else decays toward 0.
The surrogate reward averages -log(1 - D) over every schedule step with one
shared noise draw, so a single reward query sweeps the whole schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InternalError, UsageError
from .numerics import MlpParams, Tensor, forward_mlp, init_mlp
from .numerics import autodiff as ad

# discriminator clamp: keeps log D and log(1 - D) finite at both extremes
D_FLOOR = 1e-7
D_CEIL = 1.0 - 1e-7

PAIR_MODES = ("state_action", "state_only")


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed noise-intensity tables.

    ``alpha_bar[t-1]`` is the cumulative signal retention after t steps.
    ``sigma_sq`` (the fixed per-step posterior variance, equal to beta) is
    kept for completeness; nothing in the training loop reads it because
    reverse-process sampling is out of scope.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_sq: np.ndarray


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> DiffusionSchedule:
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"beta endpoints must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(
        T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma_sq=beta.copy()
    )


@dataclass
class PairBatch:
    """Flattened pair vectors: concat(s, a) or concat(s, s_next)."""

    x0: np.ndarray  # (batch, d)
    mode: str

    def __post_init__(self):
        if self.mode not in PAIR_MODES:
            raise ConfigError(f"unknown pair mode {self.mode!r}")
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        if self.x0.ndim != 2:
            raise ConfigError(f"pair batch must be 2-D, got shape {self.x0.shape}")
        if not np.all(np.isfinite(self.x0)):
            raise InternalError("pair batch contains non-finite values")

    @property
    def dim(self) -> int:
        return self.x0.shape[1]

    def __len__(self) -> int:
        return self.x0.shape[0]


@dataclass
class NoiseDraw:
    """One (timestep, noise) draw per batch row."""

    t: np.ndarray  # (batch,) ints in [1, T]
    eps: np.ndarray  # (batch, d)


def sample_draw(rng: np.random.Generator, batch: int, dim: int, T: int) -> NoiseDraw:
    t = rng.integers(1, T + 1, size=batch)
    eps = rng.standard_normal((batch, dim))
    return NoiseDraw(t=t, eps=eps)


def _check_t(t: np.ndarray, T: int):
    if np.any(t < 1) or np.any(t > T):
        raise UsageError(f"timesteps must lie in [1, {T}]")


def forward_noise(x0, draw: NoiseDraw, sched: DiffusionSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, rowwise in t.

    Accepts an ndarray (returns ndarray) or a Tensor (returns a Tensor so
    gradients can flow back into x0).
    """
    _check_t(draw.t, sched.T)
    ab = sched.alpha_bar[draw.t - 1][:, None]
    scale = np.sqrt(ab)
    noise_scale = np.sqrt(1.0 - ab)
    if isinstance(x0, Tensor):
        return ad.add(ad.mul(x0, ad.constant(scale)), ad.constant(noise_scale * draw.eps))
    return scale * np.asarray(x0) + noise_scale * draw.eps


class DenoiserNet:
    """Noise-prediction MLP with a learned linear timestep embedding.

    The scalar t/T (normalized so behaviour is invariant to schedule
    length) is mapped through a linear layer and concatenated to the noised
    pair vector before the trunk.
    """

    def __init__(self, embed: MlpParams, trunk: MlpParams):
        if embed.in_dim != 1:
            raise ConfigError("timestep embedding must map a scalar")
        # trunk input is pair dim + embedding dim; trunk output is pair dim
        if trunk.in_dim != trunk.out_dim + embed.out_dim:
            raise ConfigError(
                f"trunk input {trunk.in_dim} must equal pair dim {trunk.out_dim} "
                f"+ embedding dim {embed.out_dim}"
            )
        self.embed = embed
        self.trunk = trunk

    @classmethod
    def create(cls, pair_dim: int, rng, hidden: int = 128, embed_dim: int = 8) -> "DenoiserNet":
        embed = init_mlp([1, embed_dim], ["linear"], rng)
        trunk = init_mlp(
            [pair_dim + embed_dim, hidden, hidden, pair_dim],
            ["mish", "mish", "linear"],
            rng,
        )
        return cls(embed, trunk)

    @property
    def pair_dim(self) -> int:
        return self.trunk.out_dim

    def parameters(self):
        return self.embed.parameters() + self.trunk.parameters()

    def predict(self, x_t, t: np.ndarray, T: int) -> Tensor:
        """Predicted noise for noised input x_t at (1-indexed) timesteps t."""
        xt = x_t if isinstance(x_t, Tensor) else ad.constant(np.atleast_2d(x_t))
        t_norm = ad.constant((np.asarray(t, dtype=np.float64) / T)[:, None])
        emb = ad.add(ad.matmul(t_norm, self.embed.weights[0]), self.embed.biases[0])
        return forward_mlp(self.trunk, ad.concat(xt, emb))

    def predict_values(self, x_t: np.ndarray, t: np.ndarray, T: int) -> np.ndarray:
        """Graph-free twin of :meth:`predict` for reward sweeps.

        Same arithmetic, in-place where possible; gradient paths never run
        through here. Kept equal to the graph path by a property test.
        """
        t_norm = (np.asarray(t, dtype=np.float64) / T)[:, None]
        emb = t_norm @ self.embed.weights[0].data + self.embed.biases[0].data
        h = np.concatenate([x_t, emb], axis=1)
        for w, b, act in zip(self.trunk.weights, self.trunk.biases, self.trunk.activations):
            h = h @ w.data
            h += b.data
            if act == "mish":
                h *= ad.tanh_softplus_values(h)
        return h

    def to_raw(self) -> dict:
        return {
            "t_embed": [(self.embed.weights[0].data.copy(), self.embed.biases[0].data.copy())],
            "denoiser": [
                (w.data.copy(), b.data.copy())
                for w, b in zip(self.trunk.weights, self.trunk.biases)
            ],
        }

    @classmethod
    def from_raw(cls, raw: dict) -> "DenoiserNet":
        from .numerics.autodiff import leaf

        ew, eb = raw["t_embed"][0]
        embed = MlpParams([leaf(ew)], [leaf(eb)], ["linear"])
        layers = raw["denoiser"]
        acts = ["mish"] * (len(layers) - 1) + ["linear"]
        trunk = MlpParams(
            [leaf(w) for w, _ in layers], [leaf(b) for _, b in layers], acts
        )
        return cls(embed, trunk)


def diff_loss(denoiser: DenoiserNet, x0, draw: NoiseDraw, sched: DiffusionSchedule) -> Tensor:
    """Per-row squared noise-prediction error; differentiable in both the
    denoiser parameters and (when x0 is a tracked Tensor) the input."""
    data = x0.x0 if isinstance(x0, PairBatch) else x0
    x_t = forward_noise(data, draw, sched)
    pred = denoiser.predict(x_t, draw.t, sched.T)
    err = ad.sub(ad.constant(draw.eps), pred)
    return ad.tsum(ad.square(err), axis=1)


def discriminate(diff) -> Tensor:
    """D = clamp(exp(-Diff)); strictly decreasing in Diff between clamps."""
    d = diff if isinstance(diff, Tensor) else ad.constant(diff)
    if np.any(d.data < 0):
        raise InternalError("diffusion losses must be non-negative")
    return ad.clip(ad.exp(ad.neg(d)), D_FLOOR, D_CEIL)


def surrogate_reward(
    denoiser: DenoiserNet, x0: np.ndarray, eps: np.ndarray, sched: DiffusionSchedule
) -> np.ndarray:
    """R = -(1/T) sum_t log(1 - D_t), one shared eps across the full sweep.

    Pure evaluation: no gradient graph is built.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if eps.shape != x0.shape:
        raise ConfigError(f"eps shape {eps.shape} must match x0 shape {x0.shape}")
    B, d = x0.shape
    T = sched.T
    ab = sched.alpha_bar[:, None, None]  # (T,1,1)
    x_t = np.sqrt(ab) * x0[None] + np.sqrt(1.0 - ab) * eps[None]  # (T,B,d)
    t_all = np.repeat(np.arange(1, T + 1), B)
    pred = denoiser.predict_values(x_t.reshape(T * B, d), t_all, T)
    pred = pred.reshape(T, B, d)
    pred -= eps[None]
    diff = np.einsum("tbd,tbd->tb", pred, pred)
    D = np.clip(np.exp(-diff), D_FLOOR, D_CEIL)
    return -np.log1p(-D).mean(axis=0)
