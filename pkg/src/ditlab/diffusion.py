"""DDPM forward process, training loss, DDIM sampling with CFG, and the
resolution-shifted schedule.

Schedule tables are float64 throughout; the scaled-linear betas (linear in
sqrt-beta space, 8.5e-4 -> 1.2e-2 over 1000 steps) follow the usual latent
diffusion defaults. Timesteps are 1-based: alpha_bar(t) for t in [1, T],
with alpha_bar(0) defined as 1 where the sampler needs it.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import tensor as ops
from .tensor import Tensor

DEFAULT_T = 1000
BETA_START = 8.5e-4
BETA_END = 1.2e-2
P_UNCOND = 0.1  # CFG null-text dropout rate during training


@dataclasses.dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray        # (T,) float64
    alpha_bars: np.ndarray   # (T,) float64, strictly decreasing
    kind: str = "scaled-linear"
    shift: float = 1.0

    @property
    def T_train(self):
        return len(self.betas)

    def alpha_bar(self, t):
        """alpha_bar at 1-based timestep(s); t=0 -> exactly 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T_train):
            raise ValueError(f"timestep out of [0, {self.T_train}]: {t}")
        ab = np.concatenate([[1.0], self.alpha_bars])
        return ab[t]

    def snr(self):
        return self.alpha_bars / (1.0 - self.alpha_bars)


def make_schedule(t_train=DEFAULT_T, beta_start=BETA_START, beta_end=BETA_END):
    betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), t_train,
                        dtype=np.float64) ** 2
    if not (0.0 < betas[0] < betas[-1] < 1.0):
        raise ValueError(f"degenerate beta range [{betas[0]}, {betas[-1]}]")
    alpha_bars = np.cumprod(1.0 - betas)
    if alpha_bars[-1] <= 0.0 or np.any(np.diff(alpha_bars) >= 0.0):
        raise ValueError("alpha_bar must stay positive and strictly decrease")
    return DiffusionSchedule(betas=betas, alpha_bars=alpha_bars)


def shifted_schedule(base, resolution):
    """Divide the SNR at every t by (resolution/256)^2, keeping the same
    number of steps. Remap: ab' = ab / (ab + s^2 (1 - ab)). Resolution 256
    returns the base tables unchanged."""
    from . import config as cfglib
    if resolution not in cfglib.SUPPORTED_RESOLUTIONS:
        raise ValueError(f"unsupported resolution {resolution}")
    s = resolution / 256.0
    if s == 1.0:
        return base
    ab = base.alpha_bars / (base.alpha_bars + s * s * (1.0 - base.alpha_bars))
    alphas = ab / np.concatenate([[1.0], ab[:-1]])
    return DiffusionSchedule(betas=1.0 - alphas, alpha_bars=ab,
                             kind=base.kind, shift=s)


def q_sample(x0, t, noise, schedule):
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise, per-sample t in [1, T]."""
    t = np.asarray(t)
    if np.any(t < 1):
        raise ValueError(f"timestep below 1: {t}")
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    ab = schedule.alpha_bar(t).reshape((-1,) + (1,) * (x0.ndim - 1))
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
    return xt.astype(x0.dtype)


def invert_q_sample(x_t, t, noise, schedule):
    """Algebraic inverse of q_sample given the same noise (test identity)."""
    ab = schedule.alpha_bar(np.asarray(t)).reshape((-1,) + (1,) * (x_t.ndim - 1))
    return ((x_t - np.sqrt(1.0 - ab) * noise) / np.sqrt(ab)).astype(x_t.dtype)


def _null_like(text):
    data = text.data if isinstance(text, Tensor) else text
    return np.zeros_like(np.asarray(data))


def training_loss(network, x0, text, text_mask, schedule, rng,
                  p_uncond=P_UNCOND, condition=None):
    """Draw t ~ U[1,T] and eps ~ N(0,1), drop text to the null embedding with
    probability p_uncond per sample, and return MSE(eps_hat, eps).

    rng consumption order is fixed (t, eps, dropout) so a seeded run is
    bit-reproducible. text may be a Tensor (trainable embedder upstream);
    dropped rows then contribute zero gradient to the embedder.
    """
    b = x0.shape[0]
    t = rng.integers(1, schedule.T_train + 1, size=b)
    eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    drop = rng.random(b) < p_uncond
    mask = None if text_mask is None else np.asarray(text_mask).copy()
    if mask is not None:
        mask[drop] = 1  # null rows carry no padding
    if isinstance(text, Tensor):
        keep = (~drop).astype(text.dtype)[:, None, None]
        text_in = ops.mul_const(text, keep)
    else:
        text_in = np.where(drop[:, None, None], _null_like(text), text)
    x_t = q_sample(x0, t, eps, schedule)
    pred = network.forward(x_t, t, text_in, text_mask=mask, condition=condition)
    return ops.mse(pred, eps)


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    ddim_steps: int = 50
    cfg_scale: float = 7.5
    seed: int = 0
    eta: float = 0.0

    def validate(self, schedule):
        if not (1 <= self.ddim_steps <= schedule.T_train):
            raise ValueError(f"ddim_steps {self.ddim_steps} outside [1, {schedule.T_train}]")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")
        if self.eta != 0.0:
            raise ValueError("only the deterministic eta=0 sampler is implemented")


def ddim_timesteps(t_train, steps):
    """Descending subsequence from T to 1, endpoints included."""
    ts = np.unique(np.round(np.linspace(t_train, 1, steps)).astype(np.int64))[::-1]
    return ts


def cfg_epsilon(network, x, t, text, text_mask, scale, condition=None):
    """eps_u + scale*(eps_c - eps_u), with exact collapse at scale 0 and 1 so
    those settings are bit-identical to single-branch sampling."""
    def predict(txt, msk):
        return network.forward(x, t, txt, text_mask=msk, condition=condition).data

    if scale == 1.0:
        return predict(text, text_mask)
    null = _null_like(text)
    if scale == 0.0:
        return predict(null, None)
    eps_c = predict(text, text_mask)
    eps_u = predict(null, None)
    return eps_u + scale * (eps_c - eps_u)


def ddim_sample(network, text, sampler_config, schedule, shape,
                text_mask=None, condition=None, trace=None):
    """Deterministic DDIM (eta=0): x -> x0_hat -> step to the previous level.
    The final step lands on alpha_bar(0)=1, i.e. returns x0_hat."""
    sampler_config.validate(schedule)
    rng = np.random.default_rng(sampler_config.seed)
    x = rng.standard_normal(shape).astype(np.float32)
    ts = ddim_timesteps(schedule.T_train, sampler_config.ddim_steps)
    for i, t_now in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab_t = schedule.alpha_bar(int(t_now))
        ab_p = schedule.alpha_bar(int(t_prev))
        t_vec = np.full(shape[0], t_now, dtype=np.int64)
        eps = cfg_epsilon(network, x, t_vec, text, text_mask,
                          sampler_config.cfg_scale, condition)
        x0_hat = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
        x = (np.sqrt(ab_p) * x0_hat + np.sqrt(1.0 - ab_p) * eps).astype(np.float32)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite latent at t={t_now}")
        if trace is not None:
            trace.append((int(t_now), x.copy()))
    return x
