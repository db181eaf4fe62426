"""Denoiser backbones: U-ViT and the two cross-attention DiT families.

All three share patchify/unpatchify, sinusoidal time embedding -> MLP, and
pre-norm attention/MLP blocks built from the tensor-layer primitives.

U-ViT: one self-attention sequence [time | text | condition | image] with
long skips pairing block i into block d-1-i; the concat fusion starts as
identity on the running stream (skip half zero) so skips are
function-preserving at init. Cross-attention DiT: blocks
self-attend over image tokens only and cross-attend into the raw text
embeddings (width c); timestep enters through norm modulation, either a
shared 6h projection with per-block offsets ("adaln-single") or per-block
affine maps of the time embedding ("per-block"). Text is never written to.
"""

from __future__ import annotations

import collections
import math

import numpy as np

from . import config as cfglib
from . import tensor as ops
from .tensor import Tensor

TIME_FREQ_DIM = 256  # sinusoidal frequency width feeding the time MLP
INIT_STD = 0.02


class InvalidConfigError(ValueError):
    pass


def skip_pairing(d):
    """Long-skip pairs (source, target): (i, d-1-i) for i < floor(d/2)."""
    if d < 2:
        raise ValueError(f"skip pairing needs depth >= 2, got {d}")
    return [(i, d - 1 - i) for i in range(d // 2)]


def timestep_embedding(t, dim=TIME_FREQ_DIM):
    """Standard sinusoidal features of integer timesteps, float64 internally."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def patchify(x, p):
    """(B,C,H,W) ndarray -> (B, HW/p², p²C); within a patch channels vary fastest."""
    b, c, hh, ww = x.shape
    hp, wp = hh // p, ww // p
    y = x.reshape(b, c, hp, p, wp, p).transpose(0, 2, 4, 3, 5, 1)
    return np.ascontiguousarray(y).reshape(b, hp * wp, p * p * c)


def _trunc_normal(rng, shape, std=INIT_STD):
    a = rng.standard_normal(size=shape) * std
    return np.clip(a, -2.0 * std, 2.0 * std).astype(np.float32)


def _mask_to_additive(on, dtype):
    """(B,T) 1/0 key mask -> (B,1,1,T) additive 0/-inf. -inf rows give exact
    zero attention weight, so masked keys cannot perturb any output bit."""
    add = np.where(np.asarray(on) > 0, 0.0, -np.inf).astype(dtype)
    return add[:, None, None, :]


def attention(params, prefix, q_in, kv_in, n_heads, mask_add=None):
    b, tq, h = q_in.shape
    dh = h // n_heads

    def heads(t):
        return ops.transpose(ops.reshape(t, (b, -1, n_heads, dh)), (0, 2, 1, 3))

    q = heads(ops.linear(q_in, params[prefix + "q.w"], params[prefix + "q.b"]))
    k = heads(ops.linear(kv_in, params[prefix + "k.w"], params[prefix + "k.b"]))
    v = heads(ops.linear(kv_in, params[prefix + "v.w"], params[prefix + "v.b"]))
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if mask_add is not None:
        scores = ops.add_const(scores, mask_add)
    out = ops.matmul(ops.softmax(scores), v)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, tq, h))
    return ops.linear(out, params[prefix + "o.w"], params[prefix + "o.b"])


def mlp(params, prefix, x):
    x = ops.gelu(ops.linear(x, params[prefix + "l1.w"], params[prefix + "l1.b"]))
    return ops.linear(x, params[prefix + "l2.w"], params[prefix + "l2.b"])


def modulate(x, shift, scale):
    return ops.add(ops.mul(x, ops.add_const(scale, 1.0)), shift)


def _as_input(t, dtype):
    """Inputs may be ndarrays (constants) or Tensors (trainable upstream,
    e.g. a text embedder whose gradients should flow)."""
    if isinstance(t, Tensor):
        return t
    return Tensor(np.asarray(t, dtype))


class Network:
    """Parameter container + forward. Parameters live in an ordered dict;
    enumeration order is the checkpoint blob order."""

    def __init__(self, config, seed=0, resolution=256, conditioning=None,
                 zero_init_head=True):
        vr = cfglib.validate(config)
        if not vr:
            raise InvalidConfigError("; ".join(vr.violations))
        self.config = config
        self.seed = seed
        self.resolution = resolution
        self.conditioning = conditioning
        self.zero_init_head = zero_init_head
        self._check_conditioning()
        self._params = collections.OrderedDict()
        self._build_params(np.random.default_rng(seed))

    # -- conditioning geometry ------------------------------------------
    def _check_conditioning(self):
        spec = self.conditioning
        if spec is None:
            return
        if spec.mode == cfglib.TOKEN_CONCAT and self.config.family != cfglib.UVIT:
            raise InvalidConfigError(
                "token-concat conditioning needs full self-attention; "
                f"family {self.config.family!r} only cross-attends to text")

    @property
    def latent_side(self):
        return self.resolution // self.config.vae_downsample

    @property
    def n_cond_tokens(self):
        spec = self.conditioning
        if spec is None or spec.mode != cfglib.TOKEN_CONCAT:
            return 0
        return spec.token_count(self.config, self.resolution)

    @property
    def patch_in_channels(self):
        ch = self.config.latent_channels
        if self.conditioning is not None and self.conditioning.mode == cfglib.CHANNEL_CONCAT:
            ch += self.conditioning.channels
        return ch

    # -- parameter bookkeeping ------------------------------------------
    def parameters(self):
        return self._params

    def param_total(self):
        return sum(int(p.data.size) for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def astype(self, dtype):
        for p in self._params.values():
            p.data = p.data.astype(dtype)
        return self

    @property
    def dtype(self):
        return next(iter(self._params.values())).data.dtype

    def _add(self, name, arr):
        self._params[name] = Tensor(arr, requires_grad=True, name=name)

    def _add_linear(self, name, rng, d_in, d_out, zero=False):
        w = np.zeros((d_in, d_out), np.float32) if zero else _trunc_normal(rng, (d_in, d_out))
        self._add(name + ".w", w)
        self._add(name + ".b", np.zeros(d_out, np.float32))

    def _add_layernorm(self, name):
        h = self.config.h
        self._add(name + ".gamma", np.ones(h, np.float32))
        self._add(name + ".beta", np.zeros(h, np.float32))

    def _add_time_mlp(self, rng):
        h = self.config.h
        self._add_linear("time_mlp.l1", rng, TIME_FREQ_DIM, h)
        self._add_linear("time_mlp.l2", rng, h, h)

    def _time_embed(self, t):
        p = self._params
        femb = Tensor(timestep_embedding(t).astype(self.dtype))
        e = ops.linear(femb, p["time_mlp.l1.w"], p["time_mlp.l1.b"])
        return ops.linear(ops.silu(e), p["time_mlp.l2.w"], p["time_mlp.l2.b"])

    def _head_out(self, x):
        """Linear to p²·latent_channels then unpatchify to (B,C,H,W)."""
        p, c = self._params, self.config
        side = self.latent_side // c.p
        b = x.shape[0]
        y = ops.linear(x, p["head.w"], p["head.b"])
        y = ops.reshape(y, (b, side, side, c.p, c.p, c.latent_channels))
        y = ops.transpose(y, (0, 5, 1, 3, 2, 4))
        return ops.reshape(y, (b, c.latent_channels, self.latent_side, self.latent_side))

    def _patch_tokens(self, x, condition):
        """Channel-concat merges the condition before patchify; returns the
        constant patch matrix for the image stream."""
        c = self.config
        if self.conditioning is not None and self.conditioning.mode == cfglib.CHANNEL_CONCAT:
            if condition is None:
                raise ValueError("channel-concat network needs a condition input")
            if condition.shape[-2:] != x.shape[-2:]:
                raise ops.ShapeMismatchError("channel-concat condition", x.shape, condition.shape)
            x = np.concatenate([x, condition.astype(x.dtype)], axis=1)
        elif self.conditioning is None and condition is not None:
            raise ValueError("condition passed to an unconditioned network")
        return patchify(x.astype(self.dtype), c.p)


class UViTNetwork(Network):
    """Self-attention over the joint token sequence with long skips."""

    def _build_params(self, rng):
        c = self.config
        h, d = c.h, c.d
        self._add_linear("patch_embed", rng, c.p * c.p * self.patch_in_channels, h)
        self._add_linear("text_proj", rng, c.text_dim, h)
        self._add_time_mlp(rng)
        spec = self.conditioning
        if spec is not None and spec.mode == cfglib.TOKEN_CONCAT:
            pc = spec.patch(c)
            self._add_linear("cond_embed", rng, pc * pc * spec.channels, h)
        tb = cfglib.token_counts(c, self.resolution)
        self._add("pos_emb", _trunc_normal(rng, (tb.total, h)))
        if self.n_cond_tokens:
            self._add("cond_pos_emb", _trunc_normal(rng, (self.n_cond_tokens, h)))
        for i in range(d):
            pre = f"blocks.{i}."
            self._add_layernorm(pre + "ln1")
            for w in ("q", "k", "v", "o"):
                self._add_linear(pre + "attn." + w, rng, h, h)
            self._add_layernorm(pre + "ln2")
            self._add_linear(pre + "mlp.l1", rng, h, 4 * h)
            self._add_linear(pre + "mlp.l2", rng, 4 * h, h)
        if c.use_skip:
            for j, _ in enumerate(skip_pairing(d)):
                # fusion starts as identity on the running stream with the
                # skip half closed, so flipping use_skip on does not perturb
                # the init-time function; the skip path opens by gradient
                self._add_linear(f"skips.{j}", rng, 2 * h, h)
                w = self._params[f"skips.{j}.w"].data
                w[:h] = np.eye(h, dtype=w.dtype)
                w[h:] = 0.0
        self._add_layernorm("final_ln")
        self._add_linear("head", rng, h, c.p * c.p * c.latent_channels,
                         zero=self.zero_init_head)

    def forward(self, x, t, text, text_mask=None, condition=None):
        p, c = self._params, self.config
        b = x.shape[0]
        n_text = text.shape[1]
        tb = cfglib.token_counts(c, self.resolution)
        if n_text != c.text_len:
            raise ops.ShapeMismatchError("text length", (n_text,), (c.text_len,))

        temb = ops.reshape(self._time_embed(t), (b, 1, c.h))
        text_h = ops.linear(_as_input(text, self.dtype), p["text_proj.w"], p["text_proj.b"])
        img_h = ops.linear(Tensor(self._patch_tokens(x, condition)),
                           p["patch_embed.w"], p["patch_embed.b"])
        pos_t, pos_x, pos_i = ops.split(p["pos_emb"], [1, n_text, tb.image_tokens], axis=0)
        segments = [ops.add(temb, pos_t), ops.add(text_h, pos_x)]
        if self.n_cond_tokens:
            if condition is None:
                raise ValueError("token-concat network needs a condition input")
            cpatch = patchify(condition.astype(self.dtype), self.conditioning.patch(c))
            cond_h = ops.linear(Tensor(cpatch), p["cond_embed.w"], p["cond_embed.b"])
            segments.append(ops.add(cond_h, p["cond_pos_emb"]))
        seq = ops.concat(segments + [ops.add(img_h, pos_i)], axis=1)

        mask_add = None
        if text_mask is not None:
            on = np.concatenate([
                np.ones((b, 1)), np.asarray(text_mask),
                np.ones((b, self.n_cond_tokens + tb.image_tokens))], axis=1)
            mask_add = _mask_to_additive(on, self.dtype)

        fuse_at = {}
        if c.use_skip:
            fuse_at = {tgt: (src, j) for j, (src, tgt) in enumerate(skip_pairing(c.d))}
        stashed = {}
        for i in range(c.d):
            if i in fuse_at:
                src, j = fuse_at[i]
                cat = ops.concat([seq, stashed.pop(src)], axis=2)
                seq = ops.linear(cat, p[f"skips.{j}.w"], p[f"skips.{j}.b"])
            pre = f"blocks.{i}."
            hn = ops.layernorm(seq, p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
            seq = ops.add(seq, attention(p, pre + "attn.", hn, hn, c.n, mask_add))
            hn = ops.layernorm(seq, p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
            seq = ops.add(seq, mlp(p, pre + "mlp.", hn))
            if c.use_skip and i < c.d // 2:
                stashed[i] = seq

        seq = ops.layernorm(seq, p["final_ln.gamma"], p["final_ln.beta"])
        img_seq = ops.split(seq, [1 + n_text + self.n_cond_tokens, tb.image_tokens], axis=1)[1]
        return self._head_out(img_seq)


class CrossAttnDiTNetwork(Network):
    """Image-token self-attention + per-block cross-attention into text."""

    def _build_params(self, rng):
        c = self.config
        h, d = c.h, c.d
        adaln_single = c.family == cfglib.CROSSATTN_ADALN_SINGLE
        self._add_linear("patch_embed", rng, c.p * c.p * self.patch_in_channels, h)
        self._add_time_mlp(rng)
        self._add("pos_emb", _trunc_normal(rng, (cfglib.token_counts(c, self.resolution).image_tokens, h)))
        if adaln_single:
            self._add_linear("t_block", rng, h, 6 * h)
        for i in range(d):
            pre = f"blocks.{i}."
            if adaln_single:
                self._add(pre + "mod_offset", np.zeros((6, h), np.float32))
            else:
                self._add(pre + "mod_scale", np.zeros((6, h), np.float32))
                self._add(pre + "mod_shift", np.zeros((6, h), np.float32))
            for w in ("q", "k", "v", "o"):
                self._add_linear(pre + "attn." + w, rng, h, h)
            for w in ("q", "k", "v", "o"):
                d_in = c.text_dim if w in ("k", "v") else h
                self._add_linear(pre + "cross." + w, rng, d_in, h)
            self._add_linear(pre + "mlp.l1", rng, h, 4 * h)
            self._add_linear(pre + "mlp.l2", rng, 4 * h, h)
        self._add_linear("final_mod", rng, h, 2 * h)
        self._add_linear("head", rng, h, c.p * c.p * c.latent_channels,
                         zero=self.zero_init_head)

    def _block_modulation(self, i, s_act, t6, b):
        """Six (B,1,h) vectors: shift/scale/gate for attention, then MLP."""
        p, h = self._params, self.config.h
        pre = f"blocks.{i}."
        if t6 is not None:
            mod = ops.add(t6, p[pre + "mod_offset"])
        else:
            s3 = ops.reshape(s_act, (b, 1, h))
            mod = ops.add(ops.mul(s3, p[pre + "mod_scale"]), p[pre + "mod_shift"])
        return ops.split(mod, [1] * 6, axis=1)

    def forward(self, x, t, text, text_mask=None, condition=None):
        p, c = self._params, self.config
        b = x.shape[0]
        h = c.h

        temb = self._time_embed(t)
        s_act = ops.silu(temb)
        t6 = None
        if c.family == cfglib.CROSSATTN_ADALN_SINGLE:
            t6 = ops.reshape(ops.linear(s_act, p["t_block.w"], p["t_block.b"]), (b, 6, h))

        text_t = _as_input(text, self.dtype)
        mask_add = _mask_to_additive(text_mask, self.dtype) if text_mask is not None else None

        seq = ops.linear(Tensor(self._patch_tokens(x, condition)),
                         p["patch_embed.w"], p["patch_embed.b"])
        seq = ops.add(seq, p["pos_emb"])

        for i in range(c.d):
            pre = f"blocks.{i}."
            sh_a, sc_a, g_a, sh_m, sc_m, g_m = self._block_modulation(i, s_act, t6, b)
            hn = modulate(ops.layernorm_noaffine(seq), sh_a, sc_a)
            a = attention(p, pre + "attn.", hn, hn, c.n)
            seq = ops.add(seq, ops.mul(ops.add_const(g_a, 1.0), a))
            cn = ops.layernorm_noaffine(seq)
            seq = ops.add(seq, attention(p, pre + "cross.", cn, text_t, c.n, mask_add))
            hn = modulate(ops.layernorm_noaffine(seq), sh_m, sc_m)
            m = mlp(p, pre + "mlp.", hn)
            seq = ops.add(seq, ops.mul(ops.add_const(g_m, 1.0), m))

        fm = ops.reshape(ops.linear(s_act, p["final_mod.w"], p["final_mod.b"]), (b, 2, h))
        shift, scl = ops.split(fm, [1, 1], axis=1)
        seq = modulate(ops.layernorm_noaffine(seq), shift, scl)
        return self._head_out(seq)


def build(config, seed=0, resolution=256, conditioning=None, zero_init_head=True):
    """Construct an initialized network. Parameter total matches the cost
    model's closed-form count exactly; the tests hold us to that."""
    cls = UViTNetwork if config.family == cfglib.UVIT else CrossAttnDiTNetwork
    return cls(config, seed=seed, resolution=resolution, conditioning=conditioning,
               zero_init_head=zero_init_head)
