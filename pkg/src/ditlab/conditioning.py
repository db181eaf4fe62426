"""Local conditions (inpainting mask+image, edge maps) and the two ways of
feeding them to a backbone.

Token concatenation tokenizes the condition with its own patch embedder and
positional segment and appends it to the sequence; it needs full
self-attention, so U-ViT only. Channel concatenation stacks the condition
onto the noise latent before patchify and works for every family, but the
condition must match the latent resolution. Toy conditions live directly in
latent space; no VAE pass.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import backbone
from . import config as cfglib

INPAINT = "inpaint"
EDGE = "edge"
CONDITION_KINDS = (INPAINT, EDGE)

# inpainting masks cover this fraction range of the latent area
COVER_MIN = 0.10
COVER_MAX = 0.60


@dataclasses.dataclass(frozen=True)
class ConditioningSpec:
    """How a local condition enters the network.

    channels: condition channels entering the embedder (inpaint: masked
    latent + 1 mask channel). patch_size/latent_size of 0 mean "same as the
    image stream"; token mode may override both, which is the point of the
    scheme: the condition resolution is not tied to the image resolution.
    """

    mode: str
    kind: str
    channels: int
    patch_size: int = 0
    latent_size: int = 0

    def __post_init__(self):
        if self.mode not in cfglib.CONDITION_MODES:
            raise ValueError(f"unknown condition mode {self.mode!r}")
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if self.channels < 1:
            raise ValueError("condition channels must be positive")

    def patch(self, config):
        return self.patch_size or config.patch_size

    def latent_side(self, config, resolution):
        return self.latent_size or resolution // config.vae_downsample

    def token_count(self, config, resolution):
        if self.mode != cfglib.TOKEN_CONCAT:
            return 0
        side = self.latent_side(config, resolution)
        pc = self.patch(config)
        if side % pc != 0:
            raise ValueError(f"condition side {side} not divisible by patch {pc}")
        return (side // pc) ** 2

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def inpaint_spec(mode, config, **kw):
    return ConditioningSpec(mode=mode, kind=INPAINT,
                            channels=config.latent_channels + 1, **kw)


def edge_spec(mode, config, **kw):
    return ConditioningSpec(mode=mode, kind=EDGE, channels=1, **kw)


def attach_condition(network, spec):
    """Rebuild the network with the condition pathway added, carrying over
    every base parameter. The parameter delta is exactly the new embedder
    (+ positional segment) for token mode, or the widened patch-embed rows
    for channel mode."""
    net = backbone.build(network.config, seed=network.seed,
                         resolution=network.resolution, conditioning=spec,
                         zero_init_head=network.zero_init_head)
    old = network.parameters()
    for name, t in net.parameters().items():
        if name in old and old[name].data.shape == t.data.shape:
            t.data = old[name].data.copy()
    if spec.mode == cfglib.CHANNEL_CONCAT:
        # patch_embed.w grew rows; transplant the image-channel block
        c = network.config
        neww = net.parameters()["patch_embed.w"].data
        oldw = old["patch_embed.w"].data
        h = c.hidden_dim
        nv = neww.reshape(c.p, c.p, c.latent_channels + spec.channels, h)
        nv[:, :, :c.latent_channels, :] = oldw.reshape(c.p, c.p, c.latent_channels, h)
    return net


# ---------------------------------------------------------------------------
# synthetic condition generators

def valid_mask_rects(height, width):
    """All (w, h) rectangle shapes whose area fraction lies in the coverage
    band, plus the exact mean fraction of that set. The generator samples
    uniformly from this list, so the configured mean is analytic."""
    pairs = []
    area = height * width
    for w in range(1, width + 1):
        for h in range(1, height + 1):
            f = (w * h) / area
            if COVER_MIN <= f <= COVER_MAX:
                pairs.append((w, h))
    if not pairs:
        raise ValueError(f"no rectangle fits the coverage band on {height}x{width}")
    mean = sum(w * h for w, h in pairs) / (len(pairs) * area)
    return pairs, mean


def apply_mask(x0, mask):
    """masked = x0 * (1 - mask); mask is 1 on hidden pixels."""
    return (x0 * (1.0 - mask)).astype(x0.dtype)


def make_inpaint_batch(x0, rng):
    """Random rectangular masks with per-mask coverage in [0.10, 0.60].

    Returns (masked_latent, mask, target); mask is (B,1,H,W), target is x0.
    """
    b, _, hh, ww = x0.shape
    pairs, _ = valid_mask_rects(hh, ww)
    mask = np.zeros((b, 1, hh, ww), dtype=x0.dtype)
    which = rng.integers(0, len(pairs), size=b)
    for i in range(b):
        w, h = pairs[which[i]]
        top = rng.integers(0, hh - h + 1)
        left = rng.integers(0, ww - w + 1)
        mask[i, 0, top:top + h, left:left + w] = 1.0
    return apply_mask(x0, mask), mask, x0


def inpaint_condition(masked_latent, mask):
    """Stack masked latent + mask into the (B, C+1, H, W) condition tensor."""
    return np.concatenate([masked_latent, mask.astype(masked_latent.dtype)], axis=1)


def make_edge_batch(x0, threshold=0.5):
    """Forward-difference gradient magnitude on the channel mean, thresholded
    to a binary (B,1,H,W) map. A stand-in for a real edge detector."""
    g = np.mean(np.asarray(x0, dtype=np.float32), axis=1)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, :, :-1] = g[:, :, 1:] - g[:, :, :-1]
    gy[:, :-1, :] = g[:, 1:, :] - g[:, :-1, :]
    mag = np.sqrt(gx * gx + gy * gy)
    return (mag > threshold).astype(np.float32)[:, None]
