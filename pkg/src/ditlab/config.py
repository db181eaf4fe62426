"""Backbone configuration: families, hyperparameters, named presets, token math.

Three block families are supported:

* ``uvit`` -- pure self-attention ViT over [time | text | image] tokens with
  long skip connections between shallow and deep blocks.
* ``crossattn-adaln-single`` -- self-attention over image tokens plus a
  cross-attention layer reading the text stream in every block; timestep
  modulation comes from one shared MLP with per-block learned offsets.
* ``crossattn-adaln-perblock`` -- same block layout but each block owns its
  timestep modulation parameters.
"""

from __future__ import annotations

import dataclasses
import json

UVIT = "uvit"
CROSSATTN_ADALN_SINGLE = "crossattn-adaln-single"
CROSSATTN_ADALN_PERBLOCK = "crossattn-adaln-perblock"
FAMILIES = (UVIT, CROSSATTN_ADALN_SINGLE, CROSSATTN_ADALN_PERBLOCK)

TIME_TOKEN = "time-token"
ADALN = "adaln"

# Local-condition wiring schemes (the CLI's --condition flag).
TOKEN_CONCAT = "token"
CHANNEL_CONCAT = "channel"
CONDITION_MODES = (TOKEN_CONCAT, CHANNEL_CONCAT)

# Resolutions the cost model and schedules know about.
SUPPORTED_RESOLUTIONS = (256, 512, 1024)


class UnknownPresetError(KeyError):
    """Raised when a preset name is not in the table; carries known names."""

    def __init__(self, name, available):
        self.name = name
        self.available = list(available)
        super().__init__(f"unknown preset {name!r}; available: {', '.join(self.available)}")

    def __str__(self):
        # KeyError would repr-quote the message otherwise
        return self.args[0]


@dataclasses.dataclass(frozen=True)
class ArchConfig:
    """One backbone configuration. Immutable; safe to share across threads."""

    family: str = UVIT
    hidden_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    patch_size: int = 2
    text_dim: int = 64
    text_len: int = 77
    latent_channels: int = 4
    vae_downsample: int = 8
    use_skip: bool = True
    time_conditioning: str = ""  # "" = family default

    def __post_init__(self):
        if self.time_conditioning == "":
            default = TIME_TOKEN if self.family == UVIT else ADALN
            object.__setattr__(self, "time_conditioning", default)

    # h/d/n/p shorthand matching the table column names used everywhere
    @property
    def h(self):
        return self.hidden_dim

    @property
    def d(self):
        return self.depth

    @property
    def n(self):
        return self.num_heads

    @property
    def p(self):
        return self.patch_size

    @property
    def head_dim(self):
        return self.hidden_dim // self.num_heads

    def replace(self, **kw) -> "ArchConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...] = ()

    def __bool__(self):
        return self.ok


@dataclasses.dataclass(frozen=True)
class TokenBreakdown:
    """Token accounting for one (config, resolution) pair."""

    image_tokens: int
    text_tokens: int
    time_tokens: int
    condition_tokens: int = 0
    # cross-attention families keep text out of the self-attended sequence
    self_attention_tokens: int = 0

    @property
    def total(self):
        return self.image_tokens + self.text_tokens + self.time_tokens + self.condition_tokens


def validate(config: ArchConfig) -> ValidationResult:
    """Check config invariants. Violations are data, not exceptions."""
    v = []
    if config.family not in FAMILIES:
        v.append(f"unknown family {config.family!r}")
    for field in ("hidden_dim", "depth", "num_heads", "patch_size", "text_dim",
                  "text_len", "latent_channels", "vae_downsample"):
        if getattr(config, field) < 1:
            v.append(f"{field} must be positive")
    if config.num_heads >= 1 and config.hidden_dim % config.num_heads != 0:
        v.append("h mod n != 0")
    if config.time_conditioning not in (TIME_TOKEN, ADALN):
        v.append(f"unknown time_conditioning {config.time_conditioning!r}")
    if config.family != UVIT and config.time_conditioning == TIME_TOKEN:
        v.append("time-token conditioning only supported for uvit")
    if config.patch_size >= 1 and config.vae_downsample >= 1:
        for res in SUPPORTED_RESOLUTIONS:
            side = res // config.vae_downsample
            if res % config.vae_downsample != 0 or side % config.patch_size != 0:
                v.append(f"patch does not tile latent at {res}px")
                break
    return ValidationResult(ok=not v, violations=tuple(v))


def token_counts(config: ArchConfig, resolution: int, condition_tokens: int = 0) -> TokenBreakdown:
    """Token breakdown at a pixel resolution.

    image_tokens = (resolution / (vae_downsample * patch_size))**2; U-ViT adds
    one time token and the text tokens to its self-attended sequence,
    cross-attention families self-attend over image tokens only.
    """
    stride = config.vae_downsample * config.patch_size
    if resolution % stride != 0:
        raise ValueError(
            f"resolution {resolution} not divisible by vae_downsample*patch_size={stride}")
    side = resolution // stride
    img = side * side
    if config.family == UVIT:
        return TokenBreakdown(
            image_tokens=img,
            text_tokens=config.text_len,
            time_tokens=1,
            condition_tokens=condition_tokens,
            self_attention_tokens=img + config.text_len + 1 + condition_tokens,
        )
    return TokenBreakdown(
        image_tokens=img,
        text_tokens=config.text_len,
        time_tokens=0,
        condition_tokens=condition_tokens,
        self_attention_tokens=img + condition_tokens,
    )


def _paper_cfg(family, h, d, n, **kw):
    # paper-scale rows share the OpenCLIP-H text width and patch size 2
    base = dict(family=family, hidden_dim=h, depth=d, num_heads=n,
                patch_size=2, text_dim=1024, text_len=77,
                latent_channels=4, vae_downsample=8)
    base.update(kw)
    return ArchConfig(**base)


# Named presets, one per DiT/U-ViT table row.
PRESETS = {
    "uvit-large": _paper_cfg(UVIT, 1024, 20, 16),
    "uvit-huge": _paper_cfg(UVIT, 1152, 28, 16),
    "uvit-1.3b": _paper_cfg(UVIT, 1536, 42, 16),
    "uvit-1.8b": _paper_cfg(UVIT, 2048, 32, 16),
    "uvit-2.3b": _paper_cfg(UVIT, 2048, 42, 16),
    "uvit-3.6b": _paper_cfg(UVIT, 2048, 64, 16),
    "uvit-4.0b": _paper_cfg(UVIT, 3072, 32, 32),
    "uvit-5.3b": _paper_cfg(UVIT, 3072, 42, 32),
    "uvit-6.0b": _paper_cfg(UVIT, 3072, 48, 32),
    "uvit-8.0b": _paper_cfg(UVIT, 3072, 64, 32),
    "pixart-0.6b": _paper_cfg(CROSSATTN_ADALN_SINGLE, 1152, 28, 16, use_skip=False),
    "largedit-5b": _paper_cfg(CROSSATTN_ADALN_PERBLOCK, 3072, 32, 32, use_skip=False),
    "largedit-7b": _paper_cfg(CROSSATTN_ADALN_PERBLOCK, 4096, 32, 32, use_skip=False),
}

# The eight width/depth-scaled rows, in table order (used by the sweep runner).
SCALED_UVIT_PRESETS = (
    "uvit-1.3b", "uvit-1.8b", "uvit-2.3b", "uvit-3.6b",
    "uvit-4.0b", "uvit-5.3b", "uvit-6.0b", "uvit-8.0b",
)


def preset(name: str) -> ArchConfig:
    """Look up a named preset configuration."""
    try:
        return PRESETS[name]
    except KeyError:
        raise UnknownPresetError(name, sorted(PRESETS)) from None


def load_config_file(path) -> ArchConfig:
    """Load an ArchConfig from a JSON file (keys = ArchConfig field names)."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object of config fields")
    return ArchConfig.from_dict(data)
