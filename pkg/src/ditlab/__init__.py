"""Desk-scale laboratory for diffusion-transformer backbones.

Configurable U-ViT and cross-attention DiT models on a minimal numpy
autodiff layer, an analytic parameter/MACs cost model, a toy DDPM/DDIM
pipeline with classifier-free guidance, token- vs channel-concatenation
conditioning, and caption information-density analysis.
"""

__version__ = "0.1.0"

from .backbone import build, skip_pairing, timestep_embedding
from .config import (
    ArchConfig,
    TokenBreakdown,
    ValidationResult,
    preset,
    token_counts,
    validate,
)
from .conditioning import ConditioningSpec, edge_spec, inpaint_spec
from .costmodel import cost_report, macs, param_count, table_comparison
from .diffusion import (
    DiffusionSchedule,
    SamplerConfig,
    ddim_sample,
    make_schedule,
    q_sample,
    shifted_schedule,
    training_loss,
)
from .tensor import Tape, Tensor, grad_check
from .training import TrainConfig, run_ablation, train

__all__ = [
    "ArchConfig",
    "ConditioningSpec",
    "DiffusionSchedule",
    "SamplerConfig",
    "Tape",
    "Tensor",
    "TokenBreakdown",
    "TrainConfig",
    "ValidationResult",
    "build",
    "cost_report",
    "ddim_sample",
    "edge_spec",
    "grad_check",
    "inpaint_spec",
    "macs",
    "make_schedule",
    "param_count",
    "preset",
    "q_sample",
    "run_ablation",
    "shifted_schedule",
    "skip_pairing",
    "table_comparison",
    "timestep_embedding",
    "token_counts",
    "train",
    "training_loss",
    "validate",
]
