"""Toy training loop, ablation runner, and the alignment probe.

The optimizer is AdamW (0.9, 0.999, 1e-8) with linear warmup to a constant
LR. The full-scale reference settings (batch 2048, 600K steps, LR 8e-5 with
10K warmup, text-encoder LR 8e-6 / decay 1e-4) are kept as constants for
documentation; toy defaults are sized to finish in seconds.
"""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np

from . import backbone
from . import conditioning as cond
from . import data as datalib
from . import diffusion
from . import kernels
from . import tensor as ops

PAPER_BATCH = 2048
PAPER_STEPS = 600_000
PAPER_LR = 8e-5
PAPER_WARMUP = 10_000
PAPER_TEXT_LR = 8e-6
PAPER_TEXT_WD = 1e-4

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainDivergedError(RuntimeError):
    def __init__(self, step, lr, grad_norm, loss):
        self.step, self.lr, self.grad_norm = step, lr, grad_norm
        super().__init__(
            f"non-finite loss {loss} at step {step} (lr={lr:.3e}, "
            f"last grad norm={grad_norm:.3e})")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    total_steps: int = 200
    lr: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 0.0
    text_lr: float = 0.0       # 0 = follow lr
    text_weight_decay: float = PAPER_TEXT_WD
    freeze_text: bool = False
    p_uncond: float = diffusion.P_UNCOND
    seed: int = 0

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must be <= total_steps")
        if not (0.0 <= self.p_uncond <= 1.0):
            raise ValueError("p_uncond must be a probability")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)


def lr_at(step, base, warmup):
    """Linear warmup: base*step/warmup for step < warmup, else base. step is
    the 1-based optimizer step."""
    if warmup > 0 and step < warmup:
        return base * step / warmup
    return base


class AdamW:
    """Moment state per parameter; update runs through the kernel path."""

    def __init__(self, params, lr, weight_decay=0.0,
                 betas=ADAM_BETAS, eps=ADAM_EPS):
        self.params = dict(params)
        self.base_lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data).reshape(-1) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data).reshape(-1) for k, p in self.params.items()}

    def step(self, lr=None):
        self.t += 1
        lr = self.base_lr if lr is None else lr
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            kernels.adamw_update(p.data.reshape(-1), g.reshape(-1),
                                 self._m[k], self._v[k], lr,
                                 self.betas[0], self.betas[1], self.eps,
                                 self.weight_decay, self.t)


def grad_global_norm(param_groups):
    total = 0.0
    for params in param_groups:
        for p in params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


@dataclasses.dataclass
class TrainLog:
    rows: list                      # (step, loss, lr, grad_norm)
    batch_hash: str
    config: dict

    def losses(self):
        return np.array([r[1] for r in self.rows])

    def smoothed_loss(self, window=50):
        ls = self.losses()
        return float(ls[-min(window, len(ls)):].mean())

    def head_loss(self, window=50):
        ls = self.losses()
        return float(ls[:min(window, len(ls))].mean())

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("step,loss,lr,grad_norm\n")
            for step, loss, lr, gn in self.rows:
                f.write(f"{step},{loss:.6f},{lr:.8f},{gn:.6f}\n")


def train(network, train_config, dataset, schedule=None, text_embedder=None):
    """Run the loop; returns a TrainLog. Deterministic given seeds: the data
    rng and the noise rng are independent streams, so variants that share a
    seed see identical batch order regardless of what the network does."""
    tc = train_config
    schedule = schedule or diffusion.make_schedule()
    data_rng = np.random.default_rng(tc.seed)
    noise_rng = np.random.default_rng(tc.seed + 1)

    opts = [AdamW(network.parameters(), tc.lr, tc.weight_decay)]
    if text_embedder is not None and not tc.freeze_text:
        opts.append(AdamW(text_embedder.parameters(),
                          tc.text_lr or tc.lr, tc.text_weight_decay))

    rows = []
    index_trace = []
    grad_norm = 0.0
    for step in range(1, tc.total_steps + 1):
        batch = dataset.draw(data_rng, tc.batch_size)
        index_trace.append(batch["index"])
        tape = ops.Tape()
        with tape:
            if text_embedder is not None:
                text = text_embedder.embed(batch["token_ids"])
            else:
                text = batch["token_ids"].astype(np.float32)  # pre-embedded datasets
            loss_t = diffusion.training_loss(
                network, batch["x0"], text, batch["text_mask"], schedule,
                noise_rng, p_uncond=tc.p_uncond, condition=batch.get("condition"))
        loss = float(loss_t.data)
        lr = lr_at(step, tc.lr, tc.warmup_steps)
        if not np.isfinite(loss):
            raise TrainDivergedError(step, lr, grad_norm, loss)
        network.zero_grad()
        if text_embedder is not None:
            for p in text_embedder.parameters().values():
                p.zero_grad()
        ops.backward(tape, loss_t)
        grad_norm = grad_global_norm([o.params for o in opts])
        opts[0].step(lr)
        for o in opts[1:]:
            o.step(lr_at(step, o.base_lr, tc.warmup_steps))
        rows.append((step, loss, lr, grad_norm))

    digest = hashlib.sha256(np.concatenate(index_trace).tobytes()).hexdigest()
    return TrainLog(rows=rows, batch_hash=digest, config=tc.to_dict())


# ---------------------------------------------------------------------------
# alignment probe

def alignment_probe(network, dataset, n_samples, schedule=None, sampler=None,
                    text_embedder=None, rng=None, sample_fn=None,
                    condition_from=None):
    """Fraction of requested attributes (color, shape; equally weighted)
    realized in samples for held-out captions, judged by the fixed
    rule-based classifier. sample_fn overrides generation for oracle or
    noise baselines: it gets the eval batch and must return latents."""
    rng = rng or np.random.default_rng(1234)
    batch = dataset.eval_batch(rng, n_samples)
    if sample_fn is not None:
        latents = sample_fn(batch)
    else:
        schedule = schedule or diffusion.make_schedule()
        sampler = sampler or diffusion.SamplerConfig(ddim_steps=10, cfg_scale=3.0,
                                                     seed=int(rng.integers(1 << 31)))
        text = text_embedder.embed_np(batch["token_ids"])
        condition = condition_from(batch) if condition_from is not None else None
        shape = batch["x0"].shape
        latents = diffusion.ddim_sample(network, text, sampler, schedule, shape,
                                        text_mask=batch["text_mask"],
                                        condition=condition)
    score = 0.0
    for i in range(n_samples):
        c, s = datalib.classify_latent(latents[i], dataset.shape_size)
        score += 0.5 * (c == batch["color"][i]) + 0.5 * (s == batch["shape"][i])
    return score / n_samples


def probe_chance_level():
    """Analytic chance: each attribute has 3 symmetric values."""
    return (1.0 / len(datalib.COLORS) + 1.0 / len(datalib.SHAPES)) / 2.0


# ---------------------------------------------------------------------------
# ablation runner

ABLATION_FACTORS = ("use_skip", "freeze_text", "condition_mode")


@dataclasses.dataclass
class AblationRun:
    label: str
    factor: str
    value: object
    log: TrainLog
    probe: float


@dataclasses.dataclass
class AblationReport:
    name: str
    factor: str
    seed: int
    runs: list

    def summary_rows(self):
        return [(self.name, self.factor, r.label, str(r.value), self.seed,
                 f"{r.log.smoothed_loss():.6f}", f"{r.probe:.4f}",
                 r.log.batch_hash[:16]) for r in self.runs]


def _check_variants(variants):
    factors = set()
    for label, overrides in variants:
        if len(overrides) != 1:
            raise ValueError(f"variant {label!r} must override exactly one factor")
        factors.update(overrides)
    if len(factors) != 1:
        raise ValueError(f"variants differ in more than one factor: {sorted(factors)}")
    factor = factors.pop()
    if factor not in ABLATION_FACTORS:
        raise ValueError(f"unknown ablation factor {factor!r}")
    return factor


def run_ablation(name, variants, train_config, arch_config, dataset,
                 schedule=None, probe_samples=24, probe_steps=10):
    """Train one network per variant under identical seeds and data order
    (asserted via the batch-index hash) and probe each result.

    variants: [(label, {factor: value})], all touching the same single factor.
    """
    factor = _check_variants(variants)
    schedule = schedule or diffusion.make_schedule()
    runs = []
    for label, overrides in variants:
        value = overrides[factor]
        tc = train_config
        acfg = arch_config
        spec = None
        if factor == "use_skip":
            acfg = acfg.replace(use_skip=bool(value))
        elif factor == "freeze_text":
            tc = tc.replace(freeze_text=bool(value))
        elif factor == "condition_mode":
            spec = cond.inpaint_spec(value, acfg)
        net = backbone.build(acfg, seed=tc.seed,
                             resolution=dataset.latent_size * acfg.vae_downsample,
                             conditioning=spec)
        embedder = datalib.ToyTextEmbedder(dataset.tokenizer.vocab_size,
                                           acfg.text_dim, dataset.text_len,
                                           seed=tc.seed)
        ds = dataset if spec is None else _InpaintingDataset(dataset, tc.seed)
        log = train(net, tc, ds, schedule=schedule, text_embedder=embedder)
        probe_rng = np.random.default_rng(tc.seed + 7)
        sampler = diffusion.SamplerConfig(ddim_steps=probe_steps, cfg_scale=3.0,
                                          seed=tc.seed + 11)
        cond_fn = None
        if spec is not None:
            cond_fn = _probe_condition_fn(tc.seed)
        probe = alignment_probe(net, dataset, probe_samples, schedule=schedule,
                                sampler=sampler, text_embedder=embedder,
                                rng=probe_rng, condition_from=cond_fn)
        runs.append(AblationRun(label=label, factor=factor, value=value,
                                log=log, probe=probe))
    hashes = {r.log.batch_hash for r in runs}
    if len(hashes) != 1:
        raise AssertionError(f"data order diverged across variants: {hashes}")
    return AblationReport(name=name, factor=factor, seed=train_config.seed, runs=runs)


class _InpaintingDataset:
    """Wraps a shape dataset so every draw also carries an inpainting
    condition; training then predicts eps for the full image given the
    visible region. Mask rng is its own stream keyed off the seed so the
    underlying draw sequence stays comparable across variants."""

    def __init__(self, base, seed):
        self.base = base
        self.mask_rng = np.random.default_rng(seed + 23)
        self.text_len = base.text_len
        self.tokenizer = base.tokenizer
        self.latent_size = base.latent_size
        self.shape_size = base.shape_size

    def draw(self, rng, batch):
        out = dict(self.base.draw(rng, batch))
        masked, mask, _ = cond.make_inpaint_batch(out["x0"], self.mask_rng)
        out["condition"] = cond.inpaint_condition(masked, mask)
        return out

    def eval_batch(self, rng, n):
        return self.base.eval_batch(rng, n)


def _probe_condition_fn(seed):
    def fn(batch):
        crng = np.random.default_rng(seed + 31)
        masked, mask, _ = cond.make_inpaint_batch(batch["x0"], crng)
        return cond.inpaint_condition(masked, mask)
    return fn
