"""Synthetic latent dataset: colored geometric shapes with paired short/long
captions, a toy whitespace tokenizer, a toy text embedder, dataset mixing,
and the rule-based attribute classifier the alignment probe uses.

The latent convention (4 channels, values ~[-1,1]): channels 0..2 carry a
one-vs-rest color code inside the shape (+1 on the color's channel, -1 on
the others) and the background level outside; channel 3 is the shape mask
(1 inside, 0 outside). Captions are deterministic functions of the
generation parameters, so ground-truth alignment is exact.
"""

from __future__ import annotations

import numpy as np

from . import tensor as ops
from .tensor import Tensor

COLORS = ("red", "green", "blue")
SHAPES = ("square", "circle", "triangle")
POSITIONS = ("top left", "top", "top right", "left", "center", "right",
             "bottom left", "bottom", "bottom right")
BACKGROUNDS = ("dark", "light")
BG_LEVELS = (-0.4, 0.4)

PAD_TOKEN = "<pad>"


def short_caption(color, shape):
    return f"a {COLORS[color]} {SHAPES[shape]}"


def long_caption(color, shape, pos, bg):
    return (f"one {COLORS[color]} {SHAPES[shape]} in the {POSITIONS[pos]} "
            f"on a {BACKGROUNDS[bg]} background")


def _vocab_words():
    words = {"a", "one", "in", "the", "on", "background"}
    words.update(COLORS)
    words.update(SHAPES)
    words.update(BACKGROUNDS)
    for p in POSITIONS:
        words.update(p.split())
    return sorted(words)


class ToyTokenizer:
    """Whitespace tokenizer over the closed caption vocabulary; id 0 pads."""

    def __init__(self):
        self.vocab = [PAD_TOKEN] + _vocab_words()
        self.index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def vocab_size(self):
        return len(self.vocab)

    def encode(self, text, length):
        words = text.lower().split()
        if len(words) > length:
            raise ValueError(f"caption longer than text_len={length}: {text!r}")
        ids = np.zeros(length, dtype=np.int64)
        mask = np.zeros(length, dtype=np.int64)
        for i, w in enumerate(words):
            ids[i] = self.index[w]
            mask[i] = 1
        return ids, mask

    def decode(self, ids):
        return " ".join(self.vocab[i] for i in ids if i != 0)


def shape_template(shape_idx, size):
    """Binary (size,size) footprint of one of the three shapes."""
    t = np.zeros((size, size), dtype=np.float32)
    if SHAPES[shape_idx] == "square":
        t[:] = 1.0
    elif SHAPES[shape_idx] == "circle":
        c = (size - 1) / 2.0
        yy, xx = np.mgrid[0:size, 0:size]
        t[(yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2] = 1.0
    else:  # triangle, apex up
        for r in range(size):
            half = (r + 2) // 2
            lo = max(0, size // 2 - half)
            hi = min(size, size // 2 + half)
            t[r, lo:hi] = 1.0
    return t


def _position_offset(pos_idx, latent_size, shape_size):
    row, col = divmod(pos_idx, 3)
    slack = latent_size - shape_size
    return (row * slack) // 2, (col * slack) // 2


def render_latent(color, shape, pos, bg, latent_size, shape_size):
    x = np.zeros((4, latent_size, latent_size), dtype=np.float32)
    x[:3] = BG_LEVELS[bg]
    mask = np.zeros((latent_size, latent_size), dtype=np.float32)
    top, left = _position_offset(pos, latent_size, shape_size)
    tmpl = shape_template(shape, shape_size)
    mask[top:top + shape_size, left:left + shape_size] = tmpl
    for k in range(3):
        fill = 1.0 if k == color else -1.0
        x[k] = np.where(mask > 0, fill, x[k])
    x[3] = mask
    return x


class ToyShapeDataset:
    """Pre-generated (latent, attributes, caption-pair) collection."""

    def __init__(self, n=256, latent_size=16, text_len=16, seed=0,
                 p_long=0.5, shape_size=8, source="toy"):
        self.n = n
        self.latent_size = latent_size
        self.text_len = text_len
        self.p_long = p_long
        self.shape_size = shape_size
        self.source = source
        self.tokenizer = ToyTokenizer()
        rng = np.random.default_rng(seed)
        self.color = rng.integers(0, len(COLORS), size=n)
        self.shape = rng.integers(0, len(SHAPES), size=n)
        self.pos = rng.integers(0, len(POSITIONS), size=n)
        self.bg = rng.integers(0, len(BACKGROUNDS), size=n)
        self.latents = np.stack([
            render_latent(self.color[i], self.shape[i], self.pos[i], self.bg[i],
                          latent_size, shape_size)
            for i in range(n)])
        self.captions_short = [short_caption(self.color[i], self.shape[i])
                               for i in range(n)]
        self.captions_long = [long_caption(self.color[i], self.shape[i],
                                           self.pos[i], self.bg[i])
                              for i in range(n)]
        enc = [self.tokenizer.encode(c, text_len) for c in self.captions_short]
        self.short_ids = np.stack([e[0] for e in enc])
        self.short_mask = np.stack([e[1] for e in enc])
        enc = [self.tokenizer.encode(c, text_len) for c in self.captions_long]
        self.long_ids = np.stack([e[0] for e in enc])
        self.long_mask = np.stack([e[1] for e in enc])

    def __len__(self):
        return self.n

    def gather(self, idx, use_long):
        ids = np.where(use_long[:, None], self.long_ids[idx], self.short_ids[idx])
        mask = np.where(use_long[:, None], self.long_mask[idx], self.short_mask[idx])
        return {
            "x0": self.latents[idx],
            "token_ids": ids,
            "text_mask": mask,
            "index": idx,
            "color": self.color[idx],
            "shape": self.shape[idx],
        }

    def draw(self, rng, batch):
        """rng consumption order (indices, caption choice) is fixed."""
        idx = rng.integers(0, self.n, size=batch)
        use_long = rng.random(batch) < self.p_long
        return self.gather(idx, use_long)

    def eval_batch(self, rng, n):
        """Held-out style draw with short (color+shape) captions."""
        idx = rng.integers(0, self.n, size=n)
        return self.gather(idx, np.zeros(n, dtype=bool))


class MixedDataset:
    """Weighted source mixing with per-draw caption-variant choice."""

    def __init__(self, sources, weights, caption_probs):
        if not sources:
            raise ValueError("no sources to mix")
        if len(weights) != len(sources):
            raise ValueError("one weight per source required")
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative and sum > 0")
        p = np.asarray(caption_probs, dtype=np.float64)
        if len(p) != 2 or abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
            raise ValueError("caption_probs must be [p_short, p_long] summing to 1")
        self.sources = list(sources)
        self.weights = w / w.sum()
        self.p_long = float(p[1])
        self.text_len = sources[0].text_len
        self.tokenizer = sources[0].tokenizer
        self.latent_size = sources[0].latent_size

    def draw(self, rng, batch):
        src_idx = rng.choice(len(self.sources), size=batch, p=self.weights)
        use_long = rng.random(batch) < self.p_long
        parts = []
        for i in range(batch):
            s = self.sources[src_idx[i]]
            j = rng.integers(0, s.n, size=1)
            parts.append(s.gather(j, use_long[i:i + 1]))
        out = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        out["source_index"] = src_idx
        return out


class ToyTextEmbedder:
    """Token-embedding table + learned positions; the stand-in text encoder.

    Embeddings are O(1) scale so the text stream carries signal from step 0
    whether or not the tables train.
    """

    def __init__(self, vocab_size, width, text_len, seed=0):
        rng = np.random.default_rng(seed)
        self.width = width
        self.text_len = text_len
        self.params = {
            "text_emb.table": Tensor(rng.standard_normal((vocab_size, width)).astype(np.float32),
                                     requires_grad=True, name="text_emb.table"),
            "text_emb.pos": Tensor((0.1 * rng.standard_normal((text_len, width))).astype(np.float32),
                                   requires_grad=True, name="text_emb.pos"),
        }

    def parameters(self):
        return self.params

    def embed(self, token_ids):
        e = ops.embedding(self.params["text_emb.table"], np.asarray(token_ids))
        return ops.add(e, self.params["text_emb.pos"])

    def embed_np(self, token_ids):
        return self.embed(token_ids).data

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self


# ---------------------------------------------------------------------------
# rule-based attribute classifier (fixed; not trained)

_COLOR_PROTO = np.full((3, 3), -1.0, dtype=np.float32)
np.fill_diagonal(_COLOR_PROTO, 1.0)


def classify_color(latent):
    """Nearest color prototype of the mean channel vector over the mask
    region (whole image when the mask region is empty)."""
    region = latent[3] > 0.5
    if not region.any():
        region = np.ones_like(region, dtype=bool)
    vec = latent[:3][:, region].mean(axis=1)
    return int(np.argmin(((_COLOR_PROTO - vec) ** 2).sum(axis=1)))


def _unit_templates(shape_size):
    # templates live on a canvas one cell wider per side; the zero border
    # keeps the zero-mean square from degenerating to all zeros
    out = []
    canvas = shape_size + 2
    for s in range(len(SHAPES)):
        t = np.zeros((canvas, canvas), dtype=np.float32)
        t[1:-1, 1:-1] = shape_template(s, shape_size)
        t = t - t.mean()
        out.append(t / np.linalg.norm(t))
    return out


def classify_shape(latent, shape_size):
    """Best zero-mean matched filter over all placements of each template."""
    m = np.pad(latent[3], 1)
    win = shape_size + 2
    hs = m.shape[0] - win + 1
    templates = _unit_templates(shape_size)
    best, best_idx = -np.inf, 0
    for k, t in enumerate(templates):
        for r in range(hs):
            for c in range(hs):
                score = float((m[r:r + win, c:c + win] * t).sum())
                if score > best:
                    best, best_idx = score, k
    return best_idx


def classify_latent(latent, shape_size):
    return classify_color(latent), classify_shape(latent, shape_size)
