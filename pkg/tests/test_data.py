"""Synthetic dataset: rendering, captions, tokenization, attribute probes."""

import numpy as np
import pytest

from ditlab import data as datalib


def test_attribute_space_sizes():
    assert len(datalib.COLORS) == 3
    assert len(datalib.SHAPES) == 3
    assert len(datalib.POSITIONS) == 9
    assert len(datalib.BACKGROUNDS) == 2


def test_tokenizer_roundtrip():
    tok = datalib.ToyTokenizer()
    ids, mask = tok.encode("a red square", 8)
    assert ids.shape == (8,) and mask.shape == (8,)
    assert mask[:3].sum() == 3 and mask[3:].sum() == 0
    assert ids[3:].sum() == 0  # padded with id 0
    assert tok.decode(ids) == "a red square"


def test_tokenizer_rejects_overlong():
    tok = datalib.ToyTokenizer()
    with pytest.raises(ValueError):
        tok.encode("one two three four five", 4)


def test_tokenizer_covers_caption_space():
    tok = datalib.ToyTokenizer()
    for color in range(3):
        for shape in range(3):
            for pos in range(9):
                for bg in range(2):
                    text = datalib.long_caption(color, shape, pos, bg)
                    ids, _ = tok.encode(text, 16)
                    assert tok.decode(ids) == text.lower()


def test_captions_mention_attributes():
    s = datalib.short_caption(0, 1)
    assert datalib.COLORS[0] in s and datalib.SHAPES[1] in s
    l = datalib.long_caption(2, 2, 4, 1)
    assert datalib.COLORS[2] in l and datalib.SHAPES[2] in l
    assert datalib.BACKGROUNDS[1] in l


def test_render_latent_shape_and_mask():
    lat = datalib.render_latent(0, 0, 0, 0, 16, 8)
    assert lat.shape == (4, 16, 16)
    assert set(np.unique(lat[3])) <= {0.0, 1.0}
    assert lat[3].sum() == 64  # square footprint is exactly 8x8


def test_render_color_channels_one_vs_rest():
    for color in range(3):
        lat = datalib.render_latent(color, 0, 4, 0, 16, 8)
        inside = lat[3] > 0.5
        assert lat[color][inside].mean() > 0.5
        other = [c for c in range(3) if c != color]
        for o in other:
            assert lat[o][inside].mean() < -0.5


def test_positions_move_the_shape():
    a = datalib.render_latent(0, 0, 0, 0, 16, 8)
    b = datalib.render_latent(0, 0, 8, 0, 16, 8)
    assert not np.array_equal(a[3], b[3])
    # top-left vs bottom-right corners
    assert a[3][0, 0] == 1.0 and b[3][-1, -1] == 1.0


def test_backgrounds_differ_outside_shape():
    a = datalib.render_latent(0, 0, 0, 0, 16, 8)
    b = datalib.render_latent(0, 0, 0, 1, 16, 8)
    outside = a[3] < 0.5
    assert not np.allclose(a[0][outside], b[0][outside])


def test_shape_templates_distinct():
    t = [datalib.shape_template(i, 8) for i in range(3)]
    assert t[0].sum() > t[1].sum() > 0  # square > circle footprint
    assert not np.array_equal(t[1], t[2])
    for tt in t:
        assert tt.any(axis=1).all()  # no empty rows


def test_dataset_deterministic():
    a = datalib.ToyShapeDataset(n=16, seed=5)
    b = datalib.ToyShapeDataset(n=16, seed=5)
    np.testing.assert_array_equal(a.latents, b.latents)
    assert a.captions_long == b.captions_long


def test_dataset_draw_fixed_rng_order():
    ds = datalib.ToyShapeDataset(n=32, seed=0)
    ba = ds.draw(np.random.default_rng(1), 8)
    bb = ds.draw(np.random.default_rng(1), 8)
    np.testing.assert_array_equal(ba["index"], bb["index"])
    np.testing.assert_array_equal(ba["token_ids"], bb["token_ids"])


def test_eval_batch_uses_short_captions():
    ds = datalib.ToyShapeDataset(n=32, seed=0, text_len=16)
    batch = ds.eval_batch(np.random.default_rng(0), 4)
    tok = ds.tokenizer
    for row, color, shape in zip(batch["token_ids"], batch["color"], batch["shape"]):
        assert tok.decode(row) == datalib.short_caption(color, shape)


def test_mixed_dataset_fractions():
    a = datalib.ToyShapeDataset(n=64, seed=1, source="a")
    b = datalib.ToyShapeDataset(n=64, seed=2, source="b")
    mix = datalib.MixedDataset([a, b], [0.75, 0.25], caption_probs=(0.5, 0.5))
    rng = np.random.default_rng(0)
    counts = {0: 0, 1: 0}
    for _ in range(60):
        batch = mix.draw(rng, 32)
        for s in batch["source_index"]:
            counts[int(s)] += 1
    frac_a = counts[0] / (counts[0] + counts[1])
    assert abs(frac_a - 0.75) < 0.03


def test_mixed_dataset_validates():
    a = datalib.ToyShapeDataset(n=8, seed=0)
    with pytest.raises(ValueError):
        datalib.MixedDataset([], [], caption_probs=(0.5, 0.5))
    with pytest.raises(ValueError):
        datalib.MixedDataset([a], [1.0, 2.0], caption_probs=(0.5, 0.5))
    with pytest.raises(ValueError):
        datalib.MixedDataset([a], [1.0], caption_probs=(0.9, 0.5))


def test_embedder_shapes_and_grad_path():
    from ditlab import tensor as T
    emb = datalib.ToyTextEmbedder(vocab_size=10, width=8, text_len=4, seed=0)
    ids = np.array([[1, 2, 3, 0]])
    with T.Tape() as tape:
        out = emb.embed(ids)
        loss = T.mean_all(T.mul(out, out))
    assert out.data.shape == (1, 4, 8)
    T.backward(tape, loss)
    assert emb.parameters()["text_emb.table"].grad is not None
    assert emb.parameters()["text_emb.pos"].grad is not None


def test_classifier_perfect_on_clean_latents():
    ds = datalib.ToyShapeDataset(n=120, latent_size=16, seed=0)
    for i in range(ds.n):
        c, s = datalib.classify_latent(ds.latents[i], ds.shape_size)
        assert c == ds.color[i]
        assert s == ds.shape[i]


def test_classifier_color_uses_mask_region():
    lat = datalib.render_latent(1, 0, 0, 0, 16, 8)
    # corrupt colors outside the footprint; in-region classification holds
    outside = lat[3] < 0.5
    lat2 = lat.copy()
    for ch in range(3):
        lat2[ch][outside] = -lat2[ch][outside]
    assert datalib.classify_color(lat2) == 1
