"""Training loop invariants, optimizer behavior, probes, ablation runner."""

import numpy as np
import pytest

from ditlab import (backbone, config as cfglib, data as datalib, diffusion,
                    tensor as T, training)

TOY = dict(hidden_dim=32, depth=2, num_heads=4, text_dim=16, text_len=16)


def _setup(seed=0, n=64, latent=8, **cfg_kw):
    cfg = cfglib.ArchConfig(family=cfglib.UVIT, **{**TOY, **cfg_kw})
    ds = datalib.ToyShapeDataset(n=n, latent_size=latent, text_len=cfg.text_len,
                                 seed=seed + 100)
    net = backbone.build(cfg, seed=seed, resolution=latent * cfg.vae_downsample)
    emb = datalib.ToyTextEmbedder(ds.tokenizer.vocab_size, cfg.text_dim,
                                  cfg.text_len, seed=seed)
    return cfg, ds, net, emb


# -- config ------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        training.TrainConfig(total_steps=10, warmup_steps=20)
    with pytest.raises(ValueError):
        training.TrainConfig(p_uncond=1.5)


def test_paper_hyperparameters_recorded():
    assert training.PAPER_BATCH == 2048
    assert training.PAPER_STEPS == 600_000
    assert training.PAPER_LR == 8e-5
    assert training.PAPER_WARMUP == 10_000
    assert training.PAPER_TEXT_LR == 8e-6
    assert training.PAPER_TEXT_WD == 1e-4


def test_lr_warmup_exact():
    assert training.lr_at(1, 1e-3, 100) == pytest.approx(1e-5)
    assert training.lr_at(50, 1e-3, 100) == pytest.approx(5e-4)
    assert training.lr_at(100, 1e-3, 100) == 1e-3
    assert training.lr_at(5000, 1e-3, 100) == 1e-3  # constant after warmup
    assert training.lr_at(1, 1e-3, 0) == 1e-3


# -- optimizer ---------------------------------------------------------------

def test_adamw_moves_toward_minimum():
    p = T.Tensor(np.array([5.0], dtype=np.float32), requires_grad=True)
    opt = training.AdamW({"p": p}, lr=0.1)
    for _ in range(200):
        p.grad = 2 * p.data  # d/dp p^2
        opt.step()
    assert abs(float(p.data[0])) < 0.05


def test_adamw_decay_only_shrinks():
    p = T.Tensor(np.full(4, 2.0, dtype=np.float32), requires_grad=True)
    opt = training.AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(4, dtype=np.float32)
    opt.step()
    np.testing.assert_allclose(p.data, 2.0 * (1 - 0.1 * 0.5), rtol=1e-6)


def test_grad_global_norm():
    a = T.Tensor(np.zeros(3), requires_grad=True)
    b = T.Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([3.0, 0.0, 0.0])
    b.grad = np.array([0.0, 4.0])
    assert training.grad_global_norm([{"a": a}, {"b": b}]) == pytest.approx(5.0)


# -- training loop -----------------------------------------------------------

def test_loss_decreases_on_toy_run():
    cfg, ds, net, emb = _setup()
    tc = training.TrainConfig(batch_size=16, total_steps=150, lr=2e-3,
                              warmup_steps=20, seed=0)
    log = training.train(net, tc, ds, text_embedder=emb)
    assert log.smoothed_loss(30) < log.head_loss(30) - 0.05


def test_lr_zero_keeps_params():
    cfg, ds, net, emb = _setup()
    before = {k: p.data.copy() for k, p in net.parameters().items()}
    tc = training.TrainConfig(batch_size=4, total_steps=5, lr=0.0,
                              warmup_steps=0, seed=0)
    training.train(net, tc, ds, text_embedder=emb)
    for k, p in net.parameters().items():
        np.testing.assert_array_equal(p.data, before[k])


def test_log_lr_column_matches_warmup_rule():
    cfg, ds, net, emb = _setup()
    tc = training.TrainConfig(batch_size=4, total_steps=12, lr=1e-3,
                              warmup_steps=10, seed=0)
    log = training.train(net, tc, ds, text_embedder=emb)
    for step, _, lr, _ in log.rows:
        assert lr == pytest.approx(training.lr_at(step, 1e-3, 10))


def test_train_deterministic_across_runs():
    tc = training.TrainConfig(batch_size=8, total_steps=25, lr=1e-3,
                              warmup_steps=5, seed=3)
    logs = []
    for _ in range(2):
        cfg, ds, net, emb = _setup(seed=3)
        logs.append(training.train(net, tc, ds, text_embedder=emb))
    assert logs[0].rows == logs[1].rows
    assert logs[0].batch_hash == logs[1].batch_hash


def test_freeze_text_keeps_embedder():
    cfg, ds, net, emb = _setup()
    before = {k: p.data.copy() for k, p in emb.parameters().items()}
    tc = training.TrainConfig(batch_size=8, total_steps=10, lr=1e-3,
                              warmup_steps=2, seed=0, freeze_text=True)
    training.train(net, tc, ds, text_embedder=emb)
    for k, p in emb.parameters().items():
        np.testing.assert_array_equal(p.data, before[k])


def test_trainable_text_moves_embedder():
    cfg, ds, net, emb = _setup()
    before = {k: p.data.copy() for k, p in emb.parameters().items()}
    tc = training.TrainConfig(batch_size=8, total_steps=10, lr=1e-3,
                              warmup_steps=2, seed=0)
    training.train(net, tc, ds, text_embedder=emb)
    assert any(not np.array_equal(p.data, before[k])
               for k, p in emb.parameters().items())


def test_diverged_run_raises():
    cfg, ds, net, emb = _setup()
    ds.latents[:] = np.nan  # poisoned data -> non-finite loss at step 1
    tc = training.TrainConfig(batch_size=8, total_steps=5, lr=1e-3,
                              warmup_steps=0, seed=0)
    with pytest.raises(training.TrainDivergedError) as err:
        training.train(net, tc, ds, text_embedder=emb)
    assert err.value.step == 1


def test_same_seed_same_batches_different_arch():
    """Data order is independent of the network: the loss stream differs but
    the batch hash matches."""
    tc = training.TrainConfig(batch_size=8, total_steps=10, lr=1e-3,
                              warmup_steps=2, seed=5)
    _, ds, net_a, emb_a = _setup(seed=5)
    log_a = training.train(net_a, tc, ds, text_embedder=emb_a)
    cfg_b, ds_b, net_b, emb_b = _setup(seed=5, hidden_dim=64, num_heads=8)
    log_b = training.train(net_b, tc, ds_b, text_embedder=emb_b)
    assert log_a.batch_hash == log_b.batch_hash
    assert log_a.rows != log_b.rows


# -- probe -------------------------------------------------------------------

def test_probe_chance_level_analytic():
    assert training.probe_chance_level() == pytest.approx(1.0 / 3.0)


def test_probe_oracle_scores_one():
    cfg, ds, net, emb = _setup()
    probe = training.alignment_probe(
        net, ds, 16, sample_fn=lambda batch: batch["x0"])
    assert probe == 1.0


def test_probe_noise_near_chance():
    cfg, ds, net, emb = _setup()
    rng = np.random.default_rng(0)
    probe = training.alignment_probe(
        net, ds, 120, rng=rng,
        sample_fn=lambda batch: np.random.default_rng(1).standard_normal(batch["x0"].shape).astype(np.float32))
    assert abs(probe - training.probe_chance_level()) < 0.15


def test_probe_runs_end_to_end_with_sampler():
    cfg, ds, net, emb = _setup()
    probe = training.alignment_probe(net, ds, 4, text_embedder=emb,
                                     rng=np.random.default_rng(0))
    assert 0.0 <= probe <= 1.0


# -- ablation runner ---------------------------------------------------------

def test_variant_validation():
    with pytest.raises(ValueError):
        training._check_variants([("a", {"use_skip": True, "freeze_text": True})])
    with pytest.raises(ValueError):
        training._check_variants([("a", {"use_skip": True}), ("b", {"freeze_text": True})])
    with pytest.raises(ValueError):
        training._check_variants([("a", {"optimizer": "sgd"})])
    assert training._check_variants([("a", {"use_skip": True})]) == "use_skip"


def test_run_ablation_skip_factor():
    cfg = cfglib.ArchConfig(family=cfglib.UVIT, **TOY)
    ds = datalib.ToyShapeDataset(n=32, latent_size=8, text_len=16, seed=9)
    tc = training.TrainConfig(batch_size=8, total_steps=12, lr=1e-3,
                              warmup_steps=4, seed=1)
    report = training.run_ablation(
        "skip", [("on", {"use_skip": True}), ("off", {"use_skip": False})],
        tc, cfg, ds, probe_samples=4, probe_steps=4)
    assert [r.label for r in report.runs] == ["on", "off"]
    assert len({r.log.batch_hash for r in report.runs}) == 1
    rows = report.summary_rows()
    assert rows[0][0] == "skip" and rows[0][1] == "use_skip"


def test_run_ablation_condition_factor():
    cfg = cfglib.ArchConfig(family=cfglib.UVIT, **TOY)
    ds = datalib.ToyShapeDataset(n=32, latent_size=8, text_len=16, seed=9)
    tc = training.TrainConfig(batch_size=8, total_steps=8, lr=1e-3,
                              warmup_steps=2, seed=2)
    report = training.run_ablation(
        "conditioning",
        [("token", {"condition_mode": cfglib.TOKEN_CONCAT}),
         ("channel", {"condition_mode": cfglib.CHANNEL_CONCAT})],
        tc, cfg, ds, probe_samples=4, probe_steps=4)
    assert len({r.log.batch_hash for r in report.runs}) == 1
    assert all(0.0 <= r.probe <= 1.0 for r in report.runs)
