"""Time the numba kernels against the numpy fallbacks on training-like shapes.

Run from the repo root:

    python benchmarks/kernel_bench.py
    python benchmarks/kernel_bench.py --rows 4096 --cols 256 --repeats 50

Prints a table of per-call times and speedups plus an end-to-end train-step
comparison. ``DITLAB_NUMBA`` does not matter here; both implementation sets
are called explicitly.
"""

import argparse
import time

import numpy as np

from ditlab import backbone, config as cfglib, data as datalib, kernels, training


def _time(fn, args, repeats):
    fn(*args)  # warmup (and numba compile)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_kernels(rows, cols, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((rows, cols)).astype(np.float32)
    gout = rng.standard_normal((rows, cols)).astype(np.float32)
    gamma = rng.standard_normal(cols).astype(np.float32)
    beta = rng.standard_normal(cols).astype(np.float32)
    y = kernels.NUMPY_IMPLS["softmax_fwd"](x)
    _, mean, rstd = kernels.NUMPY_IMPLS["layernorm_fwd"](x, gamma, beta, 1e-5)
    args = {
        "gelu_fwd": (x,), "gelu_bwd": (x, gout),
        "silu_fwd": (x,), "silu_bwd": (x, gout),
        "softmax_fwd": (x,), "softmax_bwd": (y, gout),
        "layernorm_fwd": (x, gamma, beta, 1e-5),
        "layernorm_bwd": (x, gamma, mean, rstd, gout),
    }
    print(f"\nelementwise kernels on ({rows}, {cols}) float32, "
          f"mean of {repeats} calls")
    print(f"{'kernel':<16}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>9}")
    for name in kernels.NUMPY_IMPLS:
        t_np = _time(kernels.NUMPY_IMPLS[name], args[name], repeats)
        if kernels.NUMBA_IMPLS:
            t_nb = _time(kernels.NUMBA_IMPLS[name], args[name], repeats)
            print(f"{name:<16}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}"
                  f"{t_np / t_nb:>8.2f}x")
        else:
            print(f"{name:<16}{t_np * 1e6:>12.1f}{'n/a':>12}{'n/a':>9}")

    n = rows * cols
    p = rng.standard_normal(n).astype(np.float32)
    g = rng.standard_normal(n).astype(np.float32)
    m = np.zeros(n, np.float32)
    v = np.zeros(n, np.float32)
    adam_args = (p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.01, 0.1, 0.001)
    t_np = _time(kernels._adamw_np, adam_args, repeats)
    line = f"{'adamw_update':<16}{t_np * 1e6:>12.1f}"
    if kernels.NUMBA_IMPLS:
        t_nb = _time(kernels._adamw_nb, adam_args, repeats)
        line += f"{t_nb * 1e6:>12.1f}{t_np / t_nb:>8.2f}x"
    print(line)


def bench_train_step(steps):
    """Whole train steps; matmuls dominate, so the gap narrows here."""
    print(f"\nend-to-end toy train steps (h=64, d=4, latent 16, batch 16), "
          f"{steps} steps per backend")
    results = {}
    for flag, label in ((False, "numpy"), (True, "numba")):
        if flag and not kernels.NUMBA_IMPLS:
            continue
        kernels.USE_NUMBA = flag
        cfg = cfglib.ArchConfig(family=cfglib.UVIT, hidden_dim=64, depth=4,
                                num_heads=4, text_dim=32, text_len=16)
        ds = datalib.ToyShapeDataset(n=128, latent_size=16, text_len=16, seed=1)
        net = backbone.build(cfg, seed=0, resolution=128)
        emb = datalib.ToyTextEmbedder(ds.tokenizer.vocab_size, 32, 16, seed=0)
        tc = training.TrainConfig(batch_size=16, total_steps=steps,
                                  warmup_steps=0, seed=0)
        training.train(net, tc, ds, text_embedder=emb)  # warmup/compile
        net = backbone.build(cfg, seed=0, resolution=128)
        emb = datalib.ToyTextEmbedder(ds.tokenizer.vocab_size, 32, 16, seed=0)
        t0 = time.perf_counter()
        training.train(net, tc, ds, text_embedder=emb)
        dt = (time.perf_counter() - t0) / steps
        results[label] = dt
        print(f"  {label:<8}{dt * 1e3:8.2f} ms/step")
    if len(results) == 2:
        print(f"  speedup {results['numpy'] / results['numba']:.2f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2048)
    ap.add_argument("--cols", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--train-steps", type=int, default=20)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()
    print(f"numba available: {bool(kernels.NUMBA_IMPLS)}")
    bench_kernels(args.rows, args.cols, args.repeats)
    if not args.skip_train:
        bench_train_step(args.train_steps)


if __name__ == "__main__":
    main()
