"""Finite-difference verification of the autodiff layer itself."""

import numpy as np
import pytest

from ditlab import tensor as T

ops = T


def _param(rng, *shape):
    return T.Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def test_linear_layer_tight():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 6))
    w = _param(rng, 6, 3)
    b = _param(rng, 3)

    def f():
        return ops.mse(ops.linear(T.Tensor(x, dtype=np.float64), w, b), np.zeros((4, 3)))

    rep = T.grad_check(f, {"w": w, "b": b}, tolerance=1e-5)
    assert rep.passed, rep.per_param
    assert rep.max_rel_err < 1e-5


def test_activation_chain():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 8))
    w1 = _param(rng, 8, 8)
    w2 = _param(rng, 8, 4)

    def f():
        h = ops.gelu(ops.matmul(T.Tensor(x, dtype=np.float64), w1))
        h = ops.silu(ops.matmul(h, w2))
        return ops.mean_all(ops.mul(h, h))

    rep = T.grad_check(f, {"w1": w1, "w2": w2}, tolerance=1e-4)
    assert rep.passed, rep.per_param


def test_softmax_attention_shape():
    """Single-head attention block, all projections checked at once."""
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 5, 6))
    ps = {k: _param(rng, 6, 6) for k in ("wq", "wk", "wv")}

    def f():
        xt = T.Tensor(x, dtype=np.float64)
        q = ops.matmul(xt, ps["wq"])
        k = ops.matmul(xt, ps["wk"])
        v = ops.matmul(xt, ps["wv"])
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 6 ** -0.5)
        return ops.mean_all(ops.matmul(ops.softmax(scores), v))

    rep = T.grad_check(f, ps, tolerance=1e-4)
    assert rep.passed, rep.per_param


def test_layernorm_affine_params():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 7))
    gamma = T.Tensor(np.ones(7), requires_grad=True, dtype=np.float64)
    beta = T.Tensor(np.zeros(7), requires_grad=True, dtype=np.float64)

    def f():
        return ops.mse(ops.layernorm(T.Tensor(x, dtype=np.float64), gamma, beta),
                       np.ones((4, 7)))

    rep = T.grad_check(f, {"gamma": gamma, "beta": beta}, tolerance=1e-5)
    assert rep.passed, rep.per_param


def test_embedding_rows():
    rng = np.random.default_rng(4)
    table = _param(rng, 5, 3)
    ids = np.array([[0, 2, 2, 4]])

    def f():
        return ops.mean_all(ops.mul(ops.embedding(table, ids), ops.embedding(table, ids)))

    rep = T.grad_check(f, {"table": table}, tolerance=1e-5)
    assert rep.passed, rep.per_param


def test_corrupted_backward_is_caught():
    """Negative control: a wrong backward must trip the checker."""
    rng = np.random.default_rng(5)
    w = _param(rng, 4, 4)
    x = rng.standard_normal((3, 4))

    def bad_matmul(a, b):
        out = T.Tensor(a.data @ b.data)

        def bwd(g):
            return g @ b.data.T, 0.5 * a.data.T @ g  # deliberate 0.5 bug
        return T._record(out, (a, b), bwd)

    def f():
        return ops.mean_all(bad_matmul(T.Tensor(x, dtype=np.float64), w))

    rep = T.grad_check(f, {"w": w}, tolerance=1e-3)
    assert not rep.passed
    assert "w" in rep.failing()


def test_report_lists_failures_only():
    rng = np.random.default_rng(6)
    w = _param(rng, 3, 3)
    x = rng.standard_normal((2, 3))

    def f():
        return ops.mean_all(ops.matmul(T.Tensor(x, dtype=np.float64), w))

    rep = T.grad_check(f, {"w": w}, tolerance=1e-5)
    assert rep.failing() == {}


def test_zero_grad_params_still_reported():
    """A parameter off the loss path shows a zero/zero comparison, not a crash."""
    rng = np.random.default_rng(7)
    used = _param(rng, 2, 2)
    unused = _param(rng, 2, 2)

    def f():
        return ops.mean_all(ops.matmul(T.Tensor(np.ones((2, 2)), dtype=np.float64), used))

    rep = T.grad_check(f, {"used": used, "unused": unused}, tolerance=1e-5)
    assert rep.passed
    assert "unused" in rep.per_param
