"""Tape mechanics and op-level gradient identities."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ditlab import tensor as T

ops = T


def _t(arr, rg=True):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=rg)


def test_tensor_dtype_rules():
    # float inputs keep their precision, anything else lands on float32
    assert T.Tensor(np.zeros(2, np.float64)).dtype == np.float64
    assert T.Tensor(np.zeros(2, np.float32)).dtype == np.float32
    assert T.Tensor([1, 2]).dtype == np.float32
    assert not T.Tensor([1.0]).requires_grad


def test_tape_records_in_order():
    a, b = _t([1.0]), _t([2.0])
    with T.Tape() as tape:
        c = ops.add(a, b)
        d = ops.mul(c, b)
    assert len(tape) == 2
    T.backward(tape, d)  # size-1, counts as scalar
    np.testing.assert_allclose(a.grad, [2.0])


def test_backward_chain_rule():
    a, b = _t([3.0]), _t([4.0])
    with T.Tape() as tape:
        c = ops.mul(a, b)        # ab
        loss = ops.mul(c, c)     # a^2 b^2
    T.backward(tape, loss)
    np.testing.assert_allclose(a.grad, [2 * 3 * 16.0])  # 2ab^2
    np.testing.assert_allclose(b.grad, [2 * 4 * 9.0])


def test_backward_accumulates_fanout():
    a = _t([2.0])
    with T.Tape() as tape:
        loss = ops.add(ops.mul(a, a), ops.mul(a, a))  # 2a^2
    T.backward(tape, loss)
    np.testing.assert_allclose(a.grad, [8.0])


def test_backward_rejects_nonscalar():
    a = _t([1.0, 2.0])
    with T.Tape() as tape:
        out = ops.mul(a, a)
    with pytest.raises(ValueError):
        T.backward(tape, out)


def test_double_backward_raises_without_reset():
    a = _t([1.0])
    with T.Tape() as tape:
        loss = ops.mul(a, a)
    T.backward(tape, loss)
    with pytest.raises(RuntimeError):
        T.backward(tape, loss)
    tape.reset()


def test_nested_tapes_rejected():
    with T.Tape():
        with pytest.raises(RuntimeError):
            with T.Tape():
                pass


def test_no_tape_means_no_graph():
    a = _t([1.0])
    out = ops.mul(a, a)
    assert out.grad is None
    assert float(out.data[0]) == 1.0


def test_broadcast_add_unbroadcasts_grad():
    a = _t(np.ones((4, 3)))
    b = _t(np.ones((3,)))
    with T.Tape() as tape:
        loss = ops.sum_all(ops.add(a, b))
    T.backward(tape, loss)
    assert a.grad.shape == (4, 3)
    assert b.grad.shape == (3,)
    np.testing.assert_allclose(b.grad, 4.0)


def test_matmul_weight_grads():
    rng = np.random.default_rng(0)
    x = _t(rng.standard_normal((5, 4)))
    w = _t(rng.standard_normal((4, 3)))
    with T.Tape() as tape:
        loss = ops.sum_all(ops.matmul(x, w))
    T.backward(tape, loss)
    g = np.ones((5, 3))
    np.testing.assert_allclose(x.grad, g @ w.data.T, rtol=1e-12)
    np.testing.assert_allclose(w.grad, x.data.T @ g, rtol=1e-12)


def test_matmul_batched_grads():
    rng = np.random.default_rng(1)
    a = _t(rng.standard_normal((2, 3, 4)))
    b = _t(rng.standard_normal((2, 4, 5)))
    with T.Tape() as tape:
        loss = ops.sum_all(ops.matmul(a, b))
    T.backward(tape, loss)
    g = np.ones((2, 3, 5))
    np.testing.assert_allclose(a.grad, g @ np.swapaxes(b.data, -1, -2), rtol=1e-12)
    np.testing.assert_allclose(b.grad, np.swapaxes(a.data, -1, -2) @ g, rtol=1e-12)


def test_matmul_meta_counts_macs():
    x = _t(np.ones((5, 4)))
    w = _t(np.ones((4, 3)))
    with T.Tape() as tape:
        ops.matmul(x, w)
    kind, count = tape._records[0][3]
    assert kind == "matmul_weight"
    assert count == 5 * 4 * 3


def test_linear_bias_grad_sums_rows():
    x = _t(np.ones((6, 4)))
    w = _t(np.zeros((4, 3)))
    b = _t(np.arange(3, dtype=np.float64))
    with T.Tape() as tape:
        loss = ops.sum_all(ops.linear(x, w, b))
    T.backward(tape, loss)
    np.testing.assert_allclose(b.grad, 6.0)


def test_embedding_scatter_accumulates_repeats():
    table = _t(np.zeros((4, 2)))
    ids = np.array([[1, 1, 3]])
    with T.Tape() as tape:
        loss = ops.sum_all(ops.embedding(table, ids))
    T.backward(tape, loss)
    np.testing.assert_allclose(table.grad[1], 2.0)
    np.testing.assert_allclose(table.grad[3], 1.0)
    np.testing.assert_allclose(table.grad[0], 0.0)


def test_split_concat_roundtrip_grads():
    rng = np.random.default_rng(2)
    a = _t(rng.standard_normal((2, 7, 3)))
    with T.Tape() as tape:
        parts = ops.split(a, [2, 4, 1], axis=1)
        back = ops.concat(parts, axis=1)
        loss = ops.sum_all(ops.mul(back, back))
    np.testing.assert_allclose(back.data, a.data)
    T.backward(tape, loss)
    np.testing.assert_allclose(a.grad, 2 * a.data, rtol=1e-12)


def test_split_size_mismatch():
    a = _t(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        ops.split(a, [2, 2], axis=1)


def test_transpose_roundtrip():
    a = _t(np.arange(24, dtype=np.float64).reshape(2, 3, 4))
    with T.Tape() as tape:
        b = ops.transpose(a, (2, 0, 1))
        c = ops.transpose(b, (1, 2, 0))
        loss = ops.sum_all(ops.mul(c, c))
    np.testing.assert_allclose(c.data, a.data)
    T.backward(tape, loss)
    assert a.grad.shape == (2, 3, 4)


def test_mse_matches_formula():
    p = _t([1.0, 2.0, 3.0])
    t = np.array([1.0, 1.0, 1.0])
    with T.Tape() as tape:
        loss = ops.mse(p, t)
    np.testing.assert_allclose(loss.data, (0 + 1 + 4) / 3)
    T.backward(tape, loss)
    np.testing.assert_allclose(p.grad, 2 * (p.data - t) / 3)


def test_mse_target_is_detached():
    # targets never receive gradient, even when passed as a Tensor
    p = _t([2.0])
    q = _t([0.0])
    with T.Tape() as tape:
        loss = ops.mse(p, q)
    T.backward(tape, loss)
    np.testing.assert_allclose(p.grad, 4.0)
    assert q.grad is None


def test_gelu_silu_softmax_layernorm_values():
    x = _t(np.array([[0.0, 1.0, -1.0]]))
    assert abs(float(ops.gelu(x).data[0, 0])) < 1e-12
    assert abs(float(ops.silu(x).data[0, 1]) - 1 / (1 + np.exp(-1))) < 1e-9
    s = ops.softmax(x)
    np.testing.assert_allclose(s.data.sum(), 1.0, rtol=1e-12)
    ln = ops.layernorm_noaffine(x)
    assert abs(ln.data.mean()) < 1e-7


# -- hypothesis property checks ----------------------------------------------

finite = st.floats(min_value=-8, max_value=8, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(finite, min_size=2, max_size=9), min_size=1, max_size=6)
       .filter(lambda rows: len({len(r) for r in rows}) == 1))
def test_softmax_rows_sum_to_one(rows):
    x = T.Tensor(np.array(rows, dtype=np.float64))
    y = ops.softmax(x)
    np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(y.data >= 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 48), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
def test_layernorm_standardizes(d, n, seed):
    x = np.random.default_rng(seed).standard_normal((n, d)) * 5 + 3
    y = ops.layernorm_noaffine(T.Tensor(x, dtype=np.float64)).data
    assert np.abs(y.mean(axis=-1)).max() < 1e-5
    assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_concat_split_identity(a_len, b_len, c_len, seed):
    rng = np.random.default_rng(seed)
    arrs = [rng.standard_normal((2, n)) for n in (a_len, b_len, c_len)]
    joined = ops.concat([T.Tensor(a, dtype=np.float64) for a in arrs], axis=1)
    parts = ops.split(joined, [a_len, b_len, c_len], axis=1)
    for got, want in zip(parts, arrs):
        np.testing.assert_array_equal(got.data, want)
