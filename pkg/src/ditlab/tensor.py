"""Minimal dense-tensor layer with reverse-mode autodiff.

Just enough for the transformer backbones: matmul, bias/elementwise
arithmetic, layernorm, gelu/silu, softmax, concat/split, reshape/transpose,
embedding lookup, MSE. Values are float32 by default; float64 exists for
gradient verification only.

Ops record onto the active ``Tape`` (a context manager). Without an active
tape they just compute, which is what sampling uses. The tape is an ordered
list of executed ops, so reversing it is a reverse topological walk.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import kernels

LAYERNORM_EPS = 1e-6


class ShapeMismatchError(ValueError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class Tensor:
    """A dense array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{tag})"


_ACTIVE_TAPE = None


class Tape:
    """Ordered record of ops with their backward rules."""

    def __init__(self):
        self._records = []  # (out, inputs, backward_fn)
        self._spent = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; nesting is not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out, inputs, backward_fn, meta=None):
        self._records.append((out, inputs, backward_fn, meta))

    def reset(self):
        self._records.clear()
        self._spent = False

    def __len__(self):
        return len(self._records)


def _record(out, inputs, backward_fn, meta=None):
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, inputs, backward_fn, meta)
    return out


def backward(tape: Tape, loss: Tensor):
    """Populate gradients for everything reachable from loss.

    Gradients accumulate into ``.grad`` (callers zero parameter grads between
    steps). Calling twice on the same tape without reset is an error.
    """
    if tape._spent:
        raise RuntimeError("tape already backpropagated; reset() before reuse")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar-shaped, got shape {loss.data.shape}")
    tape._spent = True
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, inputs, backward_fn, _ in reversed(tape._records):
        if out.grad is None:
            continue  # not on a path to the loss
        grads = backward_fn(out.grad)
        for t, g in zip(inputs, grads):
            if g is not None:
                t.accumulate_grad(g)


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as2d(a):
    return np.ascontiguousarray(a.reshape(-1, a.shape[-1]))


# ---------------------------------------------------------------------------
# arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise ShapeMismatchError("sub", a.shape, b.shape) from None
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None
    return _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                           _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def add_const(a: Tensor, c) -> Tensor:
    """Add a constant array (no gradient for c). Broadcasting allowed."""
    out = Tensor(a.data + c)
    return _record(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def mul_const(a: Tensor, c) -> Tensor:
    """Multiply by a constant array (no gradient for c)."""
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (_unbroadcast(g * c, a.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Last-two-axes matmul; b may be 2D (shared weights) or match a's batch."""
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        if b.data.ndim == 2 and a.data.ndim > 2:
            da = np.matmul(g, b.data.T)
            k = a.data.shape[-1]
            n = g.shape[-1]
            db = np.matmul(a.data.reshape(-1, k).T, g.reshape(-1, n))
        else:
            da = np.matmul(g, np.swapaxes(b.data, -1, -2))
            db = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return da, db

    # tape meta feeds the instrumented MACs oracle
    kind = "matmul_weight" if b.data.ndim == 2 else "matmul_batched"
    return _record(out, (a, b), bwd, meta=(kind, int(out.data.size) * a.data.shape[-1]))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# activations / normalization

def gelu(a: Tensor) -> Tensor:
    x2 = _as2d(a.data)
    out = Tensor(kernels.gelu_fwd(x2).reshape(a.shape))
    return _record(out, (a,), lambda g: (
        kernels.gelu_bwd(x2, _as2d(g)).reshape(a.shape),))


def silu(a: Tensor) -> Tensor:
    x2 = _as2d(a.data)
    out = Tensor(kernels.silu_fwd(x2).reshape(a.shape))
    return _record(out, (a,), lambda g: (
        kernels.silu_bwd(x2, _as2d(g)).reshape(a.shape),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted. -inf logits get weight 0."""
    y2 = kernels.softmax_fwd(_as2d(a.data))
    out = Tensor(y2.reshape(a.shape))
    return _record(out, (a,), lambda g: (
        kernels.softmax_bwd(y2, _as2d(g)).reshape(a.shape),))


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Layer normalization over the last axis with affine parameters."""
    if gamma.shape != (a.shape[-1],) or beta.shape != (a.shape[-1],):
        raise ShapeMismatchError("layernorm", a.shape, gamma.shape, beta.shape)
    x2 = _as2d(a.data)
    y2, mean, rstd = kernels.layernorm_fwd(x2, gamma.data, beta.data, eps)
    out = Tensor(y2.reshape(a.shape))

    def bwd(g):
        dx, dgamma, dbeta = kernels.layernorm_bwd(x2, gamma.data, mean, rstd, _as2d(g))
        return dx.reshape(a.shape), dgamma, dbeta

    return _record(out, (a, gamma, beta), bwd)


def layernorm_noaffine(a: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Layernorm without learned scale/shift (modulated-norm blocks)."""
    d = a.shape[-1]
    ones = np.ones(d, dtype=a.dtype)
    zeros = np.zeros(d, dtype=a.dtype)
    x2 = _as2d(a.data)
    y2, mean, rstd = kernels.layernorm_fwd(x2, ones, zeros, eps)
    out = Tensor(y2.reshape(a.shape))

    def bwd(g):
        dx, _, _ = kernels.layernorm_bwd(x2, ones, mean, rstd, _as2d(g))
        return (dx.reshape(a.shape),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tuple(tensors), bwd)


def split(a: Tensor, sizes, axis: int):
    """Split into len(sizes) tensors along axis; sizes must sum to the dim."""
    if sum(sizes) != a.shape[axis]:
        raise ShapeMismatchError(f"split(sizes={list(sizes)})", a.shape)
    bounds = np.cumsum(sizes)[:-1]
    pieces = np.split(a.data, bounds, axis=axis)
    outs = [Tensor(p) for p in pieces]
    for i, o in enumerate(outs):
        def bwd(g, i=i):
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            start = 0 if i == 0 else int(bounds[i - 1])
            sl[axis] = slice(start, start + sizes[i])
            full[tuple(sl)] = g
            return (full,)
        _record(o, (a,), bwd)
    return outs


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: ids (...,) int -> (..., D). Backward scatter-adds."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids])

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (dt,)

    return _record(out, (table,), bwd)


# ---------------------------------------------------------------------------
# reductions

def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()))
    return _record(out, (a,), lambda g: (np.full(a.shape, g, dtype=a.dtype),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(np.asarray(a.data.mean()))
    return _record(out, (a,), lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.dtype),))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target array."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target, pred.dtype)
    if target.shape != pred.shape:
        raise ShapeMismatchError("mse", pred.shape, target.shape)
    diff = pred.data - target
    out = Tensor(np.asarray(np.mean(diff * diff)))
    n = pred.data.size
    return _record(out, (pred,), lambda g: ((2.0 / n) * diff * g,))


# ---------------------------------------------------------------------------
# gradient verification

@dataclasses.dataclass
class GradCheckReport:
    """Per-parameter max relative error between analytic and numeric grads."""

    per_param: dict
    tolerance: float

    @property
    def max_rel_err(self):
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    def failing(self):
        return {k: v for k, v in self.per_param.items() if v >= self.tolerance}


def grad_check(f, params, tolerance=1e-3, step=1e-4, rel_floor=1e-3) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued f() against central
    finite differences, perturbing every element of every parameter.

    Relative error uses a floor in the denominator so near-zero gradient
    pairs (where fd noise dominates) do not blow up the ratio:
    err = |a - n| / max(|a|, |n|, rel_floor).
    """
    tape = Tape()
    for p in params.values():
        p.zero_grad()
    with tape:
        loss = f()
    backward(tape, loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f().data)
            flat[i] = orig - step
            f_minus = float(f().data)
            flat[i] = orig
            num[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name].reshape(-1).astype(np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), rel_floor)
        report[name] = float(np.max(np.abs(a - num) / denom))
    return GradCheckReport(per_param=report, tolerance=tolerance)
