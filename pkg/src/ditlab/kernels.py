"""Hot numeric kernels: fused numba versions with pure-numpy fallbacks.

Everything here operates on contiguous 2D views (rows, features) so the
autodiff layer can reshape once and call in. Matmul is deliberately absent:
BLAS already owns it. The numba path is selected by default when numba
imports; set ``DITLAB_NUMBA=0`` to force the numpy fallbacks (the benchmark
in benchmarks/kernel_bench.py compares the two).

Kernels stay serial (no prange) so runs are bit-reproducible for a fixed
seed within either backend.
"""

import math
import os

import numpy as np

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

_env = os.environ.get("DITLAB_NUMBA", "1").strip().lower()
_want_numba = _env not in ("0", "false", "off", "no")

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAS_NUMBA = False

    def njit(*a, **k):
        def wrap(f):
            return f
        return wrap


USE_NUMBA = _HAS_NUMBA and _want_numba


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations

def _gelu_fwd_np(x):
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _gelu_bwd_np(x, gout):
    x2 = x * x
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x * x2)
    t = np.tanh(inner)
    dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x2)
    return gout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def _silu_fwd_np(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig


def _silu_bwd_np(x, gout):
    sig = 1.0 / (1.0 + np.exp(-x))
    return gout * (sig * (1.0 + x * (1.0 - sig)))


def _softmax_fwd_np(x):
    # rows with -inf entries are fine: exp(-inf - m) == 0 exactly
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _softmax_bwd_np(y, gout):
    dot = np.sum(y * gout, axis=1, keepdims=True)
    return y * (gout - dot)


def _layernorm_fwd_np(x, gamma, beta, eps):
    mean = np.mean(x, axis=1, keepdims=True)
    xc = x - mean
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, mean[:, 0], rstd[:, 0]


def _layernorm_bwd_np(x, gamma, mean, rstd, gout):
    xhat = (x - mean[:, None]) * rstd[:, None]
    g = gout * gamma
    dgamma = np.sum(gout * xhat, axis=0)
    dbeta = np.sum(gout, axis=0)
    gm = np.mean(g, axis=1, keepdims=True)
    gxm = np.mean(g * xhat, axis=1, keepdims=True)
    dx = rstd[:, None] * (g - gm - xhat * gxm)
    return dx, dgamma, dbeta


def _adamw_np(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / bc1
    vhat = v / bc2
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)


# ---------------------------------------------------------------------------
# numba versions (same math, fused loops)

@njit(cache=True)
def _gelu_fwd_nb(x):
    out = np.empty_like(x)
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            inner = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
            out[i, j] = 0.5 * v * (1.0 + math.tanh(inner))
    return out


@njit(cache=True)
def _gelu_bwd_nb(x, gout):
    out = np.empty_like(x)
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            v2 = v * v
            inner = _SQRT_2_OVER_PI * (v + _GELU_C * v * v2)
            t = math.tanh(inner)
            dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v2)
            out[i, j] = gout[i, j] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
    return out


@njit(cache=True)
def _silu_fwd_nb(x):
    out = np.empty_like(x)
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            sig = 1.0 / (1.0 + math.exp(-v))
            out[i, j] = v * sig
    return out


@njit(cache=True)
def _silu_bwd_nb(x, gout):
    out = np.empty_like(x)
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            sig = 1.0 / (1.0 + math.exp(-v))
            out[i, j] = gout[i, j] * (sig * (1.0 + v * (1.0 - sig)))
    return out


@njit(cache=True)
def _softmax_fwd_nb(x):
    out = np.empty_like(x)
    n, d = x.shape
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            out[i, j] *= inv
    return out


@njit(cache=True)
def _softmax_bwd_nb(y, gout):
    out = np.empty_like(y)
    n, d = y.shape
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += y[i, j] * gout[i, j]
        for j in range(d):
            out[i, j] = y[i, j] * (gout[i, j] - dot)
    return out


@njit(cache=True)
def _layernorm_fwd_nb(x, gamma, beta, eps):
    n, d = x.shape
    out = np.empty_like(x)
    means = np.empty(n, dtype=x.dtype)
    rstds = np.empty(n, dtype=x.dtype)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mean = s / d
        sv = 0.0
        for j in range(d):
            c = x[i, j] - mean
            sv += c * c
        rstd = 1.0 / math.sqrt(sv / d + eps)
        means[i] = mean
        rstds[i] = rstd
        for j in range(d):
            out[i, j] = (x[i, j] - mean) * rstd * gamma[j] + beta[j]
    return out, means, rstds


@njit(cache=True)
def _layernorm_bwd_nb(x, gamma, mean, rstd, gout):
    n, d = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(d, dtype=x.dtype)
    dbeta = np.zeros(d, dtype=x.dtype)
    for i in range(n):
        gm = 0.0
        gxm = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            g = gout[i, j] * gamma[j]
            dgamma[j] += gout[i, j] * xhat
            dbeta[j] += gout[i, j]
            gm += g
            gxm += g * xhat
        gm /= d
        gxm /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            g = gout[i, j] * gamma[j]
            dx[i, j] = rstd[i] * (g - gm - xhat * gxm)
    return dx, dgamma, dbeta


@njit(cache=True)
def _adamw_nb(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    n = p.shape[0]
    for i in range(n):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * (mhat / (math.sqrt(vhat) + eps) + wd * p[i])


# ---------------------------------------------------------------------------
# dispatch

def gelu_fwd(x):
    return _gelu_fwd_nb(x) if USE_NUMBA else _gelu_fwd_np(x)


def gelu_bwd(x, gout):
    return _gelu_bwd_nb(x, gout) if USE_NUMBA else _gelu_bwd_np(x, gout)


def silu_fwd(x):
    return _silu_fwd_nb(x) if USE_NUMBA else _silu_fwd_np(x)


def silu_bwd(x, gout):
    return _silu_bwd_nb(x, gout) if USE_NUMBA else _silu_bwd_np(x, gout)


def softmax_fwd(x):
    return _softmax_fwd_nb(x) if USE_NUMBA else _softmax_fwd_np(x)


def softmax_bwd(y, gout):
    return _softmax_bwd_nb(y, gout) if USE_NUMBA else _softmax_bwd_np(y, gout)


def layernorm_fwd(x, gamma, beta, eps):
    return _layernorm_fwd_nb(x, gamma, beta, eps) if USE_NUMBA \
        else _layernorm_fwd_np(x, gamma, beta, eps)


def layernorm_bwd(x, gamma, mean, rstd, gout):
    return _layernorm_bwd_nb(x, gamma, mean, rstd, gout) if USE_NUMBA \
        else _layernorm_bwd_np(x, gamma, mean, rstd, gout)


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, step):
    """In-place AdamW on flat float arrays; step is 1-based."""
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    if USE_NUMBA:
        _adamw_nb(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2)
    else:
        _adamw_np(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2)


NUMPY_IMPLS = {
    "gelu_fwd": _gelu_fwd_np, "gelu_bwd": _gelu_bwd_np,
    "silu_fwd": _silu_fwd_np, "silu_bwd": _silu_bwd_np,
    "softmax_fwd": _softmax_fwd_np, "softmax_bwd": _softmax_bwd_np,
    "layernorm_fwd": _layernorm_fwd_np, "layernorm_bwd": _layernorm_bwd_np,
}

NUMBA_IMPLS = {
    "gelu_fwd": _gelu_fwd_nb, "gelu_bwd": _gelu_bwd_nb,
    "silu_fwd": _silu_fwd_nb, "silu_bwd": _silu_bwd_nb,
    "softmax_fwd": _softmax_fwd_nb, "softmax_bwd": _softmax_bwd_nb,
    "layernorm_fwd": _layernorm_fwd_nb, "layernorm_bwd": _layernorm_bwd_nb,
} if _HAS_NUMBA else {}
