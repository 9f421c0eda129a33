"""Dense float32 kernels and their analytic backward passes.

Tensors are plain row-major ``np.ndarray`` objects.  Parameters and
activations are float32; the kernels preserve the input dtype so the same
code runs in float64 for gradient verification.  Every reduction goes
through numpy with a fixed shape, so results are bit-reproducible for a
given thread configuration.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from vitforge.errors import DimensionError, NumericFault

DTYPE = np.float32

_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=dtype)


def _shape(x) -> tuple:
    return tuple(np.shape(x))


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes.

    ``a`` is (..., m, k); ``b`` is (k, n) or has the same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {_shape(a)} and {_shape(b)}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {_shape(a)} @ {_shape(b)}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {_shape(a)} @ {_shape(b)}")
    return np.matmul(a, b)


def matmul_backward(a: np.ndarray, b: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    expected = a.shape[:-1] + (b.shape[-1],)
    if grad.shape != expected:
        raise DimensionError(f"matmul upstream grad {_shape(grad)} does not match output {expected}")
    da = np.matmul(grad, np.swapaxes(b, -1, -2))
    if b.ndim == 2:
        a2 = a.reshape(-1, a.shape[-1])
        g2 = grad.reshape(-1, grad.shape[-1])
        db = a2.T @ g2
    else:
        db = np.matmul(np.swapaxes(a, -1, -2), grad)
    return da, db


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {_shape(x)} incompatible with weight {_shape(weight)}")
    y = np.matmul(x, weight.T)
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {_shape(bias)} does not match weight {_shape(weight)}")
        y = y + bias
    return y


def linear_backward(x: np.ndarray, weight: np.ndarray, grad: np.ndarray):
    """Returns (dx, dweight, dbias)."""
    dx = np.matmul(grad, weight)
    g2 = grad.reshape(-1, grad.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    dw = g2.T @ x2
    db = g2.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, max-subtracted."""
    if logits.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    if np.isnan(logits).any():
        raise NumericFault("softmax received NaN input")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if probs.shape != grad.shape:
        raise DimensionError(f"softmax upstream grad {_shape(grad)} vs output {_shape(probs)}")
    inner = (grad * probs).sum(axis=-1, keepdims=True)
    return probs * (grad - inner)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    if np.isnan(logits).any():
        raise NumericFault("log_softmax received NaN input")
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------


def _check_ln(x, gamma, beta):
    d = x.shape[-1]
    if d < 1:
        raise DimensionError("layer_norm over an empty axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {_shape(gamma)} / beta {_shape(beta)} must both be ({d},)"
        )


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    _check_ln(x, gamma, beta)
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    return xc * rstd * gamma + beta


def layer_norm_backward(x, gamma, beta, eps, grad):
    """Returns (dx, dgamma, dbeta); parameter grads are summed over all rows."""
    _check_ln(x, gamma, beta)
    if grad.shape != x.shape:
        raise DimensionError(f"layer_norm upstream grad {_shape(grad)} vs input {_shape(x)}")
    d = x.shape[-1]
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    g2 = grad.reshape(-1, d)
    dgamma = (g2 * xhat.reshape(-1, d)).sum(axis=0)
    dbeta = g2.sum(axis=0)
    dxhat = grad * gamma
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# GELU (exact, erf based)
# ---------------------------------------------------------------------------


def gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * x.dtype.type(_SQRT1_2)))


def gelu_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if grad.shape != x.shape:
        raise DimensionError(f"gelu upstream grad {_shape(grad)} vs input {_shape(x)}")
    cdf = 0.5 * (1.0 + erf(x * x.dtype.type(_SQRT1_2)))
    pdf = x.dtype.type(_INV_SQRT_2PI) * np.exp(-0.5 * x * x)
    return grad * (cdf + x * pdf)


# ---------------------------------------------------------------------------
# generic dispatch + verification harness
# ---------------------------------------------------------------------------

_BACKWARD: dict[str, Callable] = {
    "matmul": lambda inputs, g: matmul_backward(inputs[0], inputs[1], g),
    "softmax": lambda inputs, g: (softmax_backward(softmax(inputs[0]), g),),
    "layer_norm": lambda inputs, g: layer_norm_backward(*inputs, g),
    "gelu": lambda inputs, g: (gelu_backward(inputs[0], g),),
    "linear": lambda inputs, g: linear_backward(inputs[0], inputs[1], g),
}


def backward_of(kernel: str, inputs: Sequence, upstream: np.ndarray) -> tuple:
    """Gradients of ``kernel`` w.r.t. its tensor inputs, given the forward inputs.

    ``inputs`` are the forward-call arguments: (a, b) for matmul, (x,) for
    softmax/gelu, (x, gamma, beta, eps) for layer_norm.
    """
    try:
        fn = _BACKWARD[kernel]
    except KeyError:
        raise ValueError(f"no backward registered for kernel {kernel!r}") from None
    return fn(tuple(inputs), upstream)


def numeric_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-4, indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` evaluated in float64.

    Only the flat positions in ``indices`` are probed; the rest stay zero.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x64 = np.array(x, dtype=np.float64, copy=True)
    flat = x64.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x64))
        flat[i] = orig - h
        fm = float(f(x64))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x64.shape)


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return np.abs(a - n) / denom


def finite_difference_check(f, x, analytic, h: float = 1e-4, indices=None) -> float:
    """Max relative error between ``analytic`` and the central-difference gradient of ``f`` at ``x``.

    With ``indices`` (flat positions), only those coordinates are compared.
    """
    num = numeric_gradient(f, x, h, indices)
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = num.reshape(-1)
    if indices is not None:
        idx = np.asarray(list(indices), dtype=np.int64)
        a, n = a[idx], n[idx]
    if a.size == 0:
        return 0.0
    return float(relative_error(a, n).max())
