"""Fused neural-network primitives with hand-written backward rules."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .core import (
    ShapeError,
    Tensor,
    _emit,
    _unbroadcast,
    as_tensor,
    matmul,
    primitive,
    reshape,
    swapaxes,
    transpose,
)


@primitive("softmax")
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; a slice of all ``-inf`` has no distribution."""
    x = as_tensor(x)
    peak = x.data.max(axis=axis, keepdims=True)
    if np.any(np.isneginf(peak)):
        raise FloatingPointError("softmax over a slice that is entirely -inf")
    e = np.exp(x.data - peak)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (x,), vjp)


@primitive("layer_norm")
def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    x = as_tensor(x)
    c = x.shape[-1]
    gain = as_tensor(np.ones(c, dtype=x.dtype) if gain is None else gain, like=x)
    bias = as_tensor(np.zeros(c, dtype=x.dtype) if bias is None else bias, like=x)
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"layer_norm affine params must be ({c},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx = gxhat = None
        if x.requires_grad:
            gxhat = g * gain.data
            gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None
        gbias = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        return gx, ggain, gbias

    return _emit("layer_norm", out.astype(x.dtype, copy=False), (x, gain, bias), vjp)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@primitive("gelu")
def gelu(x: Tensor) -> Tensor:
    """Exact ``x * Phi(x)`` with ``Phi(x) = (1 + erf(x / sqrt 2)) / 2``."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
    out = (x.data * cdf).astype(x.dtype, copy=False)
    return _emit("gelu", out, (x,), lambda g: (g * (cdf + x.data * pdf),))


ACTIVATIONS = {
    "identity": lambda t: t,
    "gelu": gelu,
}


def activation(name: str):
    from .core import relu, tanh

    table = dict(ACTIVATIONS, relu=relu, tanh=tanh)
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(table)}") from None


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params=None, n_heads: int = 1) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    ``q`` is ``[..., Lq, Cq]`` and ``k``/``v`` are ``[..., Lk, Ckv]`` with
    matching leading dims (broadcastable).  ``params`` supplies ``wq, bq, wk,
    bk, wv, bv, wo, bo`` (any attribute may be None); ``params=None`` means
    identity projections, which requires ``Cq == Ckv``.
    """
    q, k, v = as_tensor(q), as_tensor(k, like=q), as_tensor(v, like=q)

    def project(x, w, b):
        if w is not None:
            x = matmul(x, w)
        if b is not None:
            x = x + b
        return x

    get = (lambda name: getattr(params, name, None)) if params is not None else (lambda name: None)
    qp = project(q, get("wq"), get("bq"))
    kp = project(k, get("wk"), get("bk"))
    vp = project(v, get("wv"), get("bv"))
    dim = qp.shape[-1]
    if kp.shape[-1] != dim or vp.shape[-1] != dim:
        raise ShapeError(f"projected q/k/v widths differ: {qp.shape}, {kp.shape}, {vp.shape}")
    if dim % n_heads:
        raise ValueError(f"embedding dim {dim} is not divisible by {n_heads} heads")
    hd = dim // n_heads

    def split(x):
        lead = x.shape[:-2]
        x = reshape(x, lead + (x.shape[-2], n_heads, hd))
        n = x.ndim
        return transpose(x, tuple(range(n - 3)) + (n - 2, n - 3, n - 1))

    qh, kh, vh = split(qp), split(kp), split(vp)
    scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(hd))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)
    n = ctx.ndim
    ctx = transpose(ctx, tuple(range(n - 3)) + (n - 2, n - 3, n - 1))
    ctx = reshape(ctx, ctx.shape[:-2] + (dim,))
    return project(ctx, get("wo"), get("bo"))
