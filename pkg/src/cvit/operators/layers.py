"""Parameterized building blocks shared by the operator models."""

from __future__ import annotations

from typing import Sequence

from ..tensor import Tensor, activation, layer_norm, matmul, multi_head_attention
from .params import ParamStore


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.w = store.create(f"{name}.w", (d_in, d_out))
        self.b = store.create(f"{name}.b", (d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        return out if self.b is None else out + self.b


class MLP:
    """Dense layers ``sizes[0] -> ... -> sizes[-1]``.

    The activation follows every layer except the last, unless
    ``final_activation`` is set.
    """

    def __init__(self, store: ParamStore, name: str, sizes: Sequence[int], act: str = "gelu",
                 final_activation: bool = False):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = [Linear(store, f"{name}.layer{i}", a, b) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.act = activation(act)
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_activation:
                x = self.act(x)
        return x


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-6):
        self.gain = store.create(f"{name}.gain", (dim,), init="ones")
        self.bias = store.create(f"{name}.bias", (dim,), init="zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Attention:
    """Multi-head attention with learned q/k/v/output projections."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, kv_dim: int | None = None):
        if dim % heads:
            raise ValueError(f"embedding dim {dim} is not divisible by {heads} heads")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.wq = store.create(f"{name}.wq", (dim, dim))
        self.bq = store.create(f"{name}.bq", (dim,), init="zeros")
        self.wk = store.create(f"{name}.wk", (kv_dim, dim))
        self.bk = store.create(f"{name}.bk", (dim,), init="zeros")
        self.wv = store.create(f"{name}.wv", (kv_dim, dim))
        self.bv = store.create(f"{name}.bv", (dim,), init="zeros")
        self.wo = store.create(f"{name}.wo", (dim, dim))
        self.bo = store.create(f"{name}.bo", (dim,), init="zeros")

    def __call__(self, q: Tensor, kv: Tensor) -> Tensor:
        return multi_head_attention(q, kv, kv, self, self.heads)


class SelfAttentionBlock:
    """Pre-norm transformer block: ``z' = z + MSA(LN z)``, ``z'' = z' + MLP(LN z')``."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, mlp_width: int):
        self.norm1 = LayerNorm(store, f"{name}.norm1", dim)
        self.attn = Attention(store, f"{name}.attn", dim, heads)
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        self.mlp = MLP(store, f"{name}.mlp", [dim, mlp_width, dim])

    def __call__(self, z: Tensor) -> Tensor:
        h = self.norm1(z)
        z = z + self.attn(h, h)
        return z + self.mlp(self.norm2(z))


class CrossAttentionBlock:
    """Pre-norm cross-attention block with separate norms for queries and context."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, mlp_width: int):
        self.norm_q = LayerNorm(store, f"{name}.norm_q", dim)
        self.norm_kv = LayerNorm(store, f"{name}.norm_kv", dim)
        self.attn = Attention(store, f"{name}.attn", dim, heads)
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        self.mlp = MLP(store, f"{name}.mlp", [dim, mlp_width, dim])

    def __call__(self, x: Tensor, context: Tensor) -> Tensor:
        x = x + self.attn(self.norm_q(x), self.norm_kv(context))
        return x + self.mlp(self.norm2(x))
