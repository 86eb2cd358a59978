"""Graph neural operator layer with a radius neighbourhood."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..fields import ConditionedField
from ..tensor import Tensor, activation, as_tensor, concat, matmul, reshape, swapaxes
from .layers import MLP
from .params import ParamStore

Kernel = Callable[[Tensor, Tensor, Tensor], Tensor]


def neighbourhoods(coords: np.ndarray, queries: np.ndarray, radius: float) -> list[np.ndarray]:
    """Node indices within ``radius`` of each query node (Euclidean, inclusive)."""
    d2 = ((coords[queries][:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    return [np.flatnonzero(row <= radius * radius) for row in d2]


class GnoLayer(ConditionedField):
    """``s(y) = act(W u(y) + mean_{x in N(y)} kappa(x, y, u(x)) u(x))``.

    ``kappa`` maps the concatenation ``(x, y, u(x))`` to a flattened
    ``d_s x d_u`` matrix.  Pass ``kernel`` to replace the default MLP with any
    callable ``(x, y, u_x) -> [E, d_s * d_u]`` over edge batches.
    """

    kind = "both"

    def __init__(self, store: ParamStore, name: str, coords: np.ndarray, d_u: int, d_s: int,
                 radius: float, act: str = "gelu", kernel_width: int = 32, kernel: Kernel | None = None):
        self.coords = np.asarray(coords, dtype=np.float64)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        self.d_u, self.d_s = d_u, d_s
        self.radius = float(radius)
        self.w = store.create(f"{name}.w", (d_s, d_u))
        if kernel is None:
            dim = self.coords.shape[1]
            mlp = MLP(store, f"{name}.kernel", [2 * dim + d_u, kernel_width, kernel_width, d_s * d_u])
            kernel = lambda x, y, ux: mlp(concat([x, y, ux], axis=-1))  # noqa: E731
        self.kernel = kernel
        self.act = activation(act)

    def __call__(self, u, query_nodes=None) -> Tensor:
        """Evaluate at ``query_nodes`` (indices into ``coords``; default all)."""
        return self.field(query_nodes, self.condition(u))

    def condition(self, u):
        u = as_tensor(u, like=self.w)
        if u.ndim == 1:
            u = reshape(u, (-1, 1))
        if u.shape != (len(self.coords), self.d_u):
            raise ValueError(f"expected u of shape {(len(self.coords), self.d_u)}, got {u.shape}")
        return u

    def field(self, query_nodes, u: Tensor) -> Tensor:
        queries = np.arange(len(self.coords)) if query_nodes is None else np.atleast_1d(query_nodes)
        hoods = neighbourhoods(self.coords, queries, self.radius)
        src = np.concatenate(hoods)
        dst = np.repeat(queries, [len(h) for h in hoods])
        # row q of `mean` averages the edges that end at query q
        mean = np.zeros((len(queries), len(src)), dtype=u.dtype)
        start = 0
        for q, hood in enumerate(hoods):
            mean[q, start:start + len(hood)] = 1.0 / len(hood)
            start += len(hood)

        ux = u[src]
        k = self.kernel(Tensor(self.coords[src], dtype=u.dtype), Tensor(self.coords[dst], dtype=u.dtype), ux)
        k = reshape(k, (len(src), self.d_s, self.d_u))
        messages = reshape(matmul(k, reshape(ux, (len(src), self.d_u, 1))), (len(src), self.d_s))
        local = matmul(u[queries], swapaxes(self.w, 0, 1))
        return self.act(local + matmul(Tensor(mean), messages))
