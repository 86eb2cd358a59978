"""Positional encodings and the base-field / conditioning split.

Every operator in :mod:`cvit.operators` is a :class:`ConditionedField`: a
conditioning map ``u -> z`` computed once per input function, and a base
field ``(y, z) -> s(y)`` evaluated per query point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, cos, matmul, reshape, sin, stack

ConditioningKind = Literal["global", "local", "both"]


@dataclass(frozen=True)
class FourierEncoding:
    """Integer wavenumbers ``k_1..k_n``, one row per mode."""

    wavenumbers: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.wavenumbers))
        if k.ndim != 2:
            raise ValueError("wavenumbers must be an (n, dim) array")
        object.__setattr__(self, "wavenumbers", k.astype(np.int64))

    @classmethod
    def first_modes(cls, n: int, dim: int = 1) -> "FourierEncoding":
        """Modes ``0..n-1`` along the first axis (the FNO convention)."""
        k = np.zeros((n, dim), dtype=np.int64)
        k[:, 0] = np.arange(n)
        return cls(k)

    @property
    def n_modes(self) -> int:
        return self.wavenumbers.shape[0]

    @property
    def dim(self) -> int:
        return self.wavenumbers.shape[1]


def fourier_encode(y, enc: FourierEncoding) -> Tensor:
    """``[cos 2pi<k_1,y>, sin 2pi<k_1,y>, ..., cos 2pi<k_n,y>, sin 2pi<k_n,y>]``.

    ``y`` is ``[..., dim]``; the result is ``[..., 2n]``.
    """
    y = as_tensor(y)
    if y.ndim == 0 or y.shape[-1] != enc.dim:
        raise ValueError(f"query dim {y.shape[-1:]} does not match wavenumber dim {enc.dim}")
    k = Tensor(2.0 * math.pi * enc.wavenumbers.T.astype(y.dtype))
    lead = y.shape[:-1]
    phase = matmul(reshape(y, (-1, enc.dim)), k)
    pairs = stack([cos(phase), sin(phase)], axis=-1)
    return reshape(pairs, lead + (2 * enc.n_modes,))


def grid_coords(shape: Sequence[int]) -> list[np.ndarray]:
    """Per-axis node coordinates: ``N`` points spanning [0, 1] including both endpoints."""
    return [np.linspace(0.0, 1.0, n) for n in shape]


class LatentGrid:
    """Trainable features on a uniform grid over the unit cube.

    ``features`` has shape ``shape + (C,)``; ``epsilon`` sets how local the
    interpolation kernel ``exp(-epsilon |y - y_ij|^2)`` is.
    """

    def __init__(self, shape: Sequence[int], features: Tensor, epsilon: float):
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ValueError(f"grid extents must be positive, got {shape}")
        if features.shape[:-1] != shape:
            raise ValueError(f"features {features.shape} do not match grid {shape}")
        if not epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        self.shape = shape
        self.features = features
        self.epsilon = float(epsilon)
        self.coords = grid_coords(shape)

    @property
    def channels(self) -> int:
        return self.features.shape[-1]

    @property
    def dim(self) -> int:
        return len(self.shape)

    def node_coords(self) -> np.ndarray:
        """All node coordinates, row-major, shape ``(prod(shape), dim)``."""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def weights(self, y) -> np.ndarray:
        """Normalized kernel weights, shape ``(Q, prod(shape))``, in float64.

        The Gaussian kernel factorizes over axes, so the joint softmax equals
        the outer product of per-axis softmaxes; each is max-subtracted
        because ``exp(-1e5 d^2)`` underflows for all but the nearest nodes.
        """
        y = np.asarray(getattr(y, "data", y), dtype=np.float64).reshape(-1, self.dim)
        if not np.all(np.isfinite(y)):
            raise ValueError("grid_interpolate query is not finite")
        y = np.clip(y, 0.0, 1.0)
        w = np.ones((y.shape[0], 1))
        for axis, nodes in enumerate(self.coords):
            logits = -self.epsilon * (y[:, axis:axis + 1] - nodes[None, :]) ** 2
            logits -= logits.max(axis=1, keepdims=True)
            wa = np.exp(logits)
            wa /= wa.sum(axis=1, keepdims=True)
            w = (w[:, :, None] * wa[:, None, :]).reshape(y.shape[0], -1)
        return w


def grid_interpolate(y, grid: LatentGrid) -> Tensor:
    """Nadaraya-Watson average of grid features at query points ``y``.

    ``y`` is ``[..., dim]`` (queries outside the unit cube are clamped).
    Returns ``[..., C]``; gradients flow to ``grid.features``.
    """
    y_arr = np.asarray(getattr(y, "data", y))
    lead = y_arr.shape[:-1] if y_arr.ndim else ()
    if y_arr.ndim == 0 or y_arr.shape[-1] != grid.dim:
        raise ValueError(f"query shape {y_arr.shape} does not match grid dim {grid.dim}")
    w = Tensor(grid.weights(y_arr).astype(grid.features.dtype))
    flat = reshape(grid.features, (-1, grid.channels))
    return reshape(matmul(w, flat), lead + (grid.channels,))


class ConditionedField:
    """A base field modulated by a latent code computed from the input function."""

    kind: ConditioningKind = "global"

    def condition(self, u):
        raise NotImplementedError

    def field(self, y, z):
        raise NotImplementedError

    def __call__(self, u, y):
        return self.field(y, self.condition(u))
