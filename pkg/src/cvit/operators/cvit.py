"""Continuous Vision Transformer.

Conditioning: frames ``[B, T, *spatial, D]`` are patchified frame by frame
with one shared embedding, summed with temporal and spatial positional
embeddings, collapsed over time by a Perceiver cross-attention with a single
learned latent query, then refined by ``depth`` pre-norm self-attention
blocks into tokens ``z_L`` of shape ``[B, S, C]``.

Base field: a query ``y`` in the unit cube is embedded by Nadaraya-Watson
interpolation of trainable latent-grid features, passed through
cross-attention blocks against ``z_L`` and projected by a small MLP.  Each
query attends to ``z_L`` on its own, so outputs for different queries never
interact.

The spatial layout is dimension-generic: ``spatial=(H, W)`` with
``patch=(P, P)`` for images, or ``spatial=(N,)`` for 1D profiles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..fields import ConditionedField, LatentGrid, grid_interpolate
from ..tensor import DEFAULT_DTYPE, Rng, Tensor, as_tensor, broadcast_to, reshape, transpose
from .layers import MLP, CrossAttentionBlock, Linear, SelfAttentionBlock
from .params import ParamStore

# (encoder layers, embedding dim, MLP width, heads)
PRESETS = {
    "tiny": (2, 64, 64, 4),
    "S": (5, 384, 384, 6),
    "B": (10, 512, 512, 8),
    "L": (15, 768, 1536, 12),
}


@dataclass(frozen=True)
class CvitSpec:
    spatial: tuple[int, ...] = (96, 192)
    patch: tuple[int, ...] = (8, 8)
    frames: int = 2
    in_channels: int = 2
    out_channels: int | None = None
    dim: int = 384
    depth: int = 5
    heads: int = 6
    mlp_width: int = 384
    dec_depth: int = 1
    dec_heads: int | None = None
    dec_mlp_width: int | None = None
    grid_shape: tuple[int, ...] | None = None
    grid_dim: int = 512
    epsilon: float = 1e5
    proj_width: int | None = None

    def __post_init__(self):
        fix = lambda v: tuple(int(s) for s in np.atleast_1d(v))  # noqa: E731
        object.__setattr__(self, "spatial", fix(self.spatial))
        patch = fix(self.patch)
        if len(patch) == 1 and len(self.spatial) > 1:
            patch = patch * len(self.spatial)
        object.__setattr__(self, "patch", patch)
        if self.grid_shape is not None:
            object.__setattr__(self, "grid_shape", fix(self.grid_shape))
        if len(self.patch) != len(self.spatial):
            raise ValueError(f"patch {self.patch} does not match spatial dims {self.spatial}")
        if any(s % p for s, p in zip(self.spatial, self.patch)):
            raise ValueError(f"spatial size {self.spatial} is not divisible by patch size {self.patch}")
        if self.dim % self.heads or self.dim % self.decoder_heads:
            raise ValueError(f"embedding dim {self.dim} is not divisible by the head count")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def preset(cls, name: str, **overrides) -> "CvitSpec":
        try:
            depth, dim, mlp, heads = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown CViT preset {name!r}; choose from {sorted(PRESETS)}") from None
        return replace(cls(dim=dim, depth=depth, mlp_width=mlp, heads=heads), **overrides)

    @property
    def outputs(self) -> int:
        return self.in_channels if self.out_channels is None else self.out_channels

    @property
    def decoder_heads(self) -> int:
        return self.heads if self.dec_heads is None else self.dec_heads

    @property
    def token_grid(self) -> tuple[int, ...]:
        return tuple(s // p for s, p in zip(self.spatial, self.patch))

    @property
    def n_tokens(self) -> int:
        return int(np.prod(self.token_grid))

    @property
    def latent_grid(self) -> tuple[int, ...]:
        return self.spatial if self.grid_shape is None else self.grid_shape

    @property
    def query_dim(self) -> int:
        return len(self.latent_grid)


def patchify(u: Tensor, patch: tuple[int, ...]) -> Tensor:
    """``[B, T, *spatial, D] -> [B, T, S, prod(patch) * D]`` with row-major patch order."""
    nd = len(patch)
    b, t = u.shape[:2]
    spatial, d = u.shape[2:2 + nd], u.shape[-1]
    split = []
    for s, p in zip(spatial, patch):
        split += [s // p, p]
    x = reshape(u, (b, t, *split, d))
    outer = [2 + 2 * i for i in range(nd)]
    inner = [3 + 2 * i for i in range(nd)]
    x = transpose(x, (0, 1, *outer, *inner, 2 + 2 * nd))
    n_tokens = int(np.prod([s // p for s, p in zip(spatial, patch)]))
    return reshape(x, (b, t, n_tokens, int(np.prod(patch)) * d))


class Cvit(ConditionedField):
    kind = "global"
    name = "cvit"

    def __init__(self, spec: CvitSpec, rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.spec = spec
        s = spec
        store = self.store = ParamStore(rng or Rng(0), dtype)
        nd = len(s.spatial)
        self.patch_embed = Linear(store, "encoder.patch_embed", int(np.prod(s.patch)) * s.in_channels, s.dim)
        self.pe_t = store.create("encoder.pe_t", (s.frames,) + (1,) * nd + (s.dim,), init="trunc_normal")
        self.pe_s = store.create("encoder.pe_s", (1,) + s.token_grid + (s.dim,), init="trunc_normal")
        self.latent_query = store.create("encoder.latent_query", (1, s.dim), init="normal")
        self.perceiver = CrossAttentionBlock(store, "encoder.perceiver", s.dim, s.heads, s.mlp_width)
        self.blocks = [SelfAttentionBlock(store, f"encoder.block{i}", s.dim, s.heads, s.mlp_width)
                       for i in range(s.depth)]

        features = store.create("decoder.grid.features", s.latent_grid + (s.grid_dim,), init="normal")
        self.grid = LatentGrid(s.latent_grid, features, s.epsilon)
        self.grid_align = Linear(store, "decoder.grid_align", s.grid_dim, s.dim) if s.grid_dim != s.dim else None
        dec_mlp = s.mlp_width if s.dec_mlp_width is None else s.dec_mlp_width
        self.dec_blocks = [CrossAttentionBlock(store, f"decoder.block{i}", s.dim, s.decoder_heads, dec_mlp)
                           for i in range(s.dec_depth)]
        proj = s.dim if s.proj_width is None else s.proj_width
        self.proj = MLP(store, "decoder.proj", [s.dim, proj, s.outputs])

    @property
    def dtype(self):
        return self.store.dtype

    def n_params(self) -> int:
        return self.store.count()

    # conditioning -------------------------------------------------------------
    def _frames(self, u) -> Tensor:
        u = as_tensor(u, like=self.latent_query)
        s = self.spec
        expected = (s.frames, *s.spatial, s.in_channels)
        if u.shape == expected:
            u = reshape(u, (1,) + u.shape)
        if u.shape[1:] != expected:
            raise ValueError(f"expected input frames {expected} (optionally batched), got {u.shape}")
        return u

    def tokens(self, u) -> Tensor:
        """Patch embeddings plus positional embeddings, ``[B, T, S, C]``."""
        s = self.spec
        u = self._frames(u)
        tok = self.patch_embed(patchify(u, s.patch))
        pe_t = reshape(self.pe_t, (s.frames, 1, s.dim))
        pe_s = reshape(self.pe_s, (1, s.n_tokens, s.dim))
        return tok + pe_t + pe_s

    def aggregate(self, tokens: Tensor) -> Tensor:
        """Perceiver step: ``[B, T, S, C] -> [B, S, 1, C]``."""
        b, t, n, c = tokens.shape
        per_location = transpose(tokens, (0, 2, 1, 3))
        z_hat = broadcast_to(reshape(self.latent_query, (1, 1, 1, c)), (b, n, 1, c))
        return self.perceiver(z_hat, per_location)

    def encode(self, u) -> Tensor:
        """Latent tokens ``z_L`` of shape ``[B, S, C]``."""
        z = self.aggregate(self.tokens(u))
        b, n, _, c = z.shape
        z = reshape(z, (b, n, c))
        for block in self.blocks:
            z = block(z)
        return z

    # base field ---------------------------------------------------------------
    def embed_queries(self, y) -> Tensor:
        x = grid_interpolate(y, self.grid)
        return x if self.grid_align is None else self.grid_align(x)

    def decode(self, z: Tensor, y) -> Tensor:
        """Outputs ``[B, Q, D_out]`` for queries ``y`` of shape ``[Q, dim]`` or ``[B, Q, dim]``."""
        y = np.asarray(getattr(y, "data", y), dtype=np.float64)
        if y.ndim == 1:
            y = y.reshape(-1, self.spec.query_dim)
        if y.shape[-1] != self.spec.query_dim:
            raise ValueError(f"queries must have {self.spec.query_dim} coordinates, got shape {y.shape}")
        b, c = z.shape[0], z.shape[-1]
        if y.shape[-2] == 0:
            return Tensor(np.zeros((b, 0, self.spec.outputs), dtype=self.dtype))
        x = self.embed_queries(y)
        if x.ndim == 2:
            x = broadcast_to(reshape(x, (1,) + x.shape), (b,) + x.shape)
        for block in self.dec_blocks:
            x = block(x, z)
        return self.proj(x)

    def condition(self, u) -> Tensor:
        return self.encode(u)

    def field(self, y, z) -> Tensor:
        return self.decode(z, y)

    def predict(self, u, y) -> Tensor:
        return self.decode(self.encode(u), y)
