"""Encoder-decoder operators: DeepONet (linear decoder) and NoMaD (nonlinear decoder)."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..fields import ConditionedField
from ..tensor import DEFAULT_DTYPE, Rng, Tensor, as_tensor, broadcast_to, concat, matmul, reshape, swapaxes
from .layers import MLP
from .params import ParamStore


@dataclass(frozen=True)
class DeepOnetSpec:
    branch_in: int
    query_dim: int = 1
    width: int = 128
    hidden: tuple[int, ...] = (128, 128)
    out_channels: int = 1
    act: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class NomadSpec:
    branch_in: int
    query_dim: int = 1
    width: int = 128
    hidden: tuple[int, ...] = (128, 128)
    decoder_hidden: tuple[int, ...] = field(default=(128, 128))
    out_channels: int = 1
    act: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))


def _flatten_batch(u, like: Tensor) -> Tensor:
    u = as_tensor(u, like=like)
    return reshape(u, (u.shape[0], -1))


def _queries(y, like: Tensor) -> Tensor:
    y = as_tensor(y, like=like)
    return reshape(y, y.shape + (1,)) if y.ndim == 1 else y


def deeponet_decode(z: Tensor, basis: Tensor, out_channels: int = 1) -> Tensor:
    """``s_k(y) = <z_k, t(y)>``.

    ``z`` is ``[B, D * n]`` and ``basis`` is ``[Q, n]`` or ``[B, Q, n]``;
    returns ``[B, Q, D]``.  Linear in ``z`` for a fixed basis.
    """
    z, basis = as_tensor(z), as_tensor(basis)
    n = basis.shape[-1]
    if z.shape[-1] != n * out_channels:
        raise ValueError(f"branch width {z.shape[-1]} != {out_channels} x trunk width {n}")
    coeffs = reshape(z, (z.shape[0], out_channels, n))
    return matmul(basis, swapaxes(coeffs, -1, -2))


class DeepONet(ConditionedField):
    kind = "global"
    name = "deeponet"

    def __init__(self, spec: DeepOnetSpec, rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.spec = spec
        self.store = ParamStore(rng or Rng(0), dtype)
        self.branch = MLP(self.store, "branch", [spec.branch_in, *spec.hidden, spec.width * spec.out_channels], spec.act)
        self.trunk = MLP(self.store, "trunk", [spec.query_dim, *spec.hidden, spec.width], spec.act,
                         final_activation=True)

    def condition(self, u) -> Tensor:
        flat = _flatten_batch(u, self.store.tensors()[0])
        if flat.shape[-1] != self.spec.branch_in:
            raise ValueError(f"input has {flat.shape[-1]} values, branch expects {self.spec.branch_in}")
        return self.branch(flat)

    def field(self, y, z: Tensor) -> Tensor:
        basis = self.trunk(_queries(y, z))
        return deeponet_decode(z, basis, self.spec.out_channels)

    def predict(self, u, y) -> Tensor:
        return self(u, y)


class NoMaD(ConditionedField):
    kind = "global"
    name = "nomad"

    def __init__(self, spec: NomadSpec, rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.spec = spec
        self.store = ParamStore(rng or Rng(0), dtype)
        self.encoder = MLP(self.store, "encoder", [spec.branch_in, *spec.hidden, spec.width], spec.act)
        self.decoder = MLP(self.store, "decoder",
                           [spec.query_dim + spec.width, *spec.decoder_hidden, spec.out_channels], spec.act)

    def condition(self, u) -> Tensor:
        flat = _flatten_batch(u, self.store.tensors()[0])
        if flat.shape[-1] != self.spec.branch_in:
            raise ValueError(f"input has {flat.shape[-1]} values, encoder expects {self.spec.branch_in}")
        return self.encoder(flat)

    def field(self, y, z: Tensor) -> Tensor:
        y = _queries(y, z)
        batch, q = z.shape[0], y.shape[-2]
        y = broadcast_to(y, (batch, q, y.shape[-1])) if y.ndim == 2 else y
        zz = broadcast_to(reshape(z, (batch, 1, z.shape[-1])), (batch, q, z.shape[-1]))
        return self.decoder(concat([y, zz], axis=-1))

    def predict(self, u, y) -> Tensor:
        return self(u, y)

