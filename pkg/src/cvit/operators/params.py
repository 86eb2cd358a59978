"""Named parameter archive and the checkpoint file format.

Checkpoint layout (little-endian)::

    b"CVC1" | u32 entry count | entries...
    entry = u32 name length | UTF-8 name | tensor (CVT1 format)

Names are dotted paths such as ``encoder.block3.attn.wq``.  Besides model
weights a checkpoint may carry ``config.*`` scalars (model hyperparameters),
``optim.*`` tensors (optimizer moments) and ``state.*`` scalars.
"""

from __future__ import annotations

import os
import struct
import tempfile
from collections.abc import Iterator, Mapping

import numpy as np

from ..tensor import DEFAULT_DTYPE, Rng, Tensor
from ..tensor.io import TensorFormatError, tensor_from_bytes, tensor_to_bytes

CHECKPOINT_MAGIC = b"CVC1"


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered mapping of dotted names to trainable tensors.

    Layers register their weights through :meth:`create`; insertion order is
    the archive order, so save/load/save is byte-stable.
    """

    def __init__(self, rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.rng = rng if rng is not None else Rng(0)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, shape, init: str = "fan_in", std: float | None = None) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        elif init == "normal":
            value = self.rng.normal(shape) * (1.0 if std is None else std)
        elif init == "trunc_normal":
            value = self.rng.truncated_normal(shape, std=0.02 if std is None else std)
        elif init == "fan_in":
            fan_in = shape[0] if len(shape) > 1 else 1
            value = self.rng.truncated_normal(shape, std=1.0 / np.sqrt(fan_in) if std is None else std)
        else:
            raise ValueError(f"unknown init {init!r}")
        param = Tensor(value.astype(self.dtype), requires_grad=True)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        missing = [n for n in self._params if n not in state]
        if strict and missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, param in self._params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise CheckpointError(f"{name}: shape {value.shape} != model shape {param.shape}")
            param.data = value.astype(param.dtype)


def checkpoint_to_bytes(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(entries))]
    for name, value in entries.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(tensor_to_bytes(np.asarray(value)))
    return b"".join(parts)


def checkpoint_from_bytes(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a CVC1 checkpoint")
    if len(buf) < 8:
        raise CheckpointError("truncated checkpoint header")
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(buf) < offset + 4:
            raise CheckpointError("truncated checkpoint entry")
        (n,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        if len(buf) < offset + n:
            raise CheckpointError("truncated checkpoint entry name")
        name = buf[offset:offset + n].decode("utf-8")
        offset += n
        try:
            entries[name], offset = tensor_from_bytes(buf, offset)
        except TensorFormatError as exc:
            raise CheckpointError(f"entry {name!r}: {exc}") from exc
    if offset != len(buf):
        raise CheckpointError("trailing bytes after last checkpoint entry")
    return entries


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, entries: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, checkpoint_to_bytes(entries))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
