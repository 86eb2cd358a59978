"""Operator models expressed as conditioned neural fields, plus checkpointing."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..tensor import DEFAULT_DTYPE, Rng
from .cvit import PRESETS, Cvit, CvitSpec, patchify
from .deeponet import DeepONet, DeepOnetSpec, NoMaD, NomadSpec, deeponet_decode
from .fno import FnoLayer, dft_modes, equivalence_discrepancy, idft_modes, mode_weights
from .gno import GnoLayer, neighbourhoods
from .params import (
    CheckpointError,
    ParamStore,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    load_checkpoint,
    save_checkpoint,
)

MODELS = {"cvit": (Cvit, CvitSpec), "deeponet": (DeepONet, DeepOnetSpec), "nomad": (NoMaD, NomadSpec)}


def spec_entries(kind: str, spec) -> dict[str, np.ndarray]:
    """Encode a model spec as ``config.*`` checkpoint scalars.

    Numbers and tuples become float64 tensors; strings and the model kind are
    encoded in the entry name (``config.act=gelu``) with value 1; ``None``
    fields are omitted.
    """
    entries = {f"config.model={kind}": np.float64(1.0)}
    for f in dataclasses.fields(spec):
        value = getattr(spec, f.name)
        if value is None:
            continue
        if isinstance(value, str):
            entries[f"config.{f.name}={value}"] = np.float64(1.0)
        else:
            entries[f"config.{f.name}"] = np.asarray(value, dtype=np.float64)
    return {k: np.asarray(v, dtype=np.float64) for k, v in entries.items()}


def spec_from_entries(entries) -> tuple[str, object]:
    kind = None
    values = {}
    for name, value in entries.items():
        if not name.startswith("config."):
            continue
        key = name[len("config."):]
        if "=" in key:
            key, text = key.split("=", 1)
            if key == "model":
                kind = text
            else:
                values[key] = text
        else:
            values[key] = value
    if kind not in MODELS:
        raise CheckpointError(f"checkpoint does not name a known model (got {kind!r})")
    _, spec_cls = MODELS[kind]
    kwargs = {}
    for f in dataclasses.fields(spec_cls):
        if f.name not in values:
            continue
        v = values[f.name]
        if isinstance(v, str):
            kwargs[f.name] = v
        elif v.ndim:
            kwargs[f.name] = tuple(int(x) for x in v)
        elif "float" in str(f.type):
            kwargs[f.name] = float(v)
        else:
            kwargs[f.name] = int(v)
    return kind, spec_cls(**kwargs)


def build_model(kind: str, spec, seed: int = 0, dtype=DEFAULT_DTYPE):
    cls, _ = MODELS[kind]
    return cls(spec, Rng(seed), dtype)


def model_entries(model) -> dict[str, np.ndarray]:
    entries = spec_entries(model.name, model.spec)
    entries.update(model.store.state())
    return entries


def model_from_entries(entries, dtype=None):
    kind, spec = spec_from_entries(entries)
    weights = {k: v for k, v in entries.items() if not k.startswith(("config.", "optim.", "state."))}
    if dtype is None:
        sample = next(iter(weights.values()), np.zeros(0, dtype=DEFAULT_DTYPE))
        dtype = sample.dtype
    model = build_model(kind, spec, dtype=dtype)
    model.store.load_state(weights)
    return model


def save_model(path, model) -> None:
    save_checkpoint(path, model_entries(model))


def load_model(path, dtype=None):
    return model_from_entries(load_checkpoint(path), dtype)


__all__ = [
    "PRESETS", "Cvit", "CvitSpec", "patchify", "DeepONet", "DeepOnetSpec", "NoMaD", "NomadSpec",
    "deeponet_decode", "FnoLayer", "equivalence_discrepancy", "dft_modes", "idft_modes", "mode_weights", "GnoLayer", "neighbourhoods",
    "CheckpointError", "ParamStore", "checkpoint_from_bytes", "checkpoint_to_bytes", "load_checkpoint",
    "save_checkpoint", "MODELS", "spec_entries", "spec_from_entries", "build_model", "model_entries",
    "model_from_entries", "save_model", "load_model",
]
