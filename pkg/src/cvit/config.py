"""Run configuration files: UTF-8 lines of ``key = value``.

Blank lines and ``#`` comments are ignored.  ``model`` is the only required
key; everything else falls back to the training defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .operators import MODELS, PRESETS, CvitSpec, DeepOnetSpec, NomadSpec
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = f"{path or '<config>'}" + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line


# key -> (parser, default)
KEYS = {
    "model": (str, None),
    "preset": (str, "S"),
    "patch_size": (int, 8),
    "grid_nx": (int, None),
    "grid_ny": (int, None),
    "grid_dim": (int, 512),
    "epsilon": (float, 1e5),
    "batch_size": (int, TrainConfig.batch_size),
    "queries": (int, TrainConfig.queries),
    "steps": (int, TrainConfig.steps),
    "warmup": (int, TrainConfig.warmup),
    "peak_lr": (float, TrainConfig.peak_lr),
    "decay": (float, TrainConfig.decay),
    "weight_decay": (float, TrainConfig.weight_decay),
    "clip_norm": (float, TrainConfig.clip_norm),
    "seed": (int, TrainConfig.seed),
    "data_path": (str, None),
    "checkpoint_dir": (str, None),
    "checkpoint_every": (int, TrainConfig.checkpoint_every),
}
REQUIRED = ("model",)
_TRAIN_KEYS = ("batch_size", "queries", "steps", "warmup", "peak_lr", "decay", "weight_decay", "clip_norm",
               "seed", "checkpoint_every")


@dataclass(frozen=True)
class RunConfig:
    values: dict
    train: TrainConfig

    @property
    def model(self) -> str:
        return self.values["model"]

    @property
    def data_path(self) -> str | None:
        return self.values["data_path"]

    @property
    def checkpoint_dir(self) -> str | None:
        return self.values["checkpoint_dir"]

    def latent_grid(self) -> tuple[int, ...] | None:
        nx, ny = self.values["grid_nx"], self.values["grid_ny"]
        if nx is None:
            return None
        return (nx,) if ny in (None, 1) else (nx, ny)

    def model_spec(self, spatial: tuple[int, ...] | None = None, channels: int | None = None, frames: int = 1):
        """Model hyperparameters; input geometry comes from the dataset when given."""
        v = self.values
        if self.model == "cvit":
            spec = CvitSpec.preset(v["preset"], grid_dim=v["grid_dim"], epsilon=v["epsilon"])
            if spatial is not None:
                overrides = dict(spatial=tuple(spatial), patch=(v["patch_size"],) * len(spatial), frames=frames,
                                 in_channels=channels or 1, grid_shape=self.latent_grid())
            else:
                overrides = dict(patch=(v["patch_size"],) * len(spec.spatial), grid_shape=self.latent_grid())
            return replace(spec, **overrides)
        n_in = int(np.prod(spatial or (1,))) * (channels or 1)
        cls = DeepOnetSpec if self.model == "deeponet" else NomadSpec
        return cls(branch_in=n_in, query_dim=len(spatial or (1,)), out_channels=channels or 1)

    def echo(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in KEYS) + "\n"


def parse_config_text(text: str, path=None) -> RunConfig:
    values: dict = {}
    seen_at: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in seen_at:
            raise ConfigError(f"key {key!r} already set on line {seen_at[key]}", lineno, path)
        parser = KEYS[key][0]
        try:
            values[key] = parser(value)
        except ValueError:
            raise ConfigError(f"cannot parse {value!r} as {parser.__name__} for key {key!r}",
                              lineno, path) from None
        seen_at[key] = lineno
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}", None, path)
    if values["model"] not in MODELS:
        raise ConfigError(f"unknown model {values['model']!r}; choose from {sorted(MODELS)}",
                          seen_at["model"], path)
    if values.get("preset", "S") not in PRESETS:
        raise ConfigError(f"unknown preset {values['preset']!r}; choose from {sorted(PRESETS)}",
                          seen_at["preset"], path)
    resolved = {k: values.get(k, default) for k, (_, default) in KEYS.items()}
    try:
        train = TrainConfig(**{k: resolved[k] for k in _TRAIN_KEYS})
    except ValueError as exc:
        raise ConfigError(str(exc), None, path) from None
    return RunConfig(resolved, train)


def parse_config(path) -> RunConfig:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"not valid UTF-8 ({exc.reason})", None, path) from None
    return parse_config_text(text, path)
