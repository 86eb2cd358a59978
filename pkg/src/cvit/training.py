"""Sampled-query regression training with AdamW, clipping and blowup restarts.

Every step draws a batch of samples and ``Q`` distinct grid points from a
stream keyed by ``(seed, restart count, step)``; the loss is the mean squared
error over the batch, the sampled queries and the output channels.  A step
whose loss or gradients are non-finite, or whose loss exceeds ``1e3`` times
the trailing median, is rejected and training resumes from the last
checkpoint with a fresh sampling stream.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields
from decimal import Decimal
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset
from .operators import model_entries
from .operators.params import checkpoint_from_bytes, checkpoint_to_bytes, atomic_write_bytes
from .tensor import Rng, Tape, Tensor, backward_pass

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.cvc"
_SAMPLING = 0x5A  # substream tag for batch/query sampling
_MEDIAN_WINDOW = 100


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    queries: int = 1024
    steps: int = 200_000
    warmup: int = 5000
    peak_lr: float = 1e-3
    decay: float = 0.9
    decay_every: int = 5000
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    checkpoint_every: int = 1000
    seed: int = 0
    max_restarts: int = 5
    blowup_factor: float = 1e3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("seed", "max_restarts", "warmup", "weight_decay"):
                if value < 0:
                    raise ValueError(f"{f.name} must be non-negative, got {value}")
            elif not value > 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        if self.warmup > self.steps:
            raise ValueError(f"warmup ({self.warmup}) exceeds total steps ({self.steps})")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


def lr_schedule(step: float, cfg: TrainConfig = TrainConfig()) -> float:
    """Linear warmup from 0 to the peak, then continuous exponential decay.

    Evaluated in decimal arithmetic on the configured values, so anchor points
    come out as the decimal numbers one expects (``1e-3 * 0.9 == 9e-4``).
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    peak, s = Decimal(str(cfg.peak_lr)), Decimal(str(step))
    if step < cfg.warmup:
        return float(peak * s / cfg.warmup)
    return float(peak * Decimal(str(cfg.decay)) ** ((s - cfg.warmup) / cfg.decay_every))


def mse_sampled_queries(pred: Tensor, target) -> Tensor:
    """``mean over (B, Q, D) of (pred - target)^2``."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.ndim != 3:
        raise ValueError(f"expected [B, Q, D] arrays, got shape {pred.shape}")
    diff = pred - target
    return (diff * diff).mean()


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients by ``min(1, max_norm / norm)``; returns (clipped, norm before)."""
    norm = global_norm(grads)
    if not math.isfinite(norm) or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return [(g * scale).astype(g.dtype, copy=False) for g in grads], norm


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    ``theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)``
    """

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)

    def state(self) -> dict[str, np.ndarray]:
        out = {"optim.step": np.asarray(self.step_count, dtype=np.float64)}
        for name in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state(self, entries) -> None:
        self.step_count = int(entries["optim.step"])
        for name, p in self.params.items():
            self.m[name] = np.asarray(entries[f"optim.m.{name}"], dtype=p.dtype).copy()
            self.v[name] = np.asarray(entries[f"optim.v.{name}"], dtype=p.dtype).copy()


def model_input(model, u: np.ndarray) -> np.ndarray:
    """Adapt dataset inputs ``[B, N, C]`` to what ``model`` consumes."""
    if getattr(model, "name", None) == "cvit":
        return u[:, None]  # a single input frame
    return u


@dataclass
class Batch:
    u: np.ndarray        # [B, N, C]
    queries: np.ndarray  # [Q, 1] coordinates on the dataset grid
    target: np.ndarray   # [B, Q, C]
    index: np.ndarray
    query_index: np.ndarray


def sample_batch(ds: Dataset, cfg: TrainConfig, step: int, restarts: int = 0) -> Batch:
    """Distinct samples and distinct grid queries for one step, shared across the batch."""
    if cfg.queries > ds.grid_size:
        raise ValueError(f"cannot sample {cfg.queries} distinct queries from a grid of {ds.grid_size}")
    rng = Rng(cfg.seed, _SAMPLING, restarts, step)
    idx = rng.choice(len(ds), min(cfg.batch_size, len(ds)))
    q = rng.choice(ds.grid_size, cfg.queries)
    return Batch(ds.u0[idx], ds.coords()[q], ds.target[idx][:, q], idx, q)


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    lr: float
    blowup: bool


def train_step(model, batch: Batch, opt: AdamW, cfg: TrainConfig, step: int,
               poison: bool = False, reference: float | None = None) -> StepResult:
    """Forward, backward, clip, AdamW update.  Rejected steps leave the model untouched.

    ``reference`` is the trailing median loss used for blowup detection;
    ``poison`` injects a NaN into the loss (fault-injection hook).
    """
    lr = lr_schedule(step, cfg)
    params = opt.params
    with Tape() as tape:
        pred = model.predict(model_input(model, batch.u), batch.queries)
        loss = mse_sampled_queries(pred, batch.target)
        if poison:
            loss = loss * float("nan")
    value = loss.item()
    exploded = reference is not None and value > cfg.blowup_factor * reference
    if not math.isfinite(value) or exploded:
        return StepResult(value, float("nan"), lr, True)
    grads = backward_pass(tape, loss)
    names = list(params)
    raw = [grads.get(id(params[n]), np.zeros_like(params[n].data)) for n in names]
    clipped, norm = clip_global_norm(raw, cfg.clip_norm)
    if not math.isfinite(norm):
        return StepResult(value, norm, lr, True)
    opt.step(dict(zip(names, clipped)), lr)
    return StepResult(value, norm, lr, False)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, history: list[float], restarts: int):
        super().__init__(message)
        self.history = history
        self.restarts = restarts


@dataclass
class TrainResult:
    history: list[float]
    restarts: int
    restart_steps: list[int] = field(default_factory=list)
    checkpoint: bytes = b""


def make_optimizer(model, cfg: TrainConfig) -> AdamW:
    return AdamW(dict(model.store.items()), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)


def snapshot(model, opt: AdamW, step: int, history: list[float], restarts: int) -> bytes:
    entries = model_entries(model)
    entries.update(opt.state())
    entries["state.step"] = np.asarray(step, dtype=np.float64)
    entries["state.restarts"] = np.asarray(restarts, dtype=np.float64)
    entries["state.history"] = np.asarray(history, dtype=np.float64)
    return checkpoint_to_bytes(entries)


def restore(model, opt: AdamW, blob: bytes) -> tuple[int, list[float], int]:
    entries = checkpoint_from_bytes(blob)
    weights = {k: v for k, v in entries.items() if not k.startswith(("config.", "optim.", "state."))}
    model.store.load_state(weights)
    opt.load_state(entries)
    return int(entries["state.step"]), [float(x) for x in entries["state.history"]], int(entries["state.restarts"])


def train_loop(model, ds: Dataset, cfg: TrainConfig, checkpoint_dir=None, resume: bool = False,
               inject_nan_at=(), log_every: int = 0,
               callback: Callable[[int, StepResult], None] | None = None) -> TrainResult:
    """Train ``model`` on ``ds`` for ``cfg.steps`` accepted steps.

    ``inject_nan_at`` lists steps whose first attempt is poisoned with a NaN
    loss.  Raises :class:`TrainingAborted` once more than
    ``cfg.max_restarts`` restarts are needed.
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    opt = make_optimizer(model, cfg)
    path = Path(checkpoint_dir) / CHECKPOINT_NAME if checkpoint_dir is not None else None
    step, history, restarts = 0, [], 0
    if resume and path is not None and path.exists():
        step, history, restarts = restore(model, opt, path.read_bytes())
        log.info("resumed from %s at step %d", path, step)
    last = snapshot(model, opt, step, history, restarts)
    if path is not None:
        os.makedirs(path.parent, exist_ok=True)
        atomic_write_bytes(path, last)
    faults = set(int(s) for s in inject_nan_at)
    restart_steps: list[int] = []
    while step < cfg.steps:
        batch = sample_batch(ds, cfg, step, restarts)
        reference = float(np.median(history[-_MEDIAN_WINDOW:])) if len(history) >= 10 else None
        poison = step in faults
        faults.discard(step)
        res = train_step(model, batch, opt, cfg, step, poison=poison, reference=reference)
        if res.blowup:
            restarts += 1
            restart_steps.append(step)
            log.warning("step %d: loss %.4g rejected; restart %d from checkpoint", step, res.loss, restarts)
            if restarts > cfg.max_restarts:
                raise TrainingAborted(f"loss blew up at step {step}; restart budget of "
                                      f"{cfg.max_restarts} exhausted", history, restarts)
            step, history, _ = restore(model, opt, last)
            continue
        history.append(res.loss)
        step += 1
        if callback is not None:
            callback(step, res)
        if log_every and step % log_every == 0:
            log.info("step %d  loss %.6g  lr %.3g  |g| %.3g", step, res.loss, res.lr, res.grad_norm)
        if step % cfg.checkpoint_every == 0 or step == cfg.steps:
            last = snapshot(model, opt, step, history, restarts)
            if path is not None:
                atomic_write_bytes(path, last)
    return TrainResult(history, restarts, restart_steps, last)
