"""Test metrics, auto-regressive rollout and the metrics CSV."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, shift_periodic
from .operators.params import atomic_write_bytes


class ZeroNormError(ValueError):
    pass


def _samples(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim < 2:
        raise ValueError(f"expected [n_samples, ..., D] arrays, got shape {x.shape}")
    return x


def rel_l2_per_sample(pred, truth) -> np.ndarray:
    """Per-sample relative L2 error averaged over the trailing variable axis.

    Arrays are ``[n, *grid, D]``; norms run over the grid.
    """
    pred, truth = _samples(pred), _samples(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    axes = tuple(range(1, truth.ndim - 1))
    denom = np.sqrt(np.sum(truth ** 2, axis=axes))  # [n, D]
    zero = np.argwhere(denom == 0)
    if len(zero):
        i, k = zero[0]
        raise ZeroNormError(f"truth has zero norm for sample {i}, variable {k}")
    num = np.sqrt(np.sum((pred - truth) ** 2, axis=axes))
    return (num / denom).mean(axis=-1)


def rel_l2(pred, truth) -> float:
    return float(rel_l2_per_sample(pred, truth).mean())


def total_variation(f, g) -> float:
    """``sum_m | |f[m+1] - f[m]| - |g[m+1] - g[m]| |`` with circular indexing."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != g.shape or f.ndim != 1:
        raise ValueError(f"expected two 1D profiles of equal length, got {f.shape} and {g.shape}")
    df = np.abs(np.roll(f, -1) - f)
    dg = np.abs(np.roll(g, -1) - g)
    return float(np.sum(np.abs(df - dg)))


def total_variation_per_sample(pred, truth) -> np.ndarray:
    """TV for ``[n, N, D]`` arrays, averaged over variables."""
    pred, truth = _samples(pred), _samples(truth)
    if pred.shape != truth.shape or pred.ndim != 3:
        raise ValueError(f"expected matching [n, N, D] arrays, got {pred.shape} and {truth.shape}")
    df = np.abs(np.roll(pred, -1, axis=1) - pred)
    dg = np.abs(np.roll(truth, -1, axis=1) - truth)
    return np.abs(df - dg).sum(axis=1).mean(axis=-1)


@dataclass
class MetricsReport:
    rel_l2: np.ndarray
    tv: np.ndarray

    @staticmethod
    def aggregate(values: np.ndarray) -> dict[str, float]:
        return {"mean": float(np.mean(values)), "median": float(np.median(values)),
                "worst": float(np.max(values))}

    def summary(self) -> dict[str, dict[str, float]]:
        return {"rel_l2": self.aggregate(self.rel_l2), "tv": self.aggregate(self.tv)}

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("sample_id,rel_l2,tv\n")
        for i, (r, t) in enumerate(zip(self.rel_l2, self.tv)):
            out.write(f"{i},{r:.9g},{t:.9g}\n")
        for name, agg in self.summary().items():
            out.write(f"# {name}: mean={agg['mean']:.9g}, median={agg['median']:.9g}, worst={agg['worst']:.9g}\n")
        return out.getvalue()

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_csv().encode("utf-8"))


def evaluate(pred, truth) -> MetricsReport:
    return MetricsReport(rel_l2_per_sample(pred, truth), total_variation_per_sample(pred, truth))


# -- rollout -----------------------------------------------------------------

Stepper = Callable[[np.ndarray], np.ndarray]


def rollout(step: Stepper, window: np.ndarray, n_steps: int) -> np.ndarray:
    """Feed predictions back as inputs.

    ``window`` is ``[B, T, *grid, D]``; ``step`` maps a window to the next
    frame ``[B, *grid, D]``.  Returns ``[n_steps, B, *grid, D]``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    window = np.asarray(window)
    frames = []
    for _ in range(n_steps):
        nxt = np.asarray(step(window))
        frames.append(nxt)
        window = np.concatenate([window[:, 1:], nxt[:, None].astype(window.dtype)], axis=1)
    return np.stack(frames)


def identity_step(window: np.ndarray) -> np.ndarray:
    """Baseline: the next frame equals the last one."""
    return np.asarray(window)[:, -1]


def model_step(model, coords: np.ndarray, batch_size: int = 64) -> Stepper:
    """Next-frame predictor that queries ``model`` at every point of ``coords``.

    ``coords`` is ``[*grid, dim]``; each window is ``[B, T, *grid, D]``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    grid = coords.shape[:-1]
    flat = coords.reshape(-1, coords.shape[-1])

    def step(window):
        window = np.asarray(window, dtype=model.store.dtype)
        out = []
        for i in range(0, len(window), batch_size):
            chunk = window[i:i + batch_size]
            u = chunk if getattr(model, "name", None) == "cvit" else chunk[:, -1]
            pred = model.predict(u, flat).data
            out.append(pred.reshape((len(chunk),) + grid + (pred.shape[-1],)))
        return np.concatenate(out)

    return step


def advection_truth(ds: Dataset, n_steps: int) -> np.ndarray:
    """Exact solution after ``n_steps`` applications of the dataset's transport."""
    t = float(ds.metadata.get("t", 0.5))
    c = float(ds.metadata.get("c", 1.0))
    exact = ds.metadata.get("shift", "exact") == "exact"
    u = np.moveaxis(ds.u0.astype(np.float64), 1, -1)
    return np.moveaxis(shift_periodic(u, n_steps * c * t, exact=exact), -1, 1)


def evaluate_dataset(step: Stepper, ds: Dataset, n_steps: int = 1) -> MetricsReport:
    """Metrics of the frame reached after ``n_steps`` rollout steps from ``u0``."""
    frames = rollout(step, ds.u0[:, None], n_steps)
    return evaluate(frames[-1], advection_truth(ds, n_steps))
