"""Finite-difference verification of backward rules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import core
from . import functional as F
from .core import Tape, Tensor, backward_pass
from .rng import Rng


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: np.ndarray
    numeric: np.ndarray

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_error:.3e} at {self.worst_index}"


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    return out.item()


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f`` at ``x`` with central differences.

    The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps coordinates with vanishing gradient from dividing by zero.
    """
    x0 = np.array(getattr(x, "data", x), dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise ValueError("grad_check input must be finite")
    leaf = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
    _scalar(out)
    grads = backward_pass(tape, out) if out.requires_grad else {}
    analytic = grads.get(id(leaf), np.zeros_like(x0))

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(Tensor(x0)))
        flat[i] = orig - h
        fm = _scalar(f(Tensor(x0)))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"f is not finite at x +/- h along coordinate {i}")
        num_flat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel <= tol, max_rel, tuple(int(i) for i in worst), analytic, numeric)


# ---------------------------------------------------------------------------
# one randomized case per primitive input


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor(weights)).sum()


def primitive_cases(rng: Rng) -> Iterator[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    """Yield ``(name, f, x)`` with ``f`` scalar-valued, for every registered primitive.

    Every case draws fresh shapes/values from ``rng``; callers loop to get
    several random inputs per primitive.
    """
    def n(*shape):
        return rng.normal(shape)

    def pos(*shape):
        return rng.uniform(shape, 0.5, 2.0)

    r23 = n(2, 3)
    other = n(3)
    yield "add", lambda t: _project(core.add(t, Tensor(other)), r23), n(2, 3)
    yield "add", lambda t: _project(core.add(Tensor(r23), t), r23), n(3)
    yield "sub", lambda t: _project(core.sub(Tensor(other), t), r23), n(2, 3)
    yield "sub", lambda t: _project(core.sub(Tensor(r23), t), r23), n(1, 3)
    m = n(2, 3)
    yield "mul", lambda t: _project(core.mul(t, Tensor(m)), r23), n(2, 3)
    yield "mul", lambda t: _project(core.mul(Tensor(m), t), r23), n(2, 1)
    d = pos(2, 3)
    yield "div", lambda t: _project(core.div(t, Tensor(d)), r23), n(2, 3)
    yield "div", lambda t: _project(core.div(Tensor(m), t), r23), pos(2, 3)
    yield "neg", lambda t: _project(core.neg(t), r23), n(2, 3)
    yield "power", lambda t: _project(core.power(t, 3), r23), n(2, 3)
    yield "power", lambda t: _project(core.power(t, 2.5), r23), pos(2, 3)
    yield "exp", lambda t: _project(core.exp(t), r23), n(2, 3)
    yield "log", lambda t: _project(core.log(t), r23), pos(2, 3)
    yield "sqrt", lambda t: _project(core.sqrt(t), r23), pos(2, 3)
    yield "tanh", lambda t: _project(core.tanh(t), r23), n(2, 3)
    yield "sin", lambda t: _project(core.sin(t), r23), n(2, 3)
    yield "cos", lambda t: _project(core.cos(t), r23), n(2, 3)
    away = n(2, 3)
    away = np.sign(away) * (0.1 + np.abs(away))
    yield "relu", lambda t: _project(core.relu(t), r23), away

    b = n(2, 3, 4)
    r_mm = n(2, 4, 4)
    yield "matmul", lambda t: _project(core.matmul(t, Tensor(b)), r_mm), n(4, 3)
    a = n(2, 4, 3)
    yield "matmul", lambda t: _project(core.matmul(Tensor(a), t), r_mm), n(3, 4)
    r34 = n(3, 4)
    proj1 = n(3)
    yield "sum", lambda t: _project(core.sum_(t, axis=1), proj1) + core.sum_(t), n(3, 4)
    proj2 = n(1, 3, 1)
    yield "sum", lambda t: _project(core.sum_(t, axis=(0, 2), keepdims=True), proj2), n(2, 3, 2)
    proj3 = n(4)
    yield "mean", lambda t: _project(core.mean(t, axis=0), proj3) * 3.0, n(3, 4)
    yield "reshape", lambda t: _project(core.reshape(t, (4, 3)), r34.reshape(4, 3)), n(3, 4)
    r243 = n(4, 3, 2)
    yield "transpose", lambda t: _project(core.transpose(t, (2, 1, 0)), r243), n(2, 3, 4)
    yield "broadcast_to", lambda t: _project(core.broadcast_to(t, (3, 4)), r34), n(1, 4)
    idx = (np.array([0, 2, 2, 1]), slice(None))
    proj4 = n(4, 4)
    yield "getitem", lambda t: _project(core.getitem(t, idx), proj4), n(3, 4)
    c1 = n(2, 2)
    proj5 = n(2, 8)
    yield "concat", lambda t: _project(core.concat([Tensor(c1), t, t], axis=1), proj5), n(2, 3)

    r_sm = n(3, 5)
    yield "softmax", lambda t: _project(F.softmax(t, axis=-1), r_sm), n(3, 5)
    yield "softmax", lambda t: _project(F.softmax(t, axis=0), r_sm), n(3, 5)
    gain, bias = n(5), n(5)
    yield "layer_norm", lambda t: _project(F.layer_norm(t, Tensor(gain), Tensor(bias), 1e-6), r_sm), n(3, 5)
    xs = n(3, 5)
    yield "layer_norm", lambda t: _project(F.layer_norm(Tensor(xs), t, Tensor(bias)), r_sm), n(5)
    yield "layer_norm", lambda t: _project(F.layer_norm(Tensor(xs), Tensor(gain), t), r_sm), n(5)
    yield "gelu", lambda t: _project(F.gelu(t), r23), n(2, 3) * 2.0

    from ..operators import fno

    u8 = n(8, 2)
    proj6 = n(3, 2, 2)
    yield "dft_modes", lambda t: _project(fno.dft_modes(t, 3), proj6), u8
    proj7 = n(5, 2, 2)
    yield "dft_modes", lambda t: _project(fno.dft_modes(t, 5), proj7), u8
    proj8 = n(8, 2)
    yield "idft_modes", lambda t: _project(fno.idft_modes(t, 8), proj8), n(5, 2, 2)
    proj9 = n(7, 2)
    yield "idft_modes", lambda t: _project(fno.idft_modes(t, 7), proj9), n(3, 2, 2)


def grid_interpolate_cases(rng: Rng) -> Iterator[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    from ..fields import LatentGrid, grid_interpolate

    shape = (int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    queries = rng.uniform((4, 2))
    eps = float(rng.uniform((), 1.0, 30.0))
    weights = rng.normal((4, 3))

    def f(features: Tensor) -> Tensor:
        grid = LatentGrid(shape, features, eps)
        return _project(grid_interpolate(Tensor(queries, dtype=np.float64), grid), weights)

    yield "grid_interpolate", f, rng.normal(shape + (3,))


def run_all(n_trials: int = 10, seed: int = 0, h: float = 1e-5, tol: float = 1e-4) -> dict[str, float]:
    """Worst relative error per primitive over ``n_trials`` random draws."""
    worst: dict[str, float] = {}
    for trial in range(n_trials):
        rng = Rng(seed, trial)
        for name, f, x in list(primitive_cases(rng)) + list(grid_interpolate_cases(rng)):
            report = grad_check(f, x, h=h, tol=tol)
            worst[name] = max(worst.get(name, 0.0), report.max_rel_error)
    return worst
