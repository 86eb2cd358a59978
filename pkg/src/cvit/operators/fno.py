"""Single Fourier layer on a periodic 1D grid, in grid and continuous form.

Transform convention: ``u_hat_j = (1/N) sum_m u_m exp(-2 pi i j m / N)`` for
``j = 0..n-1``.  Reconstruction completes the conjugate-symmetric spectrum
with zeros, which gives each retained mode the real-valued weight::

    c_j = 1  for j = 0 and for the Nyquist mode j = N/2 (even N)
    c_j = 2  otherwise

    f(y) = sum_j c_j [Re(v_j) cos(2 pi j y) - Im(v_j) sin(2 pi j y)]

The grid path runs this through FFTs; the continuous path evaluates the sum
directly on a Fourier positional encoding, so it can be queried anywhere.
The Nyquist sine term vanishes on the grid and is dropped off the grid.
"""

from __future__ import annotations

import numpy as np

from ..fields import ConditionedField, FourierEncoding, fourier_encode
from ..tensor import Rng, Tensor, activation, as_tensor, matmul, reshape, stack, swapaxes
from ..tensor.core import _emit, primitive
from .params import ParamStore


def max_modes(n_grid: int) -> int:
    return n_grid // 2 + 1


def mode_weights(n_modes: int, n_grid: int) -> np.ndarray:
    c = np.full(n_modes, 2.0)
    c[0] = 1.0
    if n_grid % 2 == 0 and n_modes > n_grid // 2:
        c[n_grid // 2] = 1.0
    return c


def _check_modes(n_modes: int, n_grid: int) -> None:
    if not 1 <= n_modes <= max_modes(n_grid):
        raise ValueError(f"n_modes={n_modes} outside 1..{max_modes(n_grid)} for a grid of {n_grid}")


@primitive("dft_modes")
def dft_modes(u: Tensor, n_modes: int) -> Tensor:
    """Truncated forward transform along axis -2.

    ``u`` is ``[..., N, d]``; returns ``[..., n, 2, d]`` holding real and
    imaginary parts of ``u_hat_0..u_hat_{n-1}``.
    """
    u = as_tensor(u)
    n_grid = u.shape[-2]
    _check_modes(n_modes, n_grid)
    spec = np.fft.rfft(u.data, axis=-2)[..., :n_modes, :] / n_grid
    out = np.stack([spec.real, spec.imag], axis=-2).astype(u.dtype)

    def vjp(g):
        full = np.zeros(g.shape[:-3] + (n_grid, g.shape[-1]), dtype=np.complex128)
        full[..., :n_modes, :] = g[..., 0, :] + 1j * g[..., 1, :]
        return (np.fft.ifft(full, axis=-2).real.astype(u.dtype),)

    return _emit("dft_modes", out, (u,), vjp)


@primitive("idft_modes")
def idft_modes(v: Tensor, n_grid: int) -> Tensor:
    """Reconstruct ``[..., N, d]`` grid values from ``[..., n, 2, d]`` coefficients."""
    v = as_tensor(v)
    n_modes = v.shape[-3]
    _check_modes(n_modes, n_grid)
    full = np.zeros(v.shape[:-3] + (max_modes(n_grid), v.shape[-1]), dtype=np.complex128)
    full[..., :n_modes, :] = v.data[..., 0, :] + 1j * v.data[..., 1, :]
    out = (np.fft.irfft(full, n=n_grid, axis=-2) * n_grid).astype(v.dtype)
    c = mode_weights(n_modes, n_grid)[:, None]

    def vjp(g):
        spec = np.fft.rfft(g, axis=-2)[..., :n_modes, :]
        return (np.stack([c * spec.real, c * spec.imag], axis=-2).astype(v.dtype),)

    return _emit("idft_modes", out, (v,), vjp)


def _complex_mix(k_re: Tensor, k_im: Tensor, coeffs: Tensor) -> Tensor:
    """``K @ u_hat`` in real arithmetic; ``coeffs`` is ``[..., n, 2, d]``."""
    re, im = coeffs[..., 0, :], coeffs[..., 1, :]
    out_re = matmul(k_re, re) - matmul(k_im, im)
    out_im = matmul(k_re, im) + matmul(k_im, re)
    return stack([out_re, out_im], axis=-2)


def _encoding_weights(coeffs: Tensor, n_grid: int, nyquist_sine: bool = False) -> Tensor:
    """Map ``[..., n, 2, d]`` coefficients to weights on the interleaved
    ``[cos, sin]`` encoding: row ``2j`` gets ``c_j Re``, row ``2j+1`` gets ``-c_j Im``."""
    n_modes = coeffs.shape[-3]
    c = mode_weights(n_modes, n_grid)
    signs = np.stack([c, -c], axis=-1)
    if not nyquist_sine and n_grid % 2 == 0 and n_modes > n_grid // 2:
        signs[n_grid // 2, 1] = 0.0
    scaled = coeffs * Tensor(signs[:, :, None].astype(coeffs.dtype))
    return reshape(scaled, coeffs.shape[:-3] + (2 * n_modes, coeffs.shape[-1]))


class FnoLayer(ConditionedField):
    """``s = act(W u + IDFT_n(K DFT_n(u)))`` on a periodic grid of ``n_grid`` points.

    ``K`` mixes the retained modes (complex ``n x n``, stored as a real/imag
    pair) and is shared across channels; ``W`` mixes channels pointwise.
    """

    kind = "both"

    def __init__(self, store: ParamStore, name: str, n_grid: int, n_modes: int, channels: int = 1,
                 act: str = "gelu"):
        _check_modes(n_modes, n_grid)
        self.n_grid = n_grid
        self.n_modes = n_modes
        self.channels = channels
        self.k_re = store.create(f"{name}.k_re", (n_modes, n_modes), init="normal", std=1.0 / n_modes)
        self.k_im = store.create(f"{name}.k_im", (n_modes, n_modes), init="normal", std=1.0 / n_modes)
        self.w = store.create(f"{name}.w", (channels, channels))
        self.act_name = act
        self.act = activation(act)

    def _check_input(self, u: Tensor) -> Tensor:
        u = as_tensor(u, like=self.w)
        if u.ndim == 1:
            u = reshape(u, (-1, 1))
        if u.shape[-2:] != (self.n_grid, self.channels):
            raise ValueError(f"expected [..., {self.n_grid}, {self.channels}] input, got {u.shape}")
        return u

    def local_term(self, u: Tensor) -> Tensor:
        return matmul(u, swapaxes(self.w, -1, -2))

    def spectral_coeffs(self, u: Tensor) -> Tensor:
        return _complex_mix(self.k_re, self.k_im, dft_modes(u, self.n_modes))

    def grid(self, u) -> Tensor:
        """Evaluate on the ``n_grid`` points ``m / N``."""
        u = self._check_input(u)
        spectral = idft_modes(self.spectral_coeffs(u), self.n_grid)
        return self.act(self.local_term(u) + spectral)

    # conditioned-field form -------------------------------------------------
    def condition(self, u):
        """Global code: mixed spectrum ``K u_hat``; local code: the full
        spectrum of ``u`` used for band-limited interpolation of ``u(y)``."""
        u = self._check_input(u)
        return self.spectral_coeffs(u), dft_modes(u, max_modes(self.n_grid))

    def field(self, y, z) -> Tensor:
        mixed, full = z
        y = as_tensor(y, like=self.w)
        if y.ndim == 0 or y.shape[-1] != 1:
            y = reshape(y, y.shape + (1,))
        if not np.all(np.isfinite(y.data)):
            raise ValueError("query coordinates must be finite")
        enc_n = fourier_encode(y, FourierEncoding.first_modes(self.n_modes))
        enc_full = fourier_encode(y, FourierEncoding.first_modes(max_modes(self.n_grid)))
        # batch axes of the codes lead; queries are [..., Q, 1]
        spectral = matmul(enc_n, _encoding_weights(mixed, self.n_grid))
        u_interp = matmul(enc_full, _encoding_weights(full, self.n_grid))
        return self.act(self.local_term(u_interp) + spectral)

    def continuous(self, u, y) -> Tensor:
        return self(u, y)



def equivalence_discrepancy(n_grid: int, n_modes: int, trials: int = 50, seed: int = 0,
                            channels: int = 1, act: str = "gelu") -> float:
    """Largest relative gap between grid and continuous evaluation at the grid points.

    Each trial draws fresh ``K``, ``W`` and ``u`` in float64; the gap is
    ``max |grid - continuous| / max |grid|``.
    """
    worst = 0.0
    y = (np.arange(n_grid, dtype=np.float64) / n_grid)[:, None]
    for trial in range(trials):
        rng = Rng(seed, trial)
        layer = FnoLayer(ParamStore(rng.spawn(0), np.float64), "fno", n_grid, n_modes, channels, act)
        u = rng.normal((n_grid, channels))
        on_grid = layer.grid(u).data
        off_grid = layer.continuous(u, y).data
        scale = max(float(np.abs(on_grid).max()), np.finfo(np.float64).tiny)
        worst = max(worst, float(np.abs(on_grid - off_grid).max()) / scale)
    return worst
