"""Periodic linear advection benchmark and the CVD1 dataset file format.

Initial conditions are square waves: the sign pattern of a mean-zero
Gaussian random field with covariance ``(-Laplacian + tau^2)^(-d)`` on the
unit circle.  The target is the exact transport solution
``u(x, t) = u0((x - c t) mod 1)``.

File layout (little-endian)::

    b"CVD1" | u16 version | u32 n_samples | u32 N | u32 n_channels
    | u32 metadata length | UTF-8 "key=value" lines
    | per sample: u0 then target, each N * n_channels f32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators.params import atomic_write_bytes
from .tensor import Rng

MAGIC = b"CVD1"
VERSION = 1
_HEADER = struct.Struct("<4sHIIII")


class DatasetFormatError(ValueError):
    pass


class BadMagicError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class GrfSpec:
    n: int = 200
    tau: float = 3.0
    d: float = 2.0
    modes: int | None = None

    def __post_init__(self):
        if self.n <= 0 or self.n % 2:
            raise ValueError(f"grid size must be a positive even number, got {self.n}")
        if self.tau <= 0 or self.d <= 0:
            raise ValueError("tau and d must be positive")
        if self.modes is not None and not 1 <= self.modes <= self.n // 2:
            raise ValueError(f"modes must lie in [1, {self.n // 2}]")

    @property
    def n_modes(self) -> int:
        return self.n // 2 if self.modes is None else self.modes

    def eigenvalues(self) -> np.ndarray:
        """``lambda_k = ((2 pi k)^2 + tau^2)^(-d)`` for ``k = 1..M``."""
        k = np.arange(1, self.n_modes + 1, dtype=np.float64)
        return ((2.0 * np.pi * k) ** 2 + self.tau ** 2) ** (-self.d)


def grid_points(n: int) -> np.ndarray:
    """Periodic grid ``x_m = m / N``."""
    return np.arange(n, dtype=np.float64) / n


def _basis(spec: GrfSpec) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, spec.n_modes + 1)[:, None]
    phase = 2.0 * np.pi * k * grid_points(spec.n)[None, :]
    amp = np.sqrt(spec.eigenvalues())[:, None]
    return amp * np.cos(phase), amp * np.sin(phase)


def grf_coefficients(spec: GrfSpec, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Standard normal ``(a_k, b_k)`` for one draw."""
    ab = rng.normal(2 * spec.n_modes)
    return ab[:spec.n_modes], ab[spec.n_modes:]


def sample_grf(spec: GrfSpec, rng: Rng) -> np.ndarray:
    """One mean-zero field on the periodic grid by spectral synthesis."""
    cos_b, sin_b = _basis(spec)
    a, b = grf_coefficients(spec, rng)
    return a @ cos_b + b @ sin_b


def square_wave(field_values: np.ndarray) -> np.ndarray:
    """``-1 + 2 * [f >= 0]``; zero maps to +1."""
    return np.where(field_values >= 0, 1.0, -1.0)


def shift_periodic(u: np.ndarray, shift: float, exact: bool = True) -> np.ndarray:
    """``v[m] = u((x_m - shift) mod 1)`` along the last axis; ``shift`` in periods.

    With ``exact=True`` the shift must land on the grid and is a circular
    roll.  Otherwise the band-limited interpolant is shifted through the
    spectrum.
    """
    n = u.shape[-1]
    cells = shift * n
    whole = round(cells)
    if abs(cells - whole) < 1e-9:
        return np.roll(u, int(whole) % n, axis=-1)
    if exact:
        raise ValueError(f"shift of {cells:g} cells is not a whole number of grid cells; "
                         "use the band-limited shift instead")
    k = np.fft.rfftfreq(n, d=1.0 / n)
    spec = np.fft.rfft(u, axis=-1) * np.exp(-2j * np.pi * k * shift)
    if n % 2 == 0:
        spec[..., -1] = spec[..., -1].real * np.cos(np.pi * cells)
    return np.fft.irfft(spec, n=n, axis=-1)


def count_jumps(u0: np.ndarray) -> int:
    """Sign changes of a periodic profile (circular)."""
    return int(np.count_nonzero(u0 != np.roll(u0, -1)))


@dataclass
class Dataset:
    """``u0`` and ``target`` of shape ``[n_samples, N, n_channels]`` (float32)."""

    u0: np.ndarray
    target: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.u0 = _as_samples(self.u0)
        self.target = _as_samples(self.target)
        if self.u0.shape != self.target.shape:
            raise ValueError(f"u0 {self.u0.shape} and target {self.target.shape} differ in shape")
        self.metadata = {str(k): str(v) for k, v in self.metadata.items()}

    def __len__(self) -> int:
        return self.u0.shape[0]

    @property
    def grid_size(self) -> int:
        return self.u0.shape[1]

    @property
    def channels(self) -> int:
        return self.u0.shape[2]

    def coords(self) -> np.ndarray:
        """Query coordinates ``[N, 1]``."""
        return grid_points(self.grid_size)[:, None]

    def subset(self, index) -> "Dataset":
        return Dataset(self.u0[index], self.target[index], dict(self.metadata))

    def split(self) -> tuple["Dataset", "Dataset", "Dataset"]:
        """Contiguous train / validation / test parts in proportion 2 : 1 : 1."""
        n = len(self)
        n_train, n_val = n // 2, n // 4
        return (self.subset(slice(0, n_train)), self.subset(slice(n_train, n_train + n_val)),
                self.subset(slice(n_train + n_val, n)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.metadata == other.metadata and self.u0.shape == other.u0.shape
                and self.u0.tobytes() == other.u0.tobytes() and self.target.tobytes() == other.target.tobytes())


def _as_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3:
        raise ValueError(f"expected [n_samples, N] or [n_samples, N, channels], got shape {x.shape}")
    return np.ascontiguousarray(x)


def make_advection_dataset(n_samples: int, spec: GrfSpec = GrfSpec(), t: float = 0.5, c: float = 1.0,
                           seed: int = 0, exact_shift: bool = True) -> Dataset:
    """Square-wave initial conditions and their transport by ``c * t``.

    Sample ``i`` draws from the substream ``(seed, i)`` only, so any subset of
    indices can be generated in any order with identical results.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    shift = c * t
    cells = shift * spec.n
    on_grid = abs(cells - round(cells)) < 1e-9
    if exact_shift and not on_grid:
        raise ValueError(f"c*t*N = {cells:g} is not an integer; an exact circular shift is impossible "
                         "(pass exact_shift=False for a band-limited shift)")
    cos_b, sin_b = _basis(spec)
    u0 = np.empty((n_samples, spec.n))
    resampled = 0
    for i in range(n_samples):
        rng = Rng(seed, i)
        while True:
            a, b = grf_coefficients(spec, rng)
            wave = square_wave(a @ cos_b + b @ sin_b)
            if wave.min() != wave.max():
                break
            resampled += 1
        u0[i] = wave
    target = shift_periodic(u0, shift, exact=True) if on_grid else shift_periodic(u0, shift, exact=False)
    meta = {
        "problem": "advection", "N": spec.n, "tau": repr(spec.tau), "d": repr(spec.d), "modes": spec.n_modes,
        "t": repr(t), "c": repr(c), "seed": seed, "shift": "exact" if on_grid else "bandlimited",
        "resampled": resampled,
    }
    return Dataset(u0, target, meta)


# -- persistence -------------------------------------------------------------

def _encode_metadata(meta: dict[str, str]) -> bytes:
    lines = []
    for k, v in meta.items():
        if "=" in k or "\n" in k or "\n" in v:
            raise ValueError(f"metadata entry {k!r} cannot be encoded as a key=value line")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def _decode_metadata(raw: bytes) -> dict[str, str]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError("dataset metadata is not valid UTF-8") from exc
    meta = {}
    for line in text.split("\n") if text else []:
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetFormatError(f"malformed metadata line {line!r}")
        meta[key] = value
    return meta


def dataset_to_bytes(ds: Dataset) -> bytes:
    meta = _encode_metadata(ds.metadata)
    n, size, ch = ds.u0.shape
    header = _HEADER.pack(MAGIC, VERSION, n, size, ch, len(meta))
    payload = np.stack([ds.u0, ds.target], axis=1).astype("<f4", copy=False).tobytes()
    return header + meta + payload


def dataset_from_bytes(buf: bytes) -> Dataset:
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}; not a CVD1 dataset")
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError("truncated header")
    _, version, n, size, ch, meta_len = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise VersionMismatchError(f"dataset version {version} is not supported (expected {VERSION})")
    start = _HEADER.size + meta_len
    expected = start + 2 * n * size * ch * 4
    if len(buf) < expected:
        raise TruncatedPayloadError(f"truncated payload: {len(buf)} bytes, expected {expected}")
    if len(buf) > expected:
        raise DatasetFormatError(f"{len(buf) - expected} trailing bytes after the payload")
    meta = _decode_metadata(bytes(buf[_HEADER.size:start]))
    data = np.frombuffer(buf, dtype="<f4", offset=start).reshape(n, 2, size, ch).astype(np.float32)
    return Dataset(data[:, 0], data[:, 1], meta)


def save_dataset(path, ds: Dataset) -> None:
    atomic_write_bytes(path, dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())
