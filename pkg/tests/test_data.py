import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvit.data import (
    BadMagicError,
    Dataset,
    DatasetFormatError,
    GrfSpec,
    TruncatedPayloadError,
    VersionMismatchError,
    count_jumps,
    dataset_from_bytes,
    dataset_to_bytes,
    grf_coefficients,
    grid_points,
    load_dataset,
    make_advection_dataset,
    sample_grf,
    save_dataset,
    shift_periodic,
    square_wave,
)
from cvit.tensor import Rng


def test_eigenvalue_ratio_hand_value():
    lam = GrfSpec().eigenvalues()
    a1 = (4 * math.pi ** 2 + 9) ** -2
    a2 = (16 * math.pi ** 2 + 9) ** -2
    assert lam[0] == pytest.approx(a1, rel=1e-12)
    assert lam[0] / lam[1] == pytest.approx(a1 / a2, rel=1e-12)
    # the ratio lambda_2 / lambda_1 from the closed form
    assert lam[1] / lam[0] == pytest.approx(0.0841, abs=5e-4)
    assert np.all(np.diff(lam) < 0)


def test_grf_has_zero_mean_mode():
    u = sample_grf(GrfSpec(n=64), Rng(0))
    assert abs(u.mean()) < 1e-15


def test_square_wave_tie_goes_up():
    np.testing.assert_array_equal(square_wave(np.array([-0.1, 0.0, 2.0])), [-1.0, 1.0, 1.0])


def test_grid_is_periodic_without_endpoint():
    x = grid_points(4)
    np.testing.assert_array_equal(x, [0, 0.25, 0.5, 0.75])


def test_exact_shift_by_half():
    u = np.arange(6.0)
    np.testing.assert_array_equal(shift_periodic(u, 0.5), [3, 4, 5, 0, 1, 2])
    with pytest.raises(ValueError, match="band-limited"):
        shift_periodic(u, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2, 2))
def test_band_limited_shift_of_trigonometric_polynomial(seed, shift):
    n = 32
    x = grid_points(n)
    a = Rng(seed).normal(4)
    def f(s):
        return a[0] + a[1] * np.cos(2 * np.pi * (x - s)) + a[2] * np.sin(6 * np.pi * (x - s)) + a[3] * np.cos(10 * np.pi * (x - s))
    np.testing.assert_allclose(shift_periodic(f(0.0), shift, exact=False), f(shift), atol=1e-10)


def test_band_limited_shift_round_trip():
    u = square_wave(sample_grf(GrfSpec(n=40), Rng(4)))
    back = shift_periodic(shift_periodic(u, 0.137, exact=False), -0.137, exact=False)
    np.testing.assert_allclose(back, u, atol=1e-10)


def test_advection_dataset_is_exact_transport():
    ds = make_advection_dataset(20, t=0.5, c=1.0, seed=3)
    assert ds.u0.shape == (20, 200, 1) and ds.u0.dtype == np.float32
    np.testing.assert_array_equal(ds.target[:, :, 0], np.roll(ds.u0[:, :, 0], 100, axis=1))
    assert set(np.unique(ds.u0)) == {-1.0, 1.0}
    assert all(count_jumps(u) >= 2 for u in ds.u0[:, :, 0])
    assert ds.metadata["shift"] == "exact" and ds.metadata["N"] == "200"


def test_non_integer_shift_needs_band_limited_mode():
    with pytest.raises(ValueError, match="not an integer"):
        make_advection_dataset(2, t=0.3, c=0.01)
    ds = make_advection_dataset(2, t=0.3, c=0.01, exact_shift=False)
    assert ds.metadata["shift"] == "bandlimited"


def test_generation_is_order_independent():
    full = make_advection_dataset(12, seed=9)
    part = make_advection_dataset(6, seed=9)
    assert full.subset(slice(0, 6)) == part
    # sample i depends on its own substream only
    a, _ = grf_coefficients(GrfSpec(), Rng(9, 4))
    b, _ = grf_coefficients(GrfSpec(), Rng(9, 4))
    np.testing.assert_array_equal(a, b)


def test_split_proportions():
    ds = Dataset(np.zeros((40_000, 4)), np.zeros((40_000, 4)))
    tr, va, te = ds.split()
    assert (len(tr), len(va), len(te)) == (20_000, 10_000, 10_000)
    small = Dataset(np.zeros((7, 4)), np.zeros((7, 4)))
    assert [len(p) for p in small.split()] == [3, 1, 3]


def test_dataset_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 4)), np.zeros((3, 5)))


def test_round_trip_is_bit_exact(tmp_path):
    ds = make_advection_dataset(5, GrfSpec(n=50), t=0.2, c=1.0, seed=1)
    save_dataset(tmp_path / "a.cvd", ds)
    back = load_dataset(tmp_path / "a.cvd")
    assert back == ds
    assert dataset_to_bytes(back) == (tmp_path / "a.cvd").read_bytes()


def test_corruptions_give_distinct_errors():
    raw = dataset_to_bytes(make_advection_dataset(3, GrfSpec(n=20), t=0.5))
    with pytest.raises(BadMagicError):
        dataset_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(VersionMismatchError):
        dataset_from_bytes(raw[:4] + (7).to_bytes(2, "little") + raw[6:])
    with pytest.raises(TruncatedPayloadError):
        dataset_from_bytes(raw[:-1])
    with pytest.raises(TruncatedPayloadError):
        dataset_from_bytes(raw[:10])
    with pytest.raises(DatasetFormatError, match="trailing"):
        dataset_from_bytes(raw + b"\0\0")
    for err in (BadMagicError, VersionMismatchError, TruncatedPayloadError):
        assert issubclass(err, DatasetFormatError)


def test_metadata_with_newline_rejected():
    ds = Dataset(np.zeros((1, 2)), np.zeros((1, 2)), {"note": "a\nb"})
    with pytest.raises(ValueError):
        dataset_to_bytes(ds)
