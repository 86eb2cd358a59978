import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from cvit.tensor import (
    PRIMITIVES,
    GradientError,
    Rng,
    ShapeError,
    Tape,
    Tensor,
    backward_pass,
    gelu,
    grad_check,
    layer_norm,
    load_tensor,
    matmul,
    multi_head_attention,
    save_tensor,
    softmax,
    tensor_from_bytes,
    tensor_to_bytes,
)
from cvit.tensor import core
from cvit.tensor.gradcheck import run_all
from cvit.tensor.io import TensorFormatError

finite = st.floats(-10, 10, allow_nan=False, width=64)


def grads_of(f, *xs):
    leaves = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in xs]
    with Tape() as tape:
        out = f(*leaves)
    backward_pass(tape, out)
    return [leaf.grad for leaf in leaves]


# -- matmul ---------------------------------------------------------------------

def test_matmul_identity_and_integers():
    a = np.array([[1.5, -2.0], [0.25, 3.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_matches_triple_loop():
    rng = Rng(3)
    a, b = rng.normal((8, 8)), rng.normal((8, 8))
    out = matmul(Tensor(a, dtype=np.float32), Tensor(b, dtype=np.float32)).data
    assert np.abs(out - oracles.loop_matmul(a, b)).max() < 1e-5


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))


def test_matmul_broadcast_batch_gradients_sum_over_batch():
    rng = Rng(1)
    a, w = rng.normal((3, 4, 5)), rng.normal((5, 2))
    ga, gw = grads_of(lambda x, y: matmul(x, y).sum(), a, w)
    np.testing.assert_allclose(gw, a.sum(axis=(0, 1))[:, None] * np.ones((1, 2)), atol=1e-12)
    np.testing.assert_allclose(ga, np.broadcast_to(w.sum(axis=1), (3, 4, 5)), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matmul_associativity_float32(seed):
    rng = Rng(seed)
    a, b, c = (Tensor(rng.normal((4, 4)), dtype=np.float32) for _ in range(3))
    left = matmul(matmul(a, b), c).data
    right = matmul(a, matmul(b, c)).data
    np.testing.assert_allclose(left, right, atol=1e-4)


# -- softmax / layer norm / gelu ------------------------------------------------------

def test_softmax_values():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(softmax(Tensor([1.0, 2.0, 3.0], dtype=np.float64)).data,
                               [0.09003, 0.24473, 0.66524], atol=1e-5)


def test_softmax_all_neg_inf_slice_raises():
    with pytest.raises(FloatingPointError):
        softmax(Tensor(np.array([[0.0, 1.0], [-np.inf, -np.inf]])))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=finite), st.floats(-50, 50))
def test_softmax_shift_invariant_and_normalized(x, c):
    p = softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all((p > 0) & (p < 1 + 1e-12))
    np.testing.assert_allclose(softmax(Tensor(x + c)).data, p, atol=1e-12)


def test_layer_norm_cases():
    out = layer_norm(Tensor(np.full((2, 4), 3.0)), eps=1e-6).data
    assert np.abs(out).max() <= 1e-6
    np.testing.assert_allclose(layer_norm(Tensor([1.0, 3.0], dtype=np.float64), eps=1e-12).data, [-1.0, 1.0],
                               atol=1e-9)
    with pytest.raises(ValueError):
        layer_norm(Tensor([1.0, 2.0]), eps=0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (16,), elements=st.floats(-100, 100, allow_nan=False)).filter(lambda a: a.std() > 1e-2))
def test_layer_norm_moments(x):
    out = layer_norm(Tensor(x), eps=1e-9).data
    assert abs(out.mean()) < 1e-6
    assert abs(out.var() - 1.0) < 1e-4


def test_gelu_values():
    assert gelu(Tensor(0.0, dtype=np.float64)).item() == 0.0
    assert gelu(Tensor(10.0, dtype=np.float64)).item() == pytest.approx(10.0, abs=1e-12)
    assert gelu(Tensor(1.0, dtype=np.float64)).item() == pytest.approx(0.84134, abs=1e-4)
    x = np.linspace(-6, 6, 41)
    np.testing.assert_allclose(gelu(Tensor(x)).data, oracles.gelu(x), rtol=1e-13, atol=1e-15)


# -- attention --------------------------------------------------------------------------

def test_attention_single_pair_returns_value():
    rng = Rng(2)
    q, k, v = rng.normal((5, 4)), rng.normal((1, 4)), rng.normal((1, 4))
    out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), n_heads=2).data
    np.testing.assert_allclose(out, np.broadcast_to(v, (5, 4)), atol=1e-12)


def test_attention_equal_logits_average_values():
    k = np.zeros((6, 4))
    v = Rng(4).normal((6, 4))
    out = multi_head_attention(Tensor(np.ones((2, 4))), Tensor(k), Tensor(v), n_heads=4).data
    np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=0), (2, 4)), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.permutations(range(7)))
def test_attention_permutation_invariant(seed, perm):
    rng = Rng(seed)
    q, k, v = rng.normal((3, 8)), rng.normal((7, 8)), rng.normal((7, 8))
    perm = list(perm)
    a = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), n_heads=2).data
    b = multi_head_attention(Tensor(q), Tensor(k[perm]), Tensor(v[perm]), n_heads=2).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_attention_indivisible_heads():
    with pytest.raises(ValueError, match="divisible"):
        multi_head_attention(Tensor(np.ones((2, 6))), Tensor(np.ones((3, 6))), Tensor(np.ones((3, 6))), n_heads=4)


# -- backward pass ---------------------------------------------------------------------

def test_backward_simple_cases():
    (g,) = grads_of(lambda x: x * x, 3.0)
    assert g == pytest.approx(6.0)
    (g,) = grads_of(lambda x: x.sum(), np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_shared_subexpression_accumulates():
    (g,) = grads_of(lambda x: (x * x + x * 3.0).sum(), np.array([1.0, -2.0]))
    np.testing.assert_allclose(g, 2 * np.array([1.0, -2.0]) + 3.0)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(GradientError):
        backward_pass(tape, y)


def test_leaf_without_requires_grad_untouched():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.full(3, 2.0))
    with Tape() as tape:
        loss = (x * c).sum()
    backward_pass(tape, loss)
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, c.data)


def test_zero_dim_reduction_keeps_scalar_shape():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    with Tape() as tape:
        loss = ((x - 1.0) ** 2).mean()
    assert loss.shape == ()
    backward_pass(tape, loss)
    assert x.grad.shape == (2, 3)


def test_tensor_copies_input():
    a = np.zeros(3)
    t = Tensor(a)
    a[0] = 5.0
    assert t.data[0] == 0.0


def test_two_layer_mlp_gradients_match_finite_differences():
    rng = Rng(11)
    w2, b1, b2, x = rng.normal((5, 2)), rng.normal(5), rng.normal(2), rng.normal((4, 3))

    def f(w1):
        h = gelu(matmul(Tensor(x), w1) + Tensor(b1))
        return ((matmul(h, Tensor(w2)) + Tensor(b2)) ** 2).sum()

    report = grad_check(f, rng.normal((3, 5)))
    assert report.passed, report


# -- grad_check --------------------------------------------------------------------------

def test_grad_check_exact_quadratic_and_constant():
    x = Rng(0).normal((3, 2))
    assert grad_check(lambda t: (t * t).sum(), x, tol=1e-6).passed
    report = grad_check(lambda t: Tensor(np.float64(4.0)), x)
    assert report.passed
    np.testing.assert_array_equal(report.analytic, 0.0)


def test_grad_check_detects_corrupted_rule():
    def bad_square(t):
        return core._emit("bad", t.data ** 2, (t,), lambda g: (1.1 * 2 * t.data * g,))

    report = grad_check(lambda t: bad_square(t).sum(), Rng(1).normal(5) + 3.0)
    assert not report.passed
    assert report.max_rel_error == pytest.approx(0.1 / 1.1, rel=1e-3)


def test_grad_check_non_finite_raises():
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
        grad_check(lambda t: core.log(t).sum(), np.array([1e-6, 1.0]))


def test_every_primitive_passes_grad_check():
    worst = run_all(n_trials=10, seed=0, h=1e-5, tol=1e-4)
    import cvit.operators  # noqa: F401  (registers the spectral primitives)

    assert set(PRIMITIVES) <= set(worst)
    failing = {k: v for k, v in worst.items() if v > 1e-4}
    assert not failing


# -- rng -------------------------------------------------------------------------------------

def test_rng_reproducible_and_substreams_independent():
    a, b = Rng(5), Rng(5)
    np.testing.assert_array_equal(a.normal(10), b.normal(10))
    np.testing.assert_array_equal(Rng(5).spawn(2).uniform(4), Rng(5, 2).uniform(4))
    assert not np.array_equal(Rng(5, 1).uniform(4), Rng(5, 2).uniform(4))


def test_rng_normal_moments_and_choice():
    z = Rng(0).normal(200_000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    picks = Rng(1).choice(50, 50)
    assert sorted(picks) == list(range(50))
    with pytest.raises(ValueError):
        Rng(1).choice(3, 4)
    t = Rng(2).truncated_normal(10_000, std=0.5, bound=2.0)
    assert np.abs(t).max() <= 1.0


# -- serialization -------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.sampled_from([np.float32, np.float64]),
       st.lists(st.integers(0, 4), min_size=0, max_size=3), st.integers(0, 1000))
def test_tensor_bytes_round_trip(dtype, shape, seed):
    arr = Rng(seed).normal(tuple(shape)).astype(dtype)
    back, end = tensor_from_bytes(tensor_to_bytes(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()
    assert end == len(tensor_to_bytes(arr))


def test_tensor_header_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = tensor_to_bytes(arr)
    assert raw[:4] == b"CVT1" and raw[4] == 0
    assert int.from_bytes(raw[5:9], "little") == 2
    assert raw[9:17] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    save_tensor(tmp_path / "a.cvt", arr)
    np.testing.assert_array_equal(load_tensor(tmp_path / "a.cvt"), arr)


def test_tensor_format_errors():
    raw = tensor_to_bytes(np.ones(4, dtype=np.float32))
    with pytest.raises(TensorFormatError, match="magic"):
        tensor_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(TensorFormatError, match="truncated"):
        tensor_from_bytes(raw[:-2])
