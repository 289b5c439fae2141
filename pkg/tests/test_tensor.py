import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpcx import tensor as T


def leaf(data, name="x"):
    return T.Node(np.asarray(data, dtype=np.float64), True, name)


def test_adjoint_is_zero_before_backward():
    x = leaf(np.ones((2, 3)))
    assert x.adjoint.shape == (2, 3)
    assert not x.adjoint.any()


def test_sum_adjoint_is_ones():
    x = leaf(np.arange(6.0).reshape(2, 3))
    T.backward(T.sum(x))
    np.testing.assert_array_equal(x.adjoint, np.ones((2, 3)))


def test_dot_product_adjoint_is_other_factor():
    x, y = leaf([1.0, -2.0, 3.0], "x"), leaf([0.5, 4.0, -1.0], "y")
    T.backward(T.sum(T.mul(x, y)))
    np.testing.assert_array_equal(x.adjoint, y.data)
    np.testing.assert_array_equal(y.adjoint, x.data)


def test_backward_accumulates_without_reset():
    x = leaf([1.0, 2.0])
    T.backward(T.sum(x))
    T.backward(T.sum(x))
    np.testing.assert_array_equal(x.adjoint, [2.0, 2.0])
    T.zero_grad([x])
    assert not x.adjoint.any()


def test_backward_rejects_non_scalar_root():
    x = leaf([1.0, 2.0])
    with pytest.raises(T.ShapeError):
        T.backward(T.tanh(x))


def test_fan_out_sums_both_paths():
    x = leaf([0.3, -0.7])
    # d/dx (x*x + 3x) = 2x + 3
    T.backward(T.sum(T.add(T.mul(x, x), T.scale(x, 3.0))))
    np.testing.assert_allclose(x.adjoint, 2 * x.data + 3, rtol=0, atol=1e-15)


def test_pointwise_fixed_points():
    z = leaf([0.0])
    assert T.tanh(z).data[0] == 0.0
    assert T.sigmoid(z).data[0] == 0.5
    assert T.relu(leaf([-1.0, 2.0])).data.tolist() == [0.0, 2.0]


def test_pointwise_rejects_broadcast():
    with pytest.raises(T.ShapeError):
        T.add(leaf(np.ones((2, 3))), leaf(np.ones(3)))
    # scalar-vs-array is allowed
    np.testing.assert_array_equal(T.add(leaf(np.ones(3)), 2.0).data, [3.0, 3.0, 3.0])


def test_matmul_examples():
    b = np.random.default_rng(0).normal(size=(3, 2))
    np.testing.assert_array_equal(T.matmul(leaf(np.eye(3)), leaf(b)).data, b)
    out = T.matmul(leaf([[1.0, 2.0], [3.0, 4.0]]), leaf([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])
    with pytest.raises(T.ShapeError):
        T.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))


def test_conv1d_identity_kernel():
    x = leaf(np.random.default_rng(1).normal(size=(10, 1)))
    y = T.conv1d(x, leaf(np.ones((1, 1, 1))), leaf(np.zeros(1)), 1, 0)
    np.testing.assert_array_equal(y.data, x.data)


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 13, 3))
    w = rng.normal(size=(4, 3, 5))
    b = rng.normal(size=4)
    stride, pad = 2, 1
    y = T.conv1d(leaf(x), leaf(w), leaf(b), stride, pad).data
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    t_out = (13 + 2 * pad - 5) // stride + 1
    ref = np.zeros((2, t_out, 4))
    for n in range(2):
        for t in range(t_out):
            for o in range(4):
                ref[n, t, o] = b[o] + sum(
                    w[o, c, j] * xp[n, t * stride + j, c] for c in range(3) for j in range(5)
                )
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv1d_channel_mismatch_names_both():
    with pytest.raises(T.ShapeError, match="2.*3|3.*2"):
        T.conv1d(leaf(np.ones((8, 2))), leaf(np.ones((4, 3, 2))), None, 1, 0)


def test_conv1d_length_example():
    y = T.conv1d(T.Node(np.zeros((16000, 1), np.float32)), T.Node(np.zeros((1, 1, 10), np.float32)), None, 5, 3)
    assert y.shape == (3200, 1)


@settings(max_examples=60, deadline=None)
@given(
    t_in=st.integers(1, 40),
    k=st.integers(1, 9),
    stride=st.integers(1, 5),
    pad=st.integers(0, 4),
)
def test_conv1d_length_formula(t_in, k, stride, pad):
    if k > t_in + 2 * pad:
        with pytest.raises(T.ShapeError):
            T.conv1d(leaf(np.zeros((t_in, 1))), leaf(np.zeros((1, 1, k))), None, stride, pad)
        return
    y = T.conv1d(leaf(np.zeros((t_in, 2))), leaf(np.zeros((3, 2, k))), None, stride, pad)
    assert y.shape == ((t_in + 2 * pad - k) // stride + 1, 3)


def test_log_softmax_examples():
    out = T.log_softmax(leaf(np.full(4, 7.5))).data
    np.testing.assert_allclose(out, -np.log(4), rtol=0, atol=1e-15)
    big = T.log_softmax(leaf([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    assert abs(big[0]) < 1e-12


@settings(max_examples=50, deadline=None)
@given(
    s=st.lists(st.floats(-50, 50), min_size=1, max_size=12),
    c=st.floats(-100, 100),
)
def test_log_softmax_shift_invariance(s, c):
    a = T.log_softmax(leaf(s)).data
    b = T.log_softmax(leaf(np.asarray(s) + c)).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert abs(np.exp(a).sum() - 1.0) < 1e-12


def test_precision_mode_and_mixing():
    with T.precision("double"):
        assert T.tensor([1.0]).dtype == np.float64
    assert T.tensor([1.0]).dtype == np.float32
    with pytest.raises(T.PrecisionError):
        T.add(T.tensor([1.0]), T.tensor([1.0], dtype=np.float64))


def test_grad_check_requires_double():
    x = T.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(T.PrecisionError):
        T.grad_check(lambda: T.sum(T.mul(x, x)), [x])


def test_grad_check_sum_of_squares_is_exact():
    x = leaf(np.random.default_rng(3).normal(size=(3, 4)))
    report = T.grad_check(lambda: T.sum(T.mul(x, x)), {"x": x})
    assert report.passed
    assert report.max_error < 1e-8


def test_grad_check_flags_a_wrong_gradient():
    x = leaf(np.random.default_rng(4).normal(size=5))

    def wrong():
        # forward tanh, backward pretends the derivative is 1
        return T.sum(T.custom_op(np.tanh(x.data), (x,), lambda g: (g,), "bad_tanh"))

    report = T.grad_check(wrong, {"x": x})
    assert not report.passed
    assert report.failed == ["x"]


def test_grad_check_conv_composite():
    rng = np.random.default_rng(5)
    x, w, b = leaf(rng.normal(size=(8, 2)), "x"), leaf(rng.normal(size=(3, 2, 4)), "w"), leaf(rng.normal(size=3), "b")
    proj = T.Node(rng.normal(size=(5, 3)))
    report = T.grad_check(lambda: T.sum(T.mul(T.tanh(T.conv1d(x, w, b, 1, 0)), proj)), [x, w, b])
    assert report.max_error < 1e-6


def test_take_with_repeated_indices_accumulates():
    x = leaf(np.arange(5.0))
    T.backward(T.sum(T.take(x, (np.array([1, 1, 3]),))))
    np.testing.assert_array_equal(x.adjoint, [0, 2, 0, 1, 0])


def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with T.no_grad():
        y = T.tanh(x)
    assert not y.requires_grad
    assert y.parents == ()


def test_dropout_is_identity_in_eval_and_inverted_in_training():
    x = leaf(np.ones(10000))
    rng = np.random.default_rng(0)
    assert T.dropout(x, 0.3, rng, training=False) is x
    y = T.dropout(x, 0.3, rng, training=True).data
    kept = y[y > 0]
    np.testing.assert_allclose(kept, 1 / 0.7)
    assert abs((y == 0).mean() - 0.3) < 0.02


def test_primitive_suite_passes():
    from cpcx.gradsuite import PRIMITIVE_TOL, primitive_checks

    results = primitive_checks(np.random.default_rng(0))
    bad = [r.line() for r in results if r.max_error > PRIMITIVE_TOL]
    assert not bad, bad
    # every op exercised on three shapes
    for op in ("tanh", "sigmoid", "relu", "add", "mul", "scale", "log_softmax"):
        assert sum(r.name.startswith(op + "(") for r in results) == 3
