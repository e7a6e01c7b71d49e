"""Unit tests for the differentiation engine: hand values, closed forms,
finite-difference oracles, and determinism."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epimisr.errors import ConfigError, ShapeError
from epimisr.tensor import (
    AdamState,
    Tensor,
    adam_step,
    backward,
    conv2d,
    finite_diff_check,
    l1_loss,
    layer_norm,
    matmul,
    mul,
    multi_head_attention,
    no_grad,
    softmax,
    tsum,
)


def T(x, rg=False, dtype=np.float64):
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=rg)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    out = matmul(T([[1.0, 0.0], [0.0, 1.0]]), T([[3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])


def test_matmul_hand():
    out = matmul(T([[1.0, 2.0]]), T([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(T(np.zeros((2, 3))), T(np.zeros((4, 2))))


def test_matmul_gradient_fd(rng):
    a0 = rng.standard_normal((5, 7))
    b0 = rng.standard_normal((7, 3))

    def fn(params):
        return tsum(matmul(params["a"], params["b"]))

    err = finite_diff_check(fn, {"a": T(a0, rg=True), "b": T(b0, rg=True)})
    assert err < 1e-7


def test_matmul_batched(rng):
    a = rng.standard_normal((2, 3, 4, 5))
    b = rng.standard_normal((2, 3, 5, 6))
    out = matmul(T(a), T(b))
    np.testing.assert_allclose(out.data, a @ b, atol=1e-12)


# ---------------------------------------------------------------- softmax


def test_softmax_uniform():
    out = softmax(T([0.0, 0.0, 0.0]), axis=-1)
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_masked_closed_form():
    m = np.array([True, True, False])
    out = softmax(T([1.0, 2.0, 3.0]), axis=-1, mask=m)
    e = math.e
    np.testing.assert_allclose(out.data, [1 / (1 + e), e / (1 + e), 0.0], atol=1e-15)


def test_softmax_all_masked_row():
    x = T(np.ones((2, 3)))
    m = np.array([[True, False, True], [False, False, False]])
    out = softmax(x, axis=1, mask=m)
    np.testing.assert_array_equal(out.data[1], [0.0, 0.0, 0.0])
    assert abs(out.data[0].sum() - 1.0) < 1e-12


def test_softmax_axis_out_of_range():
    with pytest.raises(ValueError):
        softmax(T([1.0, 2.0]), axis=3)


def test_softmax_preserves_dtype():
    out = softmax(T(np.zeros(4, dtype=np.float32), dtype=np.float32), axis=0)
    assert out.data.dtype == np.float32


def test_softmax_gradient_fd(rng):
    x0 = rng.standard_normal((3, 5))
    w = rng.standard_normal((3, 5))

    def fn(params):
        return tsum(mul(softmax(params["x"], axis=1), T(w)))

    assert finite_diff_check(fn, {"x": T(x0, rg=True)}) < 1e-7


def test_softmax_masked_gradient_fd(rng):
    x0 = rng.standard_normal((4, 6))
    m = rng.random((4, 6)) > 0.3
    m[2] = False
    w = rng.standard_normal((4, 6))

    def fn(params):
        return tsum(mul(softmax(params["x"], axis=1, mask=m), T(w)))

    assert finite_diff_check(fn, {"x": T(x0, rg=True)}) < 1e-7


# ---------------------------------------------------------------- layer_norm


def test_layer_norm_constant_slice():
    x = T(np.full((2, 4), 3.7))
    out = layer_norm(x, T(np.ones(4)), T(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_two_point():
    out = layer_norm(T([1.0, 3.0]), T(np.ones(2)), T(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)


def test_layer_norm_stats(rng):
    x = rng.standard_normal((6, 9))
    out = layer_norm(T(x), T(np.ones(9)), T(np.zeros(9))).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4


def test_layer_norm_gradient_fd(rng):
    x0 = rng.standard_normal((3, 6))
    w = rng.standard_normal((3, 6))

    def fn(params):
        return tsum(mul(layer_norm(params["x"], params["g"], params["b"]), T(w)))

    params = {
        "x": T(x0, rg=True),
        "g": T(rng.standard_normal(6), rg=True),
        "b": T(rng.standard_normal(6), rg=True),
    }
    assert finite_diff_check(fn, params) < 1e-6


# ---------------------------------------------------------------- attention


def test_mha_single_key(rng):
    q = T(rng.standard_normal((3, 4)))
    v_row = rng.standard_normal((1, 4))
    out, attn = multi_head_attention(q, T(rng.standard_normal((1, 4))), T(v_row), heads=2)
    np.testing.assert_allclose(out.data, np.repeat(v_row, 3, axis=0), atol=1e-12)
    np.testing.assert_array_equal(attn, np.ones((2, 3, 1)))


def test_mha_identical_keys_uniform(rng):
    k_row = rng.standard_normal((1, 6))
    k = T(np.repeat(k_row, 4, axis=0))
    q = T(rng.standard_normal((2, 6)))
    v = T(rng.standard_normal((4, 6)))
    _, attn = multi_head_attention(q, k, v, heads=3)
    np.testing.assert_allclose(attn, 0.25, atol=1e-12)


def test_mha_heads_divisibility():
    with pytest.raises(ConfigError):
        multi_head_attention(T(np.zeros((2, 5))), T(np.zeros((2, 5))), T(np.zeros((2, 5))), heads=2)


def test_mha_mask_blocks_key(rng):
    q = T(rng.standard_normal((2, 4)))
    k = T(rng.standard_normal((3, 4)))
    v = T(rng.standard_normal((3, 4)))
    mask = np.array([[True, True, False]] * 2)
    _, attn = multi_head_attention(q, k, v, heads=2, mask=mask)
    np.testing.assert_array_equal(attn[:, :, 2], 0.0)


def test_mha_gradient_fd(rng):
    w = rng.standard_normal((2, 6))

    def fn(params):
        out, _ = multi_head_attention(params["q"], params["k"], params["v"], heads=2)
        return tsum(mul(out, T(w)))

    params = {
        "q": T(rng.standard_normal((2, 6)), rg=True),
        "k": T(rng.standard_normal((3, 6)), rg=True),
        "v": T(rng.standard_normal((3, 6)), rg=True),
    }
    assert finite_diff_check(fn, params) < 1e-5


# ---------------------------------------------------------------- conv2d


def test_conv2d_identity_kernel(rng):
    x = rng.standard_normal((5, 6, 3))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0] = np.eye(3)
    out = conv2d(T(x), T(k))
    np.testing.assert_allclose(out.data, x, atol=1e-14)


def test_conv2d_box_sum():
    x = T(np.ones((5, 5, 1)))
    k = T(np.ones((3, 3, 1, 1)))
    out = conv2d(x, k)
    assert out.data[2, 2, 0] == pytest.approx(9.0)
    assert out.data[0, 0, 0] == pytest.approx(4.0)  # zero padding at the corner


def test_conv2d_even_kernel_rejected():
    with pytest.raises(ConfigError):
        conv2d(T(np.zeros((4, 4, 1))), T(np.zeros((2, 3, 1, 1))))


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(T(np.zeros((4, 4, 2))), T(np.zeros((3, 3, 3, 1))))


def test_conv2d_gradient_fd(rng):
    x0 = rng.standard_normal((4, 4, 2))
    w = rng.standard_normal((4, 4, 3))

    def fn(params):
        return tsum(mul(conv2d(params["x"], params["k"]), T(w)))

    params = {"x": T(x0, rg=True), "k": T(rng.standard_normal((3, 3, 2, 3)), rg=True)}
    assert finite_diff_check(fn, params) < 1e-6


# ---------------------------------------------------------------- l1 loss


def test_l1_identity(rng):
    a = rng.random((3, 3))
    assert l1_loss(T(a), T(a.copy())).item() == 0.0


def test_l1_hand():
    assert l1_loss(T([1.0, 2.0]), T([0.0, 0.0])).item() == pytest.approx(1.5)


def test_l1_gradient_sign():
    a = T([2.0], rg=True)
    loss = l1_loss(a, T([0.0]))
    backward(loss)
    np.testing.assert_array_equal(a.grad, [1.0])


def test_l1_shape_mismatch():
    with pytest.raises(ShapeError):
        l1_loss(T([1.0, 2.0]), T([[1.0], [2.0]]))


# ---------------------------------------------------------------- backward


def test_backward_sum_ones(rng):
    x = T(rng.standard_normal((2, 3, 4)), rg=True)
    backward(tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_quadratic():
    x = T([1.0, 2.0, 3.0], rg=True)
    backward(tsum(mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar():
    x = T([1.0, 2.0], rg=True)
    with pytest.raises(ValueError):
        backward(mul(x, x))


def test_backward_deterministic(rng):
    x0 = rng.standard_normal((4, 4))

    def run():
        x = T(x0.copy(), rg=True)
        y = softmax(matmul(x, x), axis=1)
        backward(tsum(mul(y, y)))
        return x.grad.copy()

    np.testing.assert_array_equal(run(), run())


def test_no_grad_blocks_graph():
    x = T([1.0], rg=True)
    with no_grad():
        y = mul(x, x)
    assert y._parents == ()


# ---------------------------------------------------------------- adam


def test_adam_zero_grad_noop():
    p = T([1.0, -2.0], rg=True)
    p.grad = np.zeros(2)
    st_ = AdamState(lr=0.1)
    adam_step({"p": p}, st_)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st_.step == 1


def test_adam_single_step_closed_form():
    p = T([0.5], rg=True)
    p.grad = np.ones(1)
    st_ = AdamState(lr=0.1)
    adam_step({"p": p}, st_)
    # bias-corrected m̂ = v̂ = 1 at step 1, so the update is lr/(1+eps)
    assert p.data[0] == pytest.approx(0.5 - 0.1, abs=1e-8)


def test_adam_two_steps_match_recurrence():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    p = T([1.0], rg=True)
    st_ = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    ref, m, v = 1.0, 0.0, 0.0
    for step in (1, 2):
        p.grad = np.array([0.3])
        adam_step({"p": p}, st_)
        m = b1 * m + (1 - b1) * 0.3
        v = b2 * v + (1 - b2) * 0.09
        mh = m / (1 - b1**step)
        vh = v / (1 - b2**step)
        ref -= lr * mh / (math.sqrt(vh) + eps)
        assert p.data[0] == pytest.approx(ref, abs=1e-12)


def test_adam_missing_grad():
    p = T([1.0], rg=True)
    with pytest.raises(ConfigError):
        adam_step({"p": p}, AdamState())


def test_adam_deterministic_order(rng):
    # same param dict in two insertion orders gives identical results
    def run(order):
        params = {}
        for name in order:
            params[name] = T([1.0], rg=True)
            params[name].grad = np.array([0.5])
        st_ = AdamState(lr=0.01)
        adam_step(params, st_)
        return {k: v.data.copy() for k, v in params.items()}

    a = run(["w", "b"])
    b = run(["b", "w"])
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


# ---------------------------------------------------------------- gradcheck


def test_fd_linear_exact(rng):
    c = rng.standard_normal(5)

    def fn(params):
        return tsum(mul(params["x"], T(c)))

    assert finite_diff_check(fn, {"x": T(rng.standard_normal(5), rg=True)}) < 1e-10


def test_fd_quadratic():
    def fn(params):
        return tsum(mul(params["x"], params["x"]))

    assert finite_diff_check(fn, {"x": T([0.3, -1.2, 2.0], rg=True)}) < 1e-8


def test_fd_softmax_matmul_composite(rng):
    b0 = rng.standard_normal((4, 2))

    def fn(params):
        return tsum(matmul(softmax(params["x"], axis=1), params["b"]))

    params = {"x": T(rng.standard_normal((3, 4)), rg=True), "b": T(b0, rg=True)}
    assert finite_diff_check(fn, params) < 1e-5


def test_fd_rejects_f32():
    def fn(params):
        return tsum(params["x"])

    with pytest.raises(ConfigError):
        finite_diff_check(fn, {"x": T(np.zeros(2, dtype=np.float32), dtype=np.float32, rg=True)})


# ------------------------------------------------------- property sweep

_shapes = st.integers(min_value=1, max_value=8)


@given(h=_shapes, w=_shapes, seed=st.integers(0, 2**16))
def test_property_elementwise_chain(h, w, seed):
    r = np.random.default_rng(seed)
    x0 = r.standard_normal((h, w))
    y0 = r.standard_normal((h, w))

    def fn(params):
        from epimisr.tensor import add, relu, sub

        z = add(mul(params["x"], params["y"]), sub(params["x"], params["y"]))
        return tsum(mul(relu(z), z))

    params = {"x": T(x0, rg=True), "y": T(y0, rg=True)}
    assert finite_diff_check(fn, params) < 1e-4


@given(m=_shapes, k=_shapes, n=_shapes, seed=st.integers(0, 2**16))
def test_property_matmul_softmax(m, k, n, seed):
    r = np.random.default_rng(seed)
    a0 = r.standard_normal((m, k))
    b0 = r.standard_normal((k, n))

    def fn(params):
        return tsum(softmax(matmul(params["a"], params["b"]), axis=-1))

    params = {"a": T(a0, rg=True), "b": T(b0, rg=True)}
    assert finite_diff_check(fn, params) < 1e-4
