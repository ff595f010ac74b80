import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btcnn import kernels
from btcnn.errors import OddDimension, ShapeMismatch, TargetOutOfRange
from btcnn.tensor import (
    ConvParams,
    DenseParams,
    conv2d_backward,
    conv2d_forward,
    conv_output_shape,
    dense_backward,
    dense_forward,
    finite_difference_check,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu,
    relu_backward,
    conv2d_backward_cb,
    conv2d_forward_cb,
    conv_relu_pool_backward_cb,
    conv_relu_pool_forward_cb,
    relu_maxpool_backward_cb,
    relu_maxpool_forward_cb,
    softmax_cross_entropy,
)
from oracles import naive_conv2d, naive_dense, naive_maxpool


def _conv(f, c, k, stride=1, pad=0, rng=None, scale=1.0):
    rng = rng or np.random.default_rng(0)
    return ConvParams(rng.normal(size=(f, c, k, k)) * scale, rng.normal(size=f), stride, pad)


# ---------------------------------------------------------------- conv


def test_conv_identity_kernel():
    p = ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1))
    assert conv2d_forward(np.full((1, 1, 1), 5.0), p).tolist() == [[[5.0]]]


def test_conv_constant_window_sums():
    p = ConvParams(np.ones((1, 1, 2, 2)), np.zeros(1))
    out = conv2d_forward(np.ones((1, 3, 3)), p)
    assert out.shape == (1, 2, 2)
    assert np.all(out == 4.0)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 8, 8))
    p = _conv(4, 3, 3, 1, 1, rng)
    got = conv2d_forward(x, p)
    want = naive_conv2d(x, p.weights, p.bias, 1, 1)
    assert np.max(np.abs(got - want)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(
    c=st.integers(1, 3),
    f=st.integers(1, 3),
    k=st.integers(1, 4),
    stride=st.integers(1, 2),
    pad=st.integers(0, 2),
    h=st.integers(4, 9),
    seed=st.integers(0, 2**31),
)
def test_conv_shape_and_oracle_property(c, f, k, stride, pad, h, seed):
    rng = np.random.default_rng(seed)
    p = _conv(f, c, k, stride, pad, rng)
    if (h + 2 * pad - k) % stride:
        with pytest.raises(ShapeMismatch):
            conv2d_forward(rng.normal(size=(c, h, h)), p)
        return
    x = rng.normal(size=(c, h, h))
    out = conv2d_forward(x, p)
    ho = (h + 2 * pad - k) // stride + 1
    assert out.shape == (f, ho, ho)
    assert conv_output_shape(h, h, p) == (ho, ho)
    assert np.max(np.abs(out - naive_conv2d(x, p.weights, p.bias, stride, pad))) <= 1e-12


def test_conv_backward_zero_upstream():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 5))
    p = _conv(3, 2, 3, 1, 1, rng)
    g = conv2d_backward(x, p, np.zeros((3, 5, 5)))
    assert not g.grad_x.any() and not g.grad_w.any() and not g.grad_b.any()


def test_conv_backward_scalar_chain_rule():
    p = ConvParams(np.full((1, 1, 1, 1), 2.0), np.zeros(1))
    g = conv2d_backward(np.full((1, 1, 1), 5.0), p, np.full((1, 1, 1), 3.0))
    assert g.grad_x.item() == 6.0
    assert g.grad_w.item() == 15.0
    assert g.grad_b.item() == 3.0


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
def test_conv_backward_finite_differences(stride, pad):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 6, 6) if stride == 1 else (3, 7, 7))
    p = _conv(2, 3, 3, stride, pad, rng)
    ho, wo = conv_output_shape(x.shape[1], x.shape[2], p)
    r = rng.normal(size=(2, ho, wo))
    g = conv2d_backward(x, p, r)

    def loss_x(t):
        return float(np.sum(conv2d_forward(t, p) * r))

    def loss_w(t):
        return float(np.sum(conv2d_forward(x, ConvParams(t, p.bias, stride, pad)) * r))

    def loss_b(t):
        return float(np.sum(conv2d_forward(x, ConvParams(p.weights, t, stride, pad)) * r))

    assert finite_difference_check(loss_x, x.copy(), g.grad_x) < 1e-4
    assert finite_difference_check(loss_w, p.weights.copy(), g.grad_w) < 1e-4
    assert finite_difference_check(loss_b, p.bias.copy(), g.grad_b) < 1e-4


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        conv2d_forward(np.zeros((2, 4, 4)), _conv(1, 3, 3))


def test_conv_params_validation():
    with pytest.raises(ShapeMismatch):
        ConvParams(np.zeros((2, 1, 3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        ConvParams(np.zeros((1, 1, 3, 3)), np.zeros(1), stride=0)


# ---------------------------------------------------------------- pooling


def test_maxpool_single_window():
    out, idx = maxpool2x2_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.item() == 4.0 and idx.item() == 3


def test_maxpool_constant_tie_break():
    out, idx = maxpool2x2_forward(np.full((1, 4, 4), 7.0))
    assert np.all(out == 7.0) and np.all(idx == 0)


def test_maxpool_matches_window_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 6, 6))
    out, idx = maxpool2x2_forward(x)
    want, want_idx = naive_maxpool(x)
    assert np.array_equal(out, want) and np.array_equal(idx, want_idx)


@settings(max_examples=30, deadline=None)
@given(c=st.integers(1, 3), h=st.integers(1, 5), w=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_maxpool_ties_and_oracle_property(c, h, w, seed):
    # small integer values force frequent ties
    x = np.random.default_rng(seed).integers(-2, 3, size=(c, 2 * h, 2 * w)).astype(float)
    out, idx = maxpool2x2_forward(x)
    want, want_idx = naive_maxpool(x)
    assert np.array_equal(out, want) and np.array_equal(idx, want_idx)


def test_maxpool_odd_dimension():
    with pytest.raises(OddDimension):
        maxpool2x2_forward(np.zeros((1, 3, 4)))


def test_maxpool_backward_zero_and_scatter():
    idx = np.array([[[3]]])
    assert not maxpool2x2_backward(idx, np.zeros((1, 1, 1))).any()
    g = maxpool2x2_backward(idx, np.ones((1, 1, 1)))
    assert g.tolist() == [[[0.0, 0.0], [0.0, 1.0]]]


def test_maxpool_backward_routing_and_mass():
    rng = np.random.default_rng(5)
    x = rng.permutation(64).reshape(1, 8, 8).astype(float)  # tie-free
    out, idx = maxpool2x2_forward(x)
    go = rng.normal(size=out.shape)
    gx = maxpool2x2_backward(idx, go)
    win = gx.reshape(1, 4, 2, 4, 2).transpose(0, 1, 3, 2, 4).reshape(1, 4, 4, 4)
    assert np.all((win != 0).sum(axis=-1) == 1)
    assert math.isclose(gx.sum(), go.sum(), rel_tol=1e-12)


def test_maxpool_backward_finite_differences():
    rng = np.random.default_rng(6)
    x = rng.permutation(72).reshape(2, 6, 6) / 7.0  # distinct, gaps >> h
    out, idx = maxpool2x2_forward(x)
    r = rng.normal(size=out.shape)
    gx = maxpool2x2_backward(idx, r)
    err = finite_difference_check(lambda t: float(np.sum(maxpool2x2_forward(t)[0] * r)), x.copy(), gx)
    assert err < 1e-4


# ---------------------------------------------------------------- relu


def test_relu_values_and_subgradient():
    x = np.array([-1.0, 0.0, 2.0])
    assert relu(x).tolist() == [0.0, 0.0, 2.0]
    assert relu_backward(x, np.full(3, 5.0)).tolist() == [0.0, 0.0, 5.0]


def test_relu_backward_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.normal(size=20)
    x[np.abs(x) < 1e-3] = 0.5
    r = rng.normal(size=20)
    err = finite_difference_check(lambda t: float(relu(t) @ r), x.copy(), relu_backward(x, r))
    assert err < 1e-4


def test_fused_relu_pool_equals_composition():
    rng = np.random.default_rng(8)
    z = rng.normal(size=(3, 2, 6, 6))
    z[0, 0, :2, :2] = -1.0  # a fully negative window
    out, idx = relu_maxpool_forward_cb(z)
    want = np.stack([np.stack([maxpool2x2_forward(relu(z[c, b])[None])[0][0] for b in range(2)]) for c in range(3)])
    assert np.array_equal(out, want)
    go = rng.normal(size=out.shape)
    gz = relu_maxpool_backward_cb(idx, out, go)
    ref = np.zeros_like(z)
    for c in range(3):
        for b in range(2):
            _, i2 = maxpool2x2_forward(relu(z[c, b])[None])
            ref[c, b] = relu_backward(z[c, b], maxpool2x2_backward(i2, go[c, b][None])[0])
    assert np.array_equal(gz, ref)


@pytest.mark.parametrize("chunk", [1, 7, 1 << 18])
def test_fused_conv_block_equals_unfused(monkeypatch, chunk):
    import btcnn.tensor as T

    monkeypatch.setattr(T, "CHUNK_ELEMS", chunk)
    rng = np.random.default_rng(15)
    x = rng.normal(size=(3, 5, 8, 8))
    p = _conv(4, 3, 3, 1, 1, rng)
    pooled, idx = conv_relu_pool_forward_cb(x, p)
    z, cols = conv2d_forward_cb(x, p, return_cols=True)
    want, want_idx = relu_maxpool_forward_cb(z)
    assert np.allclose(pooled, want, rtol=0, atol=1e-13) and np.array_equal(idx, want_idx)
    go = rng.normal(size=pooled.shape)
    g = conv_relu_pool_backward_cb(x, p, idx, pooled, go)
    ref = conv2d_backward_cb(x.shape, p, relu_maxpool_backward_cb(want_idx, want, go), cols)
    for a, b in zip(g, ref):
        assert np.allclose(a, b, rtol=0, atol=1e-12)
    assert conv_relu_pool_backward_cb(x, p, idx, pooled, go, need_grad_x=False).grad_x is None


# ---------------------------------------------------------------- dense


def test_dense_identity_and_hand_case():
    x = np.array([1.5, -2.0, 3.0])
    assert np.array_equal(dense_forward(x, DenseParams(np.eye(3), np.zeros(3))), x)
    p = DenseParams(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.0, 1.0]))
    assert dense_forward(np.array([1.0, 1.0]), p).tolist() == [3.0, 8.0]


def test_dense_matches_double_loop():
    rng = np.random.default_rng(9)
    p = DenseParams(rng.normal(size=(16, 64)), rng.normal(size=16))
    x = rng.normal(size=64)
    assert np.max(np.abs(dense_forward(x, p) - naive_dense(x, p.weights, p.bias))) <= 1e-12


def test_dense_backward_scalar_and_zero():
    p = DenseParams(np.array([[2.0]]), np.zeros(1))
    g = dense_backward(np.array([5.0]), p, np.array([3.0]))
    assert (g.grad_w.item(), g.grad_b.item(), g.grad_x.item()) == (15.0, 3.0, 6.0)
    g0 = dense_backward(np.ones(4), DenseParams(np.ones((2, 4)), np.ones(2)), np.zeros(2))
    assert not (g0.grad_x.any() or g0.grad_w.any() or g0.grad_b.any())


def test_dense_backward_finite_differences():
    rng = np.random.default_rng(10)
    p = DenseParams(rng.normal(size=(5, 7)), rng.normal(size=5))
    x = rng.normal(size=7)
    r = rng.normal(size=5)
    g = dense_backward(x, p, r)
    assert finite_difference_check(lambda t: float(dense_forward(t, p) @ r), x.copy(), g.grad_x) < 1e-4
    assert finite_difference_check(
        lambda t: float(dense_forward(x, DenseParams(t, p.bias)) @ r), p.weights.copy(), g.grad_w
    ) < 1e-4
    assert finite_difference_check(
        lambda t: float(dense_forward(x, DenseParams(p.weights, t)) @ r), p.bias.copy(), g.grad_b
    ) < 1e-4


def test_dense_shape_errors():
    with pytest.raises(ShapeMismatch):
        dense_forward(np.ones(3), DenseParams(np.ones((2, 4)), np.ones(2)))
    with pytest.raises(ShapeMismatch):
        DenseParams(np.ones((2, 4)), np.ones(3))


# ---------------------------------------------------------------- softmax


def test_softmax_uniform():
    probs, loss, grad = softmax_cross_entropy(np.zeros(3), 1)
    assert np.allclose(probs, 1 / 3, atol=1e-15)
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    assert np.allclose(grad, [1 / 3, -2 / 3, 1 / 3], atol=1e-15)


def test_softmax_stable_for_large_logits():
    probs, loss, grad = softmax_cross_entropy(np.array([1000.0, 0.0, 0.0]), 0)
    assert np.all(np.isfinite(probs)) and np.all(np.isfinite(grad))
    assert 0 <= loss < 1e-9


def test_softmax_target_range():
    with pytest.raises(TargetOutOfRange):
        softmax_cross_entropy(np.zeros(3), 3)


@settings(max_examples=60, deadline=None)
@given(
    logits=st.lists(st.floats(-50, 50), min_size=2, max_size=6),
    data=st.data(),
)
def test_softmax_properties(logits, data):
    logits = np.array(logits)
    t = data.draw(st.integers(0, len(logits) - 1))
    probs, loss, grad = softmax_cross_entropy(logits, t)
    assert np.all(probs >= 0) and np.all(probs <= 1)
    assert abs(probs.sum() - 1.0) <= 1e-12
    assert loss >= 0
    assert abs(grad.sum()) <= 1e-12


def test_softmax_gradient_finite_differences():
    rng = np.random.default_rng(11)
    z = rng.normal(size=3)
    _, _, g = softmax_cross_entropy(z, 2)
    err = finite_difference_check(lambda t: softmax_cross_entropy(t, 2)[1], z.copy(), g)
    assert err < 1e-4


# ---------------------------------------------------------------- gradient checker


def test_fd_linear():
    assert finite_difference_check(lambda t: float(3 * t[0]), np.array([0.7]), np.array([3.0])) < 1e-10


def test_fd_quadratic():
    assert finite_difference_check(lambda t: float(t[0] ** 2), np.array([1.0]), np.array([2.0]), h=1e-5) < 1e-8


def test_fd_detects_corruption():
    rng = np.random.default_rng(12)
    p = DenseParams(rng.normal(size=(4, 6)), rng.normal(size=4))
    x = rng.normal(size=6)
    g = dense_backward(x, p, np.ones(4)).grad_x
    err = finite_difference_check(lambda t: float(dense_forward(t, p).sum()), x.copy(), 1.01 * g)
    assert err > 1e-3


def test_fd_restores_theta():
    theta = np.array([1.0, 2.0, 3.0])
    finite_difference_check(lambda t: float(t.sum()), theta, np.ones(3))
    assert theta.tolist() == [1.0, 2.0, 3.0]


# ---------------------------------------------------------------- backends


@pytest.mark.skipif(kernels.NUMBA is None, reason="numba not installed")
@pytest.mark.parametrize(
    "shape,k,stride,pad",
    [((3, 2, 8, 8), 3, 1, 1), ((2, 3, 7, 7), 3, 2, 0), ((1, 2, 9, 9), 5, 2, 2), ((4, 1, 6, 6), 2, 2, 0)],
)
def test_backends_bit_identical(shape, k, stride, pad):
    rng = np.random.default_rng(13)
    x = rng.normal(size=shape)
    c, b, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    a = kernels.NUMPY.im2col(x, k, stride, pad, ho, wo)
    n = kernels.NUMBA.im2col(x, k, stride, pad, ho, wo)
    assert np.array_equal(a, n)
    d = rng.normal(size=a.shape)
    assert np.array_equal(
        kernels.NUMPY.col2im(d, c, b, h, w, k, stride, pad, ho, wo),
        kernels.NUMBA.col2im(d, c, b, h, w, k, stride, pad, ho, wo),
    )
    z = rng.integers(-2, 3, size=(c, b, 8, 8)).astype(float)
    for fwd, bwd in (("maxpool_fwd", "maxpool_bwd"), ("relu_pool_fwd", "relu_pool_bwd")):
        oa, ia = getattr(kernels.NUMPY, fwd)(z)
        on, i_n = getattr(kernels.NUMBA, fwd)(z)
        assert np.array_equal(oa, on) and np.array_equal(ia, i_n)
        g = rng.normal(size=oa.shape)
        if bwd == "maxpool_bwd":
            ra, rn = kernels.NUMPY.maxpool_bwd(ia, g), kernels.NUMBA.maxpool_bwd(i_n, g)
        else:
            ra, rn = kernels.NUMPY.relu_pool_bwd(ia, oa, g), kernels.NUMBA.relu_pool_bwd(i_n, on, g)
        assert np.array_equal(ra, rn)


def test_ops_deterministic():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(2, 6, 6))
    p = _conv(3, 2, 3, 1, 1, rng)
    assert np.array_equal(conv2d_forward(x, p), conv2d_forward(x.copy(), p))
