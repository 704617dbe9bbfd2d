import mpmath
import numpy as np
import pytest

from deepway.nn import autograd as ag
from deepway.nn import kernels
from deepway.nn.model import channel_attention, spatial_attention

from gradcheck import check_gradients

rng = np.random.default_rng(1234)


def brute_conv(x, w, b, stride):
    # direct loops over batch, output row, output col, kernel row, kernel col, channel
    B, H, W, C = x.shape
    K, _, _, O = w.shape
    p = K // 2
    Ho, Wo = -(-H // stride), -(-W // stride)
    out = np.zeros((B, Ho, Wo, O))
    for n in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for ky in range(K):
                    for kx in range(K):
                        r, c = i * stride + ky - p, j * stride + kx - p
                        if 0 <= r < H and 0 <= c < W:
                            for ch in range(C):
                                out[n, i, j] += x[n, r, c, ch] * w[ky, kx, ch]
    return out + b


def test_conv_identity_kernel():
    x = rng.standard_normal((2, 5, 7, 3))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0] = np.eye(3)
    assert np.array_equal(kernels.conv2d(x, w, np.zeros(3)), x)


def test_conv_zero_input_gives_bias():
    b = np.array([0.5, -1.0])
    y = kernels.conv2d(np.zeros((1, 6, 6, 3)), rng.standard_normal((3, 3, 3, 2)), b)
    assert np.array_equal(y, np.broadcast_to(b, y.shape))


def test_conv_matches_loop_reference():
    x = rng.standard_normal((1, 6, 6, 2))
    w = rng.standard_normal((3, 3, 2, 4))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(kernels.conv2d(x, w, b), brute_conv(x, w, b, 1), atol=1e-12)


@pytest.mark.parametrize("shape,K,stride", [((2, 7, 5, 3), 5, 2), ((1, 8, 8, 2), 5, 2),
                                            ((1, 9, 6, 2), 7, 1), ((1, 5, 5, 1), 3, 2)])
def test_conv_strided_and_odd_sizes(shape, K, stride):
    x = rng.standard_normal(shape)
    w = rng.standard_normal((K, K, shape[3], 3))
    b = rng.standard_normal(3)
    y = kernels.conv2d(x, w, b, stride)
    assert y.shape[1:3] == (-(-shape[1] // stride), -(-shape[2] // stride))
    np.testing.assert_allclose(y, brute_conv(x, w, b, stride), atol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(kernels.ShapeError):
        kernels.conv2d(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)))
    with pytest.raises(kernels.ShapeError):
        kernels.conv2d(np.zeros((4, 4, 2)), np.zeros((3, 3, 2, 1)))


def test_transpose_conv_doubles_shape_and_zero_input():
    w = rng.standard_normal((5, 5, 3, 4))
    b = rng.standard_normal(3)
    y = kernels.conv_transpose2d(np.zeros((2, 4, 6, 4)), w, b)
    assert y.shape == (2, 8, 12, 3)
    assert np.array_equal(y, np.broadcast_to(b, y.shape))


@pytest.mark.parametrize("hw", [(4, 4), (5, 3), (8, 6)])
def test_transpose_conv_is_adjoint(hw):
    w = rng.standard_normal((5, 5, 3, 4))
    x = rng.standard_normal((2, 2 * hw[0], 2 * hw[1], 3))
    y = rng.standard_normal((2, hw[0], hw[1], 4))
    lhs = np.sum(kernels.conv2d(x, w, None, 2) * y)
    rhs = np.sum(x * kernels.conv_transpose2d(y, w))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_transpose_conv_shape_mismatch():
    with pytest.raises(kernels.ShapeError):
        kernels.conv_transpose2d(np.zeros((1, 3, 3, 2)), np.zeros((5, 5, 4, 3)))


def mish_ref(x):
    with mpmath.workdps(60):
        x = mpmath.mpf(x)
        return float(x * mpmath.tanh(mpmath.log(1 + mpmath.e ** x)))


def test_mish_values():
    assert ag.mish_np(np.array(0.0)) == 0.0
    assert abs(ag.mish_np(np.array(20.0)) - 20.0) < 1e-6
    assert ag.mish_np(np.array(-1.0)) == pytest.approx(-0.3034, abs=1e-4)
    xs = np.array([-30.0, -5.0, -1.0, -0.1, 0.3, 1.0, 4.0, 15.0])
    np.testing.assert_allclose(ag.mish_np(xs), [mish_ref(v) for v in xs], rtol=1e-12, atol=1e-300)


def test_mish_extremes_are_finite():
    xs = np.array([-1e4, -700.0, 700.0, 1e4])
    y = ag.mish_np(xs)
    assert np.all(np.isfinite(y))
    assert y[-1] == 1e4 and y[0] == 0.0
    np.testing.assert_allclose(ag.mish_np(xs.astype(np.float32)), y.astype(np.float32))
    # same as the log-sum-exp formulation
    z = np.linspace(-50, 50, 1001)
    np.testing.assert_allclose(ag.mish_np(z), z * np.tanh(np.logaddexp(0, z)), rtol=1e-13, atol=1e-30)


def test_mish_gradient_at_extremes():
    x = ag.Tensor(np.array([-1e4, -50.0, 50.0, 1e4]), requires_grad=True)
    ag.backward(ag.mish(x), np.ones(4))
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 1.0, 1.0], atol=1e-15)


# finite differences ----------------------------------------------------------

TOL = 1e-4


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradient(stride):
    arrays = [rng.standard_normal((2, 7, 6, 3)), rng.standard_normal((5, 5, 3, 2)),
              rng.standard_normal(2)]
    err = check_gradients(lambda t: ag.conv2d(t[0], t[1], t[2], stride), arrays, rng)
    assert err < TOL


def test_transpose_conv_gradient():
    arrays = [rng.standard_normal((2, 3, 4, 3)), rng.standard_normal((5, 5, 2, 3)),
              rng.standard_normal(2)]
    err = check_gradients(lambda t: ag.conv_transpose2d(t[0], t[1], t[2]), arrays, rng)
    assert err < TOL


def test_mish_gradient():
    err = check_gradients(lambda t: ag.mish(t[0]), [rng.standard_normal((3, 4, 5)) * 3], rng,
                          max_coords=60)
    assert err < TOL


def test_heads_gradient_and_ranges():
    z = rng.standard_normal((2, 4, 4, 3))
    err = check_gradients(lambda t: ag.heads(t[0]), [z], rng)
    assert err < TOL
    y = ag.heads(ag.Tensor(z * 5)).data
    assert np.all((y[..., 0] > 0) & (y[..., 0] < 1))
    assert np.all(np.abs(y[..., 1:]) < 1)
    # far out the float result rounds onto the closed interval ends
    y = ag.heads(ag.Tensor(z * 1e4)).data
    assert np.all((y[..., 0] >= 0) & (y[..., 0] <= 1))
    assert np.all(np.abs(y[..., 1:]) <= 1)


def ca_args(C=4, h=2):
    # weights at a scale that keeps the sigmoid out of saturation, where
    # gradients shrink below the finite-difference noise
    return [rng.standard_normal((2, 5, 6, C)), 0.4 * rng.standard_normal((C, h)),
            0.4 * rng.standard_normal(h), 0.4 * rng.standard_normal((h, C)),
            0.4 * rng.standard_normal(C)]


def test_channel_attention_gradient():
    err = check_gradients(lambda t: channel_attention(*t), ca_args(), rng)
    assert err < TOL


def test_spatial_attention_gradient():
    arrays = [rng.standard_normal((2, 8, 7, 3)), 0.2 * rng.standard_normal((7, 7, 2, 1))]
    err = check_gradients(lambda t: spatial_attention(*t), arrays, rng)
    assert err < TOL


def test_attention_block_gradient():
    # channel then spatial attention with the residual add, as in a reduction module
    x, w1, b1, w2, b2 = ca_args()
    ws = 0.2 * rng.standard_normal((7, 7, 2, 1))

    def block(t):
        h = channel_attention(t[0], *t[1:5])
        return ag.add(spatial_attention(h, t[5]), t[0])
    assert check_gradients(block, [x, w1, b1, w2, b2, ws], rng) < TOL


def test_attention_constant_input_and_range():
    x = np.full((1, 4, 4, 3), 2.5)
    assert np.array_equal(x.mean(axis=(1, 2)), x.max(axis=(1, 2)))
    args = ca_args(C=3, h=1)
    for inp in (x, np.abs(args[0][..., :3]) + 0.1):
        y = channel_attention(ag.Tensor(inp), *map(ag.Tensor, args[1:])).data
        ratio = y / inp
        assert np.all((ratio > 0) & (ratio < 1))
        y = spatial_attention(ag.Tensor(inp), ag.Tensor(rng.standard_normal((7, 7, 2, 1)))).data
        ratio = y / inp
        assert np.all((ratio > 0) & (ratio < 1))


def test_loss_gradient():
    y = np.zeros((2, 3, 3, 3))
    y[0, 1, 2] = (1, 0.3, -0.4)
    y[1, 0, 0] = (1, -0.9, 0.1)
    pred = rng.uniform(-0.9, 0.9, (2, 3, 3, 3))
    err = check_gradients(lambda t: ag.waypoint_loss(y, t[0], 0.7, 0.3), [pred], rng,
                          proj=np.array(1.0))
    assert err < TOL


def test_elementwise_gradients():
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((1, 4))
    assert check_gradients(lambda t: ag.mul(t[0], t[1]), [a, b], rng) < TOL
    assert check_gradients(lambda t: ag.add(t[0], t[1]), [a, b], rng) < TOL
    assert check_gradients(lambda t: ag.tanh(t[0]), [a], rng) < TOL
    assert check_gradients(lambda t: ag.sigmoid(t[0]), [a], rng) < TOL
    assert check_gradients(lambda t: ag.amax(t[0], axis=1), [a], rng) < TOL
    assert check_gradients(lambda t: ag.mean(t[0], axis=(0, 1)), [a], rng) < TOL
    assert check_gradients(lambda t: ag.matmul(t[0], t[1]), [a, rng.standard_normal((4, 2))], rng) < TOL


def test_max_gradient_splits_ties():
    x = ag.Tensor(np.array([[1.0, 3.0, 3.0, 0.0]]), requires_grad=True)
    ag.backward(ag.amax(x, axis=1), np.array([2.0]))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 1.0, 0.0]])


def test_shared_node_gradients_accumulate():
    x = ag.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ag.mul(x, x)
    ag.backward(ag.add(y, x), np.ones(2))
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)
