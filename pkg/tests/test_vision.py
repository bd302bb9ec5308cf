import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpgan import autodiff as ad
from cpgan.autodiff import Tensor
from cpgan.vision import (
    AttentionParams,
    ConvParams,
    LocParams,
    ResidualParams,
    affine_identity,
    bicubic_resize,
    channel_attention,
    conv2d,
    conv_transpose2d,
    grid_sample,
    residual_block,
    stn,
)
from oracles import bicubic_loops, conv2d_loops


def conv(w, b=None, stride=1, padding=0):
    w = np.asarray(w, dtype=np.float64)
    bias = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return ConvParams(Tensor(w), Tensor(bias), stride, padding)


def test_identity_kernel_copies_input(rng):
    x = rng.standard_normal((2, 1, 5, 4))
    np.testing.assert_array_equal(conv2d(Tensor(x), conv(np.ones((1, 1, 1, 1)))).data, x)


def test_ones_kernel_counts_neighbours():
    out = conv2d(Tensor(np.ones((1, 1, 5, 5))), conv(np.ones((1, 1, 3, 3)), padding=1)).data
    assert out[0, 0, 2, 2] == 9.0
    assert out[0, 0, 0, 0] == 4.0


@pytest.mark.parametrize("stride, pad, k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 1, 4), (3, 2, 2)])
def test_conv2d_matches_loops(rng, stride, pad, k):
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), ConvParams(Tensor(w), Tensor(b), stride, pad)).data
    np.testing.assert_allclose(out, conv2d_loops(x, w, b, stride, pad), rtol=0, atol=1e-10)


def test_conv2d_errors(rng):
    with pytest.raises(ad.ShapeError):
        conv2d(Tensor(np.ones((1, 2, 4, 4))), conv(np.ones((1, 3, 3, 3))))
    with pytest.raises(ad.ShapeError):
        conv2d(Tensor(np.ones((1, 1, 2, 2))), conv(np.ones((1, 1, 3, 3))))


@pytest.mark.parametrize("seed", range(10))
def test_conv_transpose_is_adjoint_of_conv(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((3, 2, 4, 4))  # conv: 2 -> 3 channels; transpose: 3 -> 2
    x = rng.standard_normal((2, 2, 8, 8))
    y = rng.standard_normal((2, 3, 4, 4))
    fwd = conv2d(Tensor(x), ConvParams(Tensor(w), Tensor(np.zeros(3)), 2, 1)).data
    back = conv_transpose2d(Tensor(y), ConvParams(Tensor(w), Tensor(np.zeros(2)), 2, 1)).data
    assert abs(np.vdot(fwd, y) - np.vdot(x, back)) < 1e-10


def test_conv_transpose_doubles_size(rng):
    p = ConvParams.init(rng, 4, 2, 4, stride=2, padding=1, transposed=True)
    assert conv_transpose2d(Tensor(np.ones((1, 4, 16, 16))), p).shape == (1, 2, 32, 32)


def test_bicubic_unchanged_size_is_identity(rng):
    x = rng.standard_normal((1, 2, 6, 5))
    np.testing.assert_array_equal(bicubic_resize(Tensor(x), 6, 5).data, x)


@pytest.mark.parametrize("size", [(1, 1), (4, 7), (16, 16), (128, 128), (31, 9)])
def test_bicubic_preserves_constants(size):
    out = bicubic_resize(Tensor(np.full((1, 3, 16, 16), 0.37)), *size).data
    np.testing.assert_allclose(out, 0.37, rtol=0, atol=1e-12)


def test_bicubic_impulse_matches_kernel_formula():
    img = np.zeros((8, 8))
    img[3, 4] = 1.0
    out = bicubic_resize(Tensor(img[None, None]), 4, 4).data[0, 0]
    np.testing.assert_allclose(out, bicubic_loops(img, 4, 4), rtol=0, atol=1e-10)


@given(arrays(np.float64, (5, 6), elements=st.floats(-1, 1)), st.integers(1, 12), st.integers(1, 12))
def test_bicubic_matches_loops(img, oh, ow):
    out = bicubic_resize(Tensor(img[None, None]), oh, ow).data[0, 0]
    np.testing.assert_allclose(out, bicubic_loops(img, oh, ow), rtol=0, atol=1e-10)


def test_grid_sample_identity_is_exact(rng):
    x = rng.standard_normal((2, 3, 7, 5))
    np.testing.assert_array_equal(grid_sample(Tensor(x), Tensor(affine_identity(2))).data, x)


def test_grid_sample_one_pixel_shift():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    theta = affine_identity(1)
    theta[0, 0, 2] = 2.0 / 4  # source x = output x + 1 pixel
    out = grid_sample(Tensor(x), Tensor(theta)).data[0, 0]
    expected = np.zeros((4, 4))
    expected[:, :3] = x[0, 0, :, 1:]
    np.testing.assert_array_equal(out, expected)


def test_grid_sample_theta_shape_checked():
    with pytest.raises(ad.ShapeError):
        grid_sample(Tensor(np.ones((2, 1, 4, 4))), Tensor(affine_identity(1)))


def test_stn_zero_head_is_identity(rng):
    x = rng.standard_normal((2, 3, 16, 16))
    aligned, theta = stn(Tensor(x), LocParams.init(rng, 3))
    np.testing.assert_array_equal(theta.data, affine_identity(2))
    np.testing.assert_array_equal(aligned.data, x)


def test_stn_rejects_odd_sizes(rng):
    with pytest.raises(ad.ShapeError):
        stn(Tensor(np.ones((1, 3, 12, 12))), LocParams.init(rng, 3))


def test_channel_attention_zero_dense_halves(rng):
    p = AttentionParams.init(rng, 8, 4)
    for t in ad.named_tensors(p).values():
        t.data[...] = 0.0
    x = rng.standard_normal((2, 8, 3, 3))
    np.testing.assert_allclose(channel_attention(Tensor(x), p).data, x / 2, rtol=0, atol=1e-15)


def test_channel_attention_hand_case():
    # C=2, r=2: pooled means (1, 3); hidden = relu(1*0.5 + 3*0.25 + 0.1) = 1.35
    x = np.array([[[[0.0, 2.0]], [[3.0, 3.0]]]])
    from cpgan.vision import DenseParams

    p = AttentionParams(
        DenseParams(Tensor([[0.5], [0.25]]), Tensor([0.1])),
        DenseParams(Tensor([[1.0, -2.0]]), Tensor([0.0, 0.5])),
    )
    h = 1.35
    gates = 1 / (1 + np.exp(-np.array([h, -2 * h + 0.5])))
    expected = x * gates[None, :, None, None]
    np.testing.assert_allclose(channel_attention(Tensor(x), p).data, expected, rtol=0, atol=1e-12)


@given(arrays(np.float64, (1, 4, 3, 3), elements=st.floats(0.1, 5)), st.integers(0, 2**16))
def test_channel_attention_is_per_channel_scaling(x, seed):
    p = AttentionParams.init(np.random.default_rng(seed), 4, 2)
    ratio = channel_attention(Tensor(x), p).data / x
    spread = ratio.max(axis=(2, 3)) - ratio.min(axis=(2, 3))
    assert np.all(spread < 1e-12)


def test_channel_attention_requires_divisible_reduction(rng):
    with pytest.raises(ad.ShapeError):
        AttentionParams.init(rng, 6, 4)


def test_residual_block_zero_weights_is_identity(rng):
    p = ResidualParams.init(rng, 4)
    p.conv1.weight.data[...] = 0.0
    p.conv2.weight.data[...] = 0.0
    x = rng.standard_normal((1, 4, 6, 6))
    np.testing.assert_array_equal(residual_block(Tensor(x), p).data, x)


def test_residual_block_keeps_shape(rng):
    p = ResidualParams.init(rng, 64)
    assert residual_block(Tensor(rng.standard_normal((1, 64, 16, 16))), p).shape == (1, 64, 16, 16)
