"""Primitive forward contracts: worked examples, oracle equivalence, errors."""

import numpy as np
import numpy.testing as npt
import pytest

from dualdensity.nn import functional as F
from _oracles import (
    affine_naive,
    avg_pool_naive,
    channel_norm_eval_naive,
    conv2d_naive,
    global_avg_pool_naive,
    pointwise_naive,
)


# ----------------------------------------------------------------- conv2d


def test_conv2d_box_sum():
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out, _ = F.conv2d_forward(x, w, padding=1)
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == 4.0


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 8, 8))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out, _ = F.conv2d_forward(x, w, padding=1)
    npt.assert_array_equal(out, x)


def test_conv2d_effective_receptive_field_dilation2():
    # k=3, dilation=2 spans 5 cells: an impulse 2 cells away still lands in
    # the window, 3 cells away does not.
    x = np.zeros((1, 1, 9, 9))
    x[0, 0, 4 + 2, 4] = 1.0
    w = np.ones((1, 1, 3, 3))
    out, _ = F.conv2d_forward(x, w, dilation=2, padding=2)
    assert out[0, 0, 4, 4] == 1.0
    x[0, 0, 4 + 2, 4] = 0.0
    x[0, 0, 4 + 3, 4] = 1.0
    out, _ = F.conv2d_forward(x, w, dilation=2, padding=2)
    assert out[0, 0, 4, 4] == 0.0


def test_conv2d_output_size_formula():
    rng = np.random.default_rng(2)
    for h, w, k, d, p in [(16, 16, 3, 1, 1), (16, 12, 3, 2, 2), (10, 10, 5, 1, 0),
                          (9, 11, 3, 2, 0), (8, 8, 1, 1, 0)]:
        x = rng.standard_normal((1, 2, h, w))
        wt = rng.standard_normal((4, 2, k, k))
        out, _ = F.conv2d_forward(x, wt, dilation=d, padding=p)
        assert out.shape[2] == h + 2 * p - d * (k - 1)
        assert out.shape[3] == w + 2 * p - d * (k - 1)


def test_conv2d_resolution_preserved_padding_equals_dilation():
    rng = np.random.default_rng(3)
    for d in (1, 2):
        for h, w in [(5, 7), (16, 16), (3, 3)]:
            x = rng.standard_normal((2, 4, h, w))
            wt = rng.standard_normal((4, 4, 3, 3))
            out, _ = F.conv2d_forward(x, wt, dilation=d, padding=d)
            assert out.shape == x.shape


def test_conv2d_matches_naive_oracle():
    rng = np.random.default_rng(4)
    cases = [
        dict(b=1, c_in=1, c_out=1, h=5, w=5, k=3, d=1, p=1, g=1),
        dict(b=2, c_in=4, c_out=6, h=9, w=7, k=3, d=2, p=2, g=1),
        dict(b=2, c_in=8, c_out=8, h=16, w=16, k=3, d=1, p=1, g=1),
        dict(b=1, c_in=6, c_out=4, h=8, w=8, k=5, d=1, p=2, g=2),
        dict(b=2, c_in=8, c_out=16, h=10, w=12, k=1, d=1, p=0, g=4),
        dict(b=1, c_in=4, c_out=4, h=12, w=12, k=3, d=2, p=0, g=4),
    ]
    for case in cases:
        x = rng.standard_normal((case["b"], case["c_in"], case["h"], case["w"]))
        wt = rng.standard_normal(
            (case["c_out"], case["c_in"] // case["g"], case["k"], case["k"]))
        bias = rng.standard_normal(case["c_out"])
        out, _ = F.conv2d_forward(x, wt, bias, dilation=case["d"],
                                  padding=case["p"], groups=case["g"])
        ref = conv2d_naive(x, wt, bias, dilation=case["d"],
                           padding=case["p"], groups=case["g"])
        npt.assert_allclose(out, ref, atol=1e-10)


def test_conv2d_stride_matches_naive_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 11, 13))
    wt = rng.standard_normal((4, 3, 3, 3))
    out, _ = F.conv2d_forward(x, wt, stride=2, padding=1)
    ref = conv2d_naive(x, wt, stride=2, padding=1)
    npt.assert_allclose(out, ref, atol=1e-10)


def test_conv2d_asymmetric_padding_core():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 2, 6, 6))
    wt = rng.standard_normal((2, 2, 2, 2))
    out, _ = F.conv2d_core_forward(x, wt, padding=(1, 0, 1, 0))
    ref = conv2d_naive(x, wt, padding=(1, 0, 1, 0))
    assert out.shape == (1, 2, 6, 6)
    npt.assert_allclose(out, ref, atol=1e-10)


def test_conv2d_linearity():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 8, 8))
    y = rng.standard_normal((2, 3, 8, 8))
    wt = rng.standard_normal((5, 3, 3, 3))
    a, b = 1.7, -0.4
    lhs, _ = F.conv2d_forward(a * x + b * y, wt, padding=1)
    ox, _ = F.conv2d_forward(x, wt, padding=1)
    oy, _ = F.conv2d_forward(y, wt, padding=1)
    npt.assert_allclose(lhs, a * ox + b * oy, atol=1e-9)


def test_conv2d_deterministic():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    wt = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    out1, _ = F.conv2d_forward(x, wt, padding=1)
    out2, _ = F.conv2d_forward(x, wt, padding=1)
    npt.assert_array_equal(out1, out2)


def test_conv2d_rejects_even_kernel():
    x = np.zeros((1, 1, 4, 4))
    w = np.zeros((1, 1, 2, 2))
    with pytest.raises(ValueError, match="odd"):
        F.conv2d_forward(x, w)


def test_conv2d_rejects_channel_mismatch():
    x = np.zeros((1, 3, 4, 4))
    w = np.zeros((2, 4, 3, 3))
    with pytest.raises(ValueError, match="channels"):
        F.conv2d_forward(x, w, padding=1)


def test_conv2d_backward_shapes_and_values_small():
    # hand-checkable case: dx of an all-ones 1x1x2x2 conv with k=1
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    w = np.full((1, 1, 1, 1), 2.0)
    out, cache = F.conv2d_core_forward(x, w, np.zeros(1))
    dout = np.ones_like(out)
    dx, dw, db = F.conv2d_core_backward(dout, cache)
    npt.assert_array_equal(dx, np.full((1, 1, 2, 2), 2.0))
    npt.assert_array_equal(dw, np.array([[[[0.0 + 1 + 2 + 3]]]]))
    npt.assert_array_equal(db, np.array([4.0]))


# ------------------------------------------------------------- pointwise


def test_pointwise_identity():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 4, 5, 5))
    w = np.eye(4).reshape(4, 4, 1, 1)
    out, _ = F.pointwise_forward(x, w, np.zeros(4))
    npt.assert_allclose(out, x, atol=1e-12)


def test_pointwise_channel_sum():
    x = np.stack([np.full((3, 3), 2.0), np.full((3, 3), 5.0)])[None]
    w = np.ones((1, 2, 1, 1))
    out, _ = F.pointwise_forward(x, w)
    npt.assert_array_equal(out, np.full((1, 1, 3, 3), 7.0))


def test_pointwise_matches_naive_oracle():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((1, 4, 5, 5))
    w = rng.standard_normal((3, 4, 1, 1))
    b = rng.standard_normal(3)
    out, _ = F.pointwise_forward(x, w, b)
    npt.assert_allclose(out, pointwise_naive(x, w, b), atol=1e-10)


def test_pointwise_rejects_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        F.pointwise_forward(np.zeros((1, 3, 2, 2)), np.zeros((2, 4, 1, 1)))


# ----------------------------------------------------------- channel_norm


def test_channel_norm_train_standardizes():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 3, 6, 6)) * 3.0 + 1.5
    scale, shift = np.ones(3), np.zeros(3)
    rm, rv = np.zeros(3), np.ones(3)
    out, _ = F.channel_norm_forward(x, scale, shift, rm, rv, train=True)
    mu = out.mean(axis=(0, 2, 3))
    var = out.var(axis=(0, 2, 3))
    assert np.all(np.abs(mu) <= 1e-6)
    npt.assert_allclose(var, 1.0, atol=1e-5)


def test_channel_norm_constant_channel_returns_shift():
    x = np.full((2, 2, 4, 4), 3.25)
    scale = np.array([2.0, 0.5])
    shift = np.array([-1.0, 4.0])
    rm, rv = np.zeros(2), np.ones(2)
    out, _ = F.channel_norm_forward(x, scale, shift, rm, rv, train=True)
    npt.assert_allclose(out[:, 0], -1.0, atol=1e-6)
    npt.assert_allclose(out[:, 1], 4.0, atol=1e-6)


def test_channel_norm_eval_formula():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 3, 4, 4))
    scale = rng.standard_normal(3)
    shift = rng.standard_normal(3)
    rm = rng.standard_normal(3)
    rv = rng.uniform(0.5, 2.0, 3)
    out, _ = F.channel_norm_forward(x, scale, shift, rm.copy(), rv.copy(), train=False)
    ref = channel_norm_eval_naive(x, scale, shift, rm, rv)
    npt.assert_allclose(out, ref, atol=1e-10)


def test_channel_norm_updates_running_stats():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((4, 2, 5, 5)) + 2.0
    rm, rv = np.zeros(2), np.ones(2)
    F.channel_norm_forward(x, np.ones(2), np.zeros(2), rm, rv, train=True, momentum=0.1)
    npt.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
    npt.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-12)


def test_channel_norm_rejects_degenerate_train_batch():
    x = np.ones((1, 3, 1, 1))
    with pytest.raises(ValueError, match="train"):
        F.channel_norm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3),
                               train=True)


# ------------------------------------------------------------ activations


def test_relu_values():
    out, _ = F.activation_forward(np.array([-1.0, 0.0, 2.0]), "relu")
    npt.assert_array_equal(out, [0.0, 0.0, 2.0])


def test_sigmoid_values():
    out, _ = F.activation_forward(np.array([0.0]), "sigmoid")
    npt.assert_allclose(out, [0.5], atol=1e-15)


def test_sigmoid_symmetry():
    rng = np.random.default_rng(14)
    x = rng.standard_normal(100) * 4
    a, _ = F.activation_forward(x, "sigmoid")
    b, _ = F.activation_forward(-x, "sigmoid")
    npt.assert_allclose(a + b, 1.0, atol=1e-12)


def test_activation_rejects_unknown_kind():
    with pytest.raises(ValueError, match="activation"):
        F.activation_forward(np.zeros(3), "tanh")


# ---------------------------------------------------------------- avg_pool


def test_avg_pool_constant_fixed_point():
    x = np.full((1, 2, 6, 6), 3.7)
    for k, s, p in [(3, 1, 1), (2, 2, 0), (3, 2, 1), (5, 1, 2)]:
        out, _ = F.avg_pool_forward(x, k, s, p)
        npt.assert_allclose(out, 3.7, atol=1e-12)


def test_avg_pool_2x2_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out, _ = F.avg_pool_forward(x, 2, 2, 0)
    npt.assert_array_equal(out, np.array([[[[2.5]]]]))


def test_avg_pool_matches_naive_oracle():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((1, 1, 7, 7))
    out, _ = F.avg_pool_forward(x, 3, 1, 1)
    npt.assert_allclose(out, avg_pool_naive(x, 3, 1, 1), atol=1e-12)
    x = rng.standard_normal((2, 3, 9, 11))
    out, _ = F.avg_pool_forward(x, 3, 2, 1)
    npt.assert_allclose(out, avg_pool_naive(x, 3, 2, 1), atol=1e-12)


def test_avg_pool_rejects_bad_stride():
    with pytest.raises(ValueError, match="stride"):
        F.avg_pool_forward(np.zeros((1, 1, 4, 4)), 3, 0, 1)


# ---------------------------------------------------------------- upsample


def test_upsample_single_pixel():
    out, _ = F.upsample_nearest_forward(np.full((1, 1, 1, 1), 5.0), 2)
    npt.assert_array_equal(out, np.full((1, 1, 2, 2), 5.0))


def test_upsample_composition():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((1, 2, 3, 4))
    twice, _ = F.upsample_nearest_forward(x, 2)
    twice, _ = F.upsample_nearest_forward(twice, 2)
    once, _ = F.upsample_nearest_forward(x, 4)
    npt.assert_array_equal(twice, once)


def test_upsample_mass():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 3, 4, 5))
    out, _ = F.upsample_nearest_forward(x, 3)
    npt.assert_allclose(out.sum(), 9 * x.sum(), rtol=1e-12)


def test_upsample_rejects_small_factor():
    with pytest.raises(ValueError, match="factor"):
        F.upsample_nearest_forward(np.zeros((1, 1, 2, 2)), 1)


# --------------------------------------------------------- global_avg_pool


def test_global_avg_pool_examples():
    x = np.zeros((1, 2, 2, 2))
    x[0, 0] = 4.2
    x[0, 1] = np.array([[0.0, 2.0], [4.0, 6.0]])
    out, _ = F.global_avg_pool_forward(x)
    npt.assert_allclose(out, [[4.2, 3.0]], atol=1e-12)


def test_global_avg_pool_matches_naive_oracle():
    rng = np.random.default_rng(18)
    x = rng.standard_normal((2, 5, 6, 7))
    out, _ = F.global_avg_pool_forward(x)
    npt.assert_allclose(out, global_avg_pool_naive(x), atol=1e-12)


# ------------------------------------------------------------------ affine


def test_affine_identity_and_zero():
    rng = np.random.default_rng(19)
    x = rng.standard_normal((3, 4))
    out, _ = F.affine_forward(x, np.eye(4), np.zeros(4))
    npt.assert_allclose(out, x, atol=1e-12)
    out, _ = F.affine_forward(x, np.zeros((2, 4)), np.zeros(2))
    npt.assert_array_equal(out, np.zeros((3, 2)))


def test_affine_matches_naive_oracle():
    rng = np.random.default_rng(20)
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    out, _ = F.affine_forward(x, w, b)
    npt.assert_allclose(out, affine_naive(x, w, b), atol=1e-12)


def test_affine_rejects_dimension_mismatch():
    with pytest.raises(ValueError, match="features"):
        F.affine_forward(np.zeros((2, 3)), np.zeros((4, 5)))


# --------------------------------------------------------------- finiteness


def test_primitives_finite_outputs():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((2, 4, 8, 8))
    w3 = rng.standard_normal((4, 4, 3, 3))
    out, _ = F.conv2d_forward(x, w3, padding=1)
    assert np.all(np.isfinite(out))
    out, _ = F.avg_pool_forward(x, 3, 1, 1)
    assert np.all(np.isfinite(out))
    out, _ = F.activation_forward(x * 50, "sigmoid")
    assert np.all(np.isfinite(out))
