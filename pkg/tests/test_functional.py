import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtfnet import functional as F
from rtfnet.tensor import Tensor, backward, mul, sum_all

from oracles import central_diff, conv2d_loops, matmul_loops, max_rel_err


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def check_grads(build, arrays, rng, tol=1e-5):
    """Gradient check of sum(build(*tensors) * R) for a fixed random R, all entries."""
    tensors = [T(a, True) for a in arrays]
    out = build(*tensors)
    r = rng.standard_normal(out.shape)
    backward(sum_all(mul(out, T(r))))
    for t in tensors:
        idx = range(t.size)
        num = central_diff(lambda: float(np.sum(build(*tensors).data * r)), t.data, idx)
        err = max_rel_err(t.grad.reshape(-1), num)
        assert err <= tol, f"relative error {err:.2e}"


# ---------------------------------------------------------------------------
# conv2d


def test_conv_all_ones_padding_one():
    out = F.conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 3, 3))), T([0.0]), padding=1)
    np.testing.assert_array_equal(out.data[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 4))
    out = F.conv2d(T(x), T(np.ones((1, 1, 1, 1))), T([0.0]))
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = F.conv2d(T(x), T(w), T(b), padding=1)
    assert np.abs(out.data - conv2d_loops(x, w, b, 1, 1)).max() <= 1e-6


def test_conv_stride_two_matches_oracle(rng):
    x = rng.standard_normal((2, 3, 7, 9))
    w = rng.standard_normal((4, 3, 3, 3))
    out = F.conv2d(T(x), T(w), None, stride=2, padding=1)
    assert np.abs(out.data - conv2d_loops(x, w, None, 2, 1)).max() <= 1e-6


def test_conv_errors():
    with pytest.raises(ValueError, match="channel"):
        F.conv2d(T(np.ones((1, 2, 4, 4))), T(np.ones((1, 3, 3, 3))))
    with pytest.raises(ValueError, match="fit"):
        F.conv2d(T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 3, 3))))
    with pytest.raises(ValueError, match="integral"):
        F.conv2d(T(np.ones((1, 1, 4, 4))), T(np.ones((1, 1, 3, 3))), stride=2)


def test_conv_float32_stays_float32(rng):
    x = Tensor(rng.standard_normal((1, 2, 6, 6)).astype(np.float32))
    w = Tensor(rng.standard_normal((2, 2, 3, 3)).astype(np.float32))
    assert F.conv2d(x, w, padding=1).dtype == np.float32


def test_conv_large_input_recomputes_columns(rng, monkeypatch):
    # force the no-cache path and compare with the cached one
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    grads = []
    for limit in (1 << 22, 0):
        monkeypatch.setattr(F, "_COLS_CACHE_LIMIT", limit)
        xt, wt = T(x, True), T(w, True)
        backward(sum_all(F.conv2d(xt, wt, padding=1)))
        grads.append((xt.grad, wt.grad))
    np.testing.assert_array_equal(grads[0][0], grads[1][0])
    np.testing.assert_array_equal(grads[0][1], grads[1][1])


@pytest.mark.parametrize("k,pad,stride", [(3, 1, 1), (1, 0, 1), (3, 0, 2), (5, 2, 1)])
def test_conv_gradients(rng, k, pad, stride):
    h = 2 * pad + k + 2 * stride
    check_grads(
        lambda x, w, b: F.conv2d(x, w, b, stride, pad),
        [rng.standard_normal((2, 2, h, h)), rng.standard_normal((3, 2, k, k)), rng.standard_normal(3)],
        rng,
    )


# ---------------------------------------------------------------------------
# activations and normalization


def test_relu_values():
    np.testing.assert_array_equal(F.relu(T([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_gelu_values():
    assert F.gelu(T([0.0])).data[0] == 0.0
    expected = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    assert abs(F.gelu(T([1.0])).data[0] - 0.841345) <= 1e-5
    assert abs(F.gelu(T([1.0])).data[0] - expected) <= 1e-12


def test_activation_dispatch():
    assert F.activation("relu", T([-1.0])).data[0] == 0
    with pytest.raises(ValueError):
        F.activation("tanh", T([0.0]))


def test_gelu_and_relu_gradients(rng):
    x = rng.standard_normal((3, 4))
    check_grads(F.gelu, [x], rng)
    check_grads(F.relu, [x], rng)


def test_layer_norm_two_channels():
    x = T(np.array([3.0, 5.0]).reshape(1, 2, 1, 1))
    out = F.layer_norm(x, T(np.ones(2)), T(np.zeros(2)))
    np.testing.assert_allclose(out.data.reshape(-1), [-1.0, 1.0], atol=1e-4)


def test_layer_norm_constant_channels_is_zero():
    out = F.layer_norm(T(np.full((1, 4, 2, 2), 7.0)), T(np.ones(4)), T(np.zeros(4)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_batch_norm_train_mean_is_zero(rng):
    x = T(rng.standard_normal((4, 3, 5, 5)) * 3 + 2)
    out = F.batch_norm(x, T(np.ones(3)), T(np.zeros(3)))
    assert np.abs(out.data.mean(axis=(0, 2, 3))).max() <= 1e-6


def test_batch_norm_running_stats_update(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    stats = F.BatchNormStats.fresh(3, np.float64)
    F.batch_norm(T(x), T(np.ones(3)), T(np.zeros(3)), stats)
    m = x.size // 3
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))
    assert stats.count == 1


def test_batch_norm_eval_uses_running_stats(rng):
    stats = F.BatchNormStats(np.array([1.0, -1.0]), np.array([4.0, 0.25]), count=3)
    x = rng.standard_normal((1, 2, 3, 3))
    out = F.batch_norm(T(x), T(np.ones(2)), T(np.zeros(2)), stats, training=False)
    expect = (x - stats.mean.reshape(1, 2, 1, 1)) / np.sqrt(stats.var.reshape(1, 2, 1, 1) + F.BN_EPS)
    np.testing.assert_allclose(out.data, expect)
    assert stats.count == 3


def test_batch_norm_eval_without_stats_fails():
    with pytest.raises(RuntimeError):
        F.batch_norm(T(np.ones((1, 2, 2, 2))), T(np.ones(2)), T(np.zeros(2)), F.BatchNormStats.fresh(2), training=False)


def test_normalization_gradients(rng):
    x = rng.standard_normal((2, 3, 3, 4))
    s, b = rng.standard_normal(3), rng.standard_normal(3)
    check_grads(lambda x, s, b: F.layer_norm(x, s, b), [x, s, b], rng)
    check_grads(lambda x, s, b: F.batch_norm(x, s, b), [x, s, b], rng)
    stats = F.BatchNormStats(rng.standard_normal(3), rng.random(3) + 0.5, 1)
    check_grads(lambda x, s, b: F.batch_norm(x, s, b, stats, training=False), [x, s, b], rng)


def test_normalize_rejects_unknown_kind():
    with pytest.raises(ValueError):
        F.normalize("group", T(np.ones((1, 1, 1, 1))), T([1.0]), T([0.0]))


# ---------------------------------------------------------------------------
# matmul, softmax, attention


def test_matmul_hand_cases():
    b = [[1.0, 2.0], [3.0, 4.0]]
    np.testing.assert_array_equal(F.matmul(T(np.eye(2)), T(b)).data, b)
    np.testing.assert_array_equal(F.matmul(T([[1.0, 2.0]]), T([[3.0], [4.0]])).data, [[11.0]])


def test_matmul_batched_oracle(rng):
    a, b = rng.standard_normal((2, 4, 8)), rng.standard_normal((2, 8, 3))
    assert np.abs(F.matmul(T(a), T(b)).data - matmul_loops(a, b)).max() <= 1e-6


def test_matmul_errors():
    with pytest.raises(ValueError):
        F.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))
    with pytest.raises(ValueError):
        F.matmul(T(np.ones((2, 2, 3))), T(np.ones((3, 3, 1))))


def test_matmul_gradients(rng):
    check_grads(F.matmul, [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))], rng)
    check_grads(F.matmul, [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))], rng)
    check_grads(F.matmul, [rng.standard_normal((3, 4)), rng.standard_normal((2, 4, 5))], rng)


def test_softmax_cases():
    np.testing.assert_array_equal(F.softmax(T([0.0, 0.0, 0.0, 0.0])).data, [0.25] * 4)
    np.testing.assert_array_equal(F.softmax(T([1000.0, 1000.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(F.softmax(T([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-6)


def test_softmax_gradient(rng):
    check_grads(F.softmax, [rng.standard_normal((3, 5))], rng)


def naive_attention(q, k, v):
    s = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    p = np.exp(s - s.max(axis=-1, keepdims=True))
    p /= p.sum(axis=-1, keepdims=True)
    return p @ v


@pytest.mark.parametrize("chunk", [1 << 16, 7, 1])
def test_attention_matches_naive(rng, monkeypatch, chunk):
    monkeypatch.setattr(F, "_ATTN_CHUNK", chunk)
    q, k, v = (rng.standard_normal((2, 3, 6, 4)) for _ in range(3))
    out = F.scaled_dot_product_attention(T(q), T(k), T(v))
    np.testing.assert_allclose(out.data, naive_attention(q, k, v), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("chunk", [1 << 16, 5])
def test_attention_gradients(rng, monkeypatch, chunk):
    monkeypatch.setattr(F, "_ATTN_CHUNK", chunk)
    arrays = [rng.standard_normal((2, 5, 3)) for _ in range(3)]
    check_grads(F.scaled_dot_product_attention, arrays, rng)


def test_attention_weights_rows_sum_to_one(rng):
    q, k = rng.standard_normal((2, 7, 4)), rng.standard_normal((2, 7, 4))
    w = F.attention_weights(T(q), T(k))
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# pixel (un)shuffle, padding, loss


def test_pixel_unshuffle_ordering():
    x = T(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert F.pixel_unshuffle(x, 2).data.reshape(-1).tolist() == [1, 2, 3, 4]
    assert F.pixel_unshuffle(x, 2).shape == (1, 4, 1, 1)


def test_pixel_shuffle_ordering():
    x = T(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
    assert F.pixel_shuffle(x, 2).data[0, 0].tolist() == [[1, 2], [3, 4]]


def test_pixel_unshuffle_formula(rng):
    x = rng.standard_normal((2, 3, 6, 4))
    y = F.pixel_unshuffle(T(x), 2).data
    for c in range(3):
        for dy in range(2):
            for dx in range(2):
                np.testing.assert_array_equal(y[:, c * 4 + dy * 2 + dx], x[:, c, dy::2, dx::2])


def test_shuffle_factor_one_is_identity(rng):
    x = rng.standard_normal((1, 3, 4, 5))
    np.testing.assert_array_equal(F.pixel_unshuffle(T(x), 1).data, x)
    np.testing.assert_array_equal(F.pixel_shuffle(T(x), 1).data, x)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 3),
    c=st.integers(1, 4),
    r=st.integers(1, 3),
    h=st.integers(1, 4),
    w=st.integers(1, 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_shuffle_pair_is_bitwise_inverse(n, c, r, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((n, c, h * r, w * r)).astype(np.float32)
    assert np.array_equal(F.pixel_shuffle(F.pixel_unshuffle(Tensor(x), r), r).data, x)
    y = np.random.default_rng(seed).standard_normal((n, c * r * r, h, w)).astype(np.float32)
    assert np.array_equal(F.pixel_unshuffle(F.pixel_shuffle(Tensor(y), r), r).data, y)


def test_shuffle_errors():
    with pytest.raises(ValueError):
        F.pixel_unshuffle(T(np.ones((1, 1, 3, 4))), 2)
    with pytest.raises(ValueError):
        F.pixel_shuffle(T(np.ones((1, 3, 2, 2))), 2)


def test_shuffle_gradients(rng):
    check_grads(lambda x: F.pixel_unshuffle(x, 2), [rng.standard_normal((1, 2, 4, 6))], rng)
    check_grads(lambda x: F.pixel_shuffle(x, 2), [rng.standard_normal((1, 8, 2, 3))], rng)


def test_pad_reflect_and_crop():
    x = np.arange(12.0).reshape(1, 1, 3, 4)
    y = F.pad_reflect(T(x), 1, 2).data[0, 0]
    np.testing.assert_array_equal(y, np.pad(x[0, 0], ((0, 1), (0, 2)), mode="reflect"))
    np.testing.assert_array_equal(F.crop(T(y[None, None]), 3, 4).data[0, 0], x[0, 0])


def test_pad_reflect_and_crop_gradients(rng):
    check_grads(lambda x: F.pad_reflect(x, 1, 2), [rng.standard_normal((1, 2, 3, 4))], rng)
    check_grads(lambda x: F.crop(x, 2, 3), [rng.standard_normal((1, 2, 3, 4))], rng)


def test_mse_loss_value_and_gradient(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    assert F.mse_loss(T(a), T(b)).item() == pytest.approx(np.mean((a - b) ** 2))
    check_grads(F.mse_loss, [a, b], rng)
