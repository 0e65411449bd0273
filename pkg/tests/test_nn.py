"""Gradient and behavior checks for the hand-written layers.

Every analytic backward pass is compared against central finite
differences on random instances; the comparison uses a relative error of
at most 1e-4 on float64 inputs.
"""

import numpy as np
import pytest

from tdsv.nn import (
    Adam,
    Conv1d,
    Dense,
    Param,
    ReLU,
    cosine_similarity,
    cosine_similarity_backward,
    log_softmax,
    sigmoid,
    softmax,
)

EPS = 1e-6
TOL = 1e-4


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def finite_diff(fn, x, eps=EPS):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        grad[i] = (fn(xp) - fn(xm)) / (2.0 * eps)
    return grad


# ------------------------------------------------------------------ conv1d


@pytest.mark.parametrize("seed", range(5))
def test_conv1d_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    layer = Conv1d(3, 4, 3, rng=rng)
    x = rng.normal(size=(2, 3, 7))
    proj = rng.normal(size=(2, 4, 7))  # random scalarization

    def loss_of_input(xv):
        return float((layer.forward(xv) * proj).sum())

    def loss_of_weight(w):
        layer.weight.value = w
        return float((layer.forward(x) * proj).sum())

    def loss_of_bias(b):
        layer.bias.value = b
        return float((layer.forward(x) * proj).sum())

    w0 = layer.weight.value.copy()
    b0 = layer.bias.value.copy()
    layer.forward(x)
    layer.weight.zero_grad()
    layer.bias.zero_grad()
    grad_in = layer.backward(proj)

    assert rel_err(grad_in, finite_diff(loss_of_input, x)) < TOL
    assert rel_err(layer.weight.grad, finite_diff(loss_of_weight, w0)) < TOL
    layer.weight.value = w0
    assert rel_err(layer.bias.grad, finite_diff(loss_of_bias, b0)) < TOL
    layer.bias.value = b0


def test_conv1d_preserves_frame_count_and_rejects_even_kernels():
    rng = np.random.default_rng(0)
    layer = Conv1d(2, 5, 3, rng=rng)
    out = layer.forward(rng.normal(size=(2, 11)))
    assert out.shape == (5, 11)
    with pytest.raises(ValueError):
        Conv1d(2, 5, 4)


def test_conv1d_matches_numpy_correlate_on_single_channel():
    # one in/out channel: same-length convolution equals np.correlate("same")
    rng = np.random.default_rng(1)
    layer = Conv1d(1, 1, 5, rng=rng)
    x = rng.normal(size=11)
    out = layer.forward(x[None, :])[0]
    expect = np.correlate(x, layer.weight.value[0, 0], mode="same")
    expect += layer.bias.value[0]
    np.testing.assert_allclose(out, expect, rtol=1e-12, atol=1e-12)


def test_conv1d_rejects_wrong_channel_count():
    layer = Conv1d(3, 2, 3, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer.forward(np.zeros((4, 9)))


# ------------------------------------------------------------------- dense


@pytest.mark.parametrize("seed", range(5))
def test_dense_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    layer = Dense(6, 4, rng=rng)
    x = rng.normal(size=(3, 6))
    proj = rng.normal(size=(3, 4))

    def loss_of_input(xv):
        return float((layer.forward(xv) * proj).sum())

    def loss_of_weight(w):
        layer.weight.value = w
        return float((layer.forward(x) * proj).sum())

    w0 = layer.weight.value.copy()
    layer.forward(x)
    layer.weight.zero_grad()
    layer.bias.zero_grad()
    grad_in = layer.backward(proj)

    assert rel_err(grad_in, finite_diff(loss_of_input, x)) < TOL
    assert rel_err(layer.weight.grad, finite_diff(loss_of_weight, w0)) < TOL
    layer.weight.value = w0
    np.testing.assert_allclose(layer.bias.grad, proj.sum(axis=0))


def test_dense_accepts_single_vectors():
    rng = np.random.default_rng(0)
    layer = Dense(4, 2, rng=rng)
    v = rng.normal(size=4)
    out = layer.forward(v)
    assert out.shape == (2,)
    np.testing.assert_allclose(out, layer.weight.value @ v + layer.bias.value)


def test_dense_rejects_wrong_feature_count():
    layer = Dense(4, 2, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer.forward(np.zeros(5))


# -------------------------------------------------------------- activations


def test_relu_backward_masks_nonpositive_inputs():
    layer = ReLU()
    x = np.array([-2.0, -0.0, 0.5, 3.0])
    out = layer.forward(x)
    np.testing.assert_array_equal(out, [0.0, 0.0, 0.5, 3.0])
    grad = layer.backward(np.ones_like(x))
    np.testing.assert_array_equal(grad, [0.0, 0.0, 1.0, 1.0])


def test_sigmoid_is_stable_and_symmetric():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(1000.0) == 1.0  # saturates without overflow
    assert sigmoid(-1000.0) == 0.0
    x = np.linspace(-20, 20, 101)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


def test_softmax_rows_are_distributions_and_shift_invariant():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 7)) * 50
    p = softmax(x, axis=1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(p, softmax(x + 123.0, axis=1), atol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(x, axis=1)), p, atol=1e-12)


# ------------------------------------------------------------------ cosine


@pytest.mark.parametrize("seed", range(10))
def test_cosine_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=5)
    b = rng.normal(size=5)
    up = float(rng.normal())
    ga, gb = cosine_similarity_backward(a, b, up)
    assert rel_err(ga, finite_diff(lambda v: up * cosine_similarity(v, b), a)) < TOL
    assert rel_err(gb, finite_diff(lambda v: up * cosine_similarity(a, v), b)) < TOL


def test_cosine_known_values_and_errors():
    assert cosine_similarity([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)
    assert cosine_similarity([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)
    assert cosine_similarity([1.0, 0.0], [-3.0, 0.0]) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


# -------------------------------------------------------------------- adam


def test_adam_first_step_moves_by_lr_in_sign_direction():
    # with bias correction the first update is lr * g / (|g| + eps)
    p = Param(np.array([1.0, -2.0, 3.0]))
    opt = Adam([p], lr=0.1)
    p.grad[:] = np.array([0.5, -4.0, 1e-3])
    opt.step()
    expect = np.array([1.0, -2.0, 3.0]) - 0.1 * np.sign([0.5, -4.0, 1e-3])
    np.testing.assert_allclose(p.value, expect, atol=1e-5)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    p = Param(rng.normal(size=4))
    ref = p.value.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    opt = Adam([p], lr=0.01)
    for t in range(1, 8):
        g = rng.normal(size=4)
        opt.zero_grad()
        p.grad[:] = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9**t)
        vh = v / (1 - 0.999**t)
        ref = ref - 0.01 * mh / (np.sqrt(vh) + 1e-8)
        np.testing.assert_allclose(p.value, ref, atol=1e-12)


def test_adam_converges_on_quadratic():
    p = Param(np.array([5.0, -3.0]))
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        p.grad[:] = 2.0 * p.value
        opt.step()
    assert np.abs(p.value).max() < 1e-3
