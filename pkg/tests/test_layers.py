"""Layer primitives: pinned forward values, gradients, config round-trips."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cfcomm.errors import ConfigError
from cfcomm.nn import (
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    Network,
    Relu,
    Reshape,
    Sigmoid,
    Softmax,
    grad_check,
    layer_from_config,
)

finite_floats = st.floats(min_value=-10.0, max_value=10.0,
                          allow_nan=False, allow_infinity=False)


def batches(shape_tail, max_batch=4):
    return hnp.arrays(np.float64,
                      st.integers(1, max_batch).map(lambda b: (b,) + shape_tail),
                      elements=finite_floats)


# ---------------------------------------------------------------------------
# Pinned forward values
# ---------------------------------------------------------------------------

def test_dense_forward_matches_hand_computation():
    layer = Dense(2, 3)
    w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = np.array([0.5, -0.5, 0.0])
    y, _ = layer.forward([w, b], np.array([[1.0, -1.0]]))
    np.testing.assert_allclose(y, [[1 - 4 + 0.5, 2 - 5 - 0.5, 3 - 6]])


def test_relu_clamps_negatives_only():
    y, _ = Relu().forward([], np.array([[-2.0, 0.0, 3.5]]))
    np.testing.assert_array_equal(y, [[0.0, 0.0, 3.5]])


def test_sigmoid_known_values_and_saturation():
    y, _ = Sigmoid().forward([], np.array([[0.0, 1000.0, -1000.0]]))
    np.testing.assert_allclose(y, [[0.5, 1.0, 0.0]], atol=1e-12)
    assert np.isfinite(y).all()


def test_softmax_matches_hand_case():
    y, _ = Softmax().forward([], np.array([[np.log(1.0), np.log(3.0)]]))
    np.testing.assert_allclose(y, [[0.25, 0.75]], atol=1e-12)


def test_conv2d_single_kernel_hand_case():
    # 3x3 averaging-style kernel over a 4x4 ramp, valid convolution
    layer = Conv2d(1, 1, kernel=3)
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
    w = np.zeros((3, 3, 1, 1))
    w[1, 1, 0, 0] = 2.0     # pick out the window center, doubled
    w[0, 0, 0, 0] = 1.0     # plus the top-left neighbor
    b = np.array([0.25])
    y, _ = layer.forward([w, b], x)
    assert y.shape == (1, 2, 2, 1)
    # cross-correlation (no kernel flip): window at (0,0) reads center
    # x[1,1] = 5 and top-left x[0,0] = 0 -> 2*5 + 1*0 + 0.25
    np.testing.assert_allclose(y[0, :, :, 0],
                               [[10.25, 13.25], [22.25, 25.25]])


def test_maxpool_picks_window_maxima():
    x = np.array([[1.0, 2.0, 5.0, 1.0],
                  [3.0, 4.0, 0.0, 0.0],
                  [9.0, 0.0, 1.0, 1.0],
                  [0.0, 0.0, 1.0, 8.0]]).reshape(1, 4, 4, 1)
    y, _ = MaxPool2d(2).forward([], x)
    np.testing.assert_array_equal(y[0, :, :, 0], [[4.0, 5.0], [9.0, 8.0]])


def test_flatten_and_reshape_are_inverse():
    x = np.arange(24, dtype=np.float64).reshape(2, 3, 4, 1)
    flat, _ = Flatten().forward([], x)
    assert flat.shape == (2, 12)
    back, _ = Reshape((3, 4, 1)).forward([], flat)
    np.testing.assert_array_equal(back, x)


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(batches((5,)))
def test_softmax_rows_are_distributions(x):
    y, _ = Softmax().forward([], x)
    assert (y > 0).all()
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(batches((7,)))
def test_relu_output_nonnegative_and_idempotent(x):
    y, _ = Relu().forward([], x)
    assert (y >= 0).all()
    y2, _ = Relu().forward([], y)
    np.testing.assert_array_equal(y, y2)


@settings(max_examples=25, deadline=None)
@given(batches((4, 4, 2)))
def test_maxpool_output_bounded_by_window_contents(x):
    y, _ = MaxPool2d(2).forward([], x)
    assert y.shape == (x.shape[0], 2, 2, 2)
    assert y.max() <= x.max() + 1e-15
    # every pooled value exists somewhere in the input
    for v in y.ravel():
        assert np.isclose(x, v).any()


@settings(max_examples=20, deadline=None)
@given(batches((3,)), st.floats(0.1, 5.0))
def test_dense_is_linear_with_zero_bias(x, scale):
    layer = Dense(3, 2)
    w = np.arange(6, dtype=np.float64).reshape(3, 2)
    b = np.zeros(2)
    y1, _ = layer.forward([w, b], x * scale)
    y0, _ = layer.forward([w, b], x)
    np.testing.assert_allclose(y1, scale * y0, rtol=1e-12, atol=1e-12)


def test_sigmoid_output_in_unit_interval(rng):
    y, _ = Sigmoid().forward([], rng.normal(size=(6, 9)) * 50)
    assert ((y >= 0) & (y <= 1)).all()


# ---------------------------------------------------------------------------
# Gradients (finite differences through single-layer networks)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("layers,in_shape", [
    ([Dense(6, 4)], (6,)),
    ([Dense(6, 4), Relu()], (6,)),
    ([Dense(6, 4), Sigmoid()], (6,)),
    ([Dense(6, 4), Softmax()], (6,)),
    ([Reshape((5, 5, 1)), Conv2d(1, 2)], (25,)),
    ([Reshape((4, 4, 2)), MaxPool2d(2), Flatten()], (32,)),
    ([Reshape((6, 6, 1)), Conv2d(1, 3), Relu(), MaxPool2d(2),
      Flatten(), Dense(12, 4), Softmax()], (36,)),
])
def test_layer_gradients_match_finite_differences(layers, in_shape, rng):
    net = Network(layers, in_shape, rng)
    x = rng.normal(size=(3,) + in_shape)
    if net.n_params:
        err = grad_check(net, x, sample=min(net.n_params, 60), rng=rng)
        assert err < 1e-6
    else:
        # nothing to perturb parameter-side; cover the input gradient instead
        weights = rng.normal(size=net.forward(x)[0].shape)
        _, tape = net.forward(x)
        grad_in, _ = net.backward(tape, weights)
        eps = 1e-6
        flat = x.reshape(-1)
        for idx in rng.choice(flat.size, size=8, replace=False):
            xp, xm = flat.copy(), flat.copy()
            xp[idx] += eps
            xm[idx] -= eps
            hi = float(np.sum(weights * net.forward(xp.reshape(x.shape))[0]))
            lo = float(np.sum(weights * net.forward(xm.reshape(x.shape))[0]))
            assert abs(grad_in.reshape(-1)[idx] - (hi - lo) / (2 * eps)) < 1e-7


def test_conv_input_gradient_matches_finite_differences(rng):
    # perturb the *input*, not the parameters, to cover grad_in
    net = Network([Reshape((5, 5, 1)), Conv2d(1, 2), Flatten()], (25,), rng)
    x = rng.normal(size=(2, 25))
    weights = rng.normal(size=(2, 18))
    y, tape = net.forward(x)
    grad_in, _ = net.backward(tape, weights)
    eps = 1e-6
    for (i, j) in [(0, 3), (1, 17), (0, 24), (1, 0)]:
        xp, xm = x.copy(), x.copy()
        xp[i, j] += eps
        xm[i, j] -= eps
        hi = float(np.sum(weights * net.forward(xp)[0]))
        lo = float(np.sum(weights * net.forward(xm)[0]))
        assert abs(grad_in[i, j] - (hi - lo) / (2 * eps)) < 1e-7


def test_maxpool_gradient_goes_to_first_maximum_on_ties():
    x = np.full((1, 2, 2, 1), 3.0)          # four-way tie in one window
    layer = MaxPool2d(2)
    y, cache = layer.forward([], x)
    grad_in, _ = layer.backward([], cache, np.ones((1, 1, 1, 1)))
    assert grad_in.sum() == 1.0             # routed once, not four times
    assert grad_in[0, 0, 0, 0] == 1.0       # ... to the first position


# ---------------------------------------------------------------------------
# Config round-trips and validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("layer", [
    Dense(3, 7), Conv2d(2, 5, kernel=3), MaxPool2d(2), Relu(), Sigmoid(),
    Softmax(), Flatten(), Reshape((2, 3, 1)),
])
def test_layer_config_round_trip(layer):
    clone = layer_from_config(layer.config())
    assert clone.config() == layer.config()
    assert type(clone) is type(layer)


def test_layer_from_config_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        layer_from_config({"kind": "transformer"})


def test_shape_validation_errors():
    with pytest.raises(ConfigError):
        Dense(3, 2).out_shape((4,))
    with pytest.raises(ConfigError):
        Conv2d(1, 1).out_shape((2, 2, 1))      # kernel larger than input
    with pytest.raises(ConfigError):
        Conv2d(2, 1).out_shape((5, 5, 1))      # channel mismatch
    with pytest.raises(ConfigError):
        MaxPool2d(2).out_shape((5, 4, 1))      # window must divide dims
    with pytest.raises(ConfigError):
        Reshape((2, 2)).out_shape((5,))
