import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentaug.errors import DimensionError
from latentaug.layers import AdamState, Conv2dLayer, DenseLayer, adam_step, conv2d_forward, dense_forward, init_params
from latentaug.tensor import Tensor


def _dense(w, b):
    return DenseLayer(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def test_identity_dense_layer():
    layer = _dense(np.eye(2), np.zeros(2))
    assert dense_forward(layer, [[1.0, 2.0]]).data.tolist() == [[1.0, 2.0]]


def test_dense_hand_arithmetic():
    layer = _dense([[1.0, 1.0]], [1.0])
    assert dense_forward(layer, [[2.0, 3.0]]).data.tolist() == [[6.0]]


def test_dense_input_width_mismatch():
    layer = _dense(np.eye(2), np.zeros(2))
    with pytest.raises(DimensionError):
        dense_forward(layer, [[1.0, 2.0, 3.0]])


def test_unit_kernel_conv_is_identity():
    layer = Conv2dLayer(Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    x = np.random.default_rng(0).uniform(size=(2, 1, 5, 4))
    assert np.array_equal(conv2d_forward(layer, x).data, x)


def test_all_ones_kernel_on_constant_image():
    layer = Conv2dLayer(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    out = conv2d_forward(layer, np.full((1, 1, 5, 5), 0.7)).data
    assert out[0, 0, 2, 2] == pytest.approx(9 * 0.7)
    # corners see only four pixels through the zero padding
    assert out[0, 0, 0, 0] == pytest.approx(4 * 0.7)


def test_stride_two_halves_spatial_size():
    layer = Conv2dLayer.create(1, 2, np.random.default_rng(0), stride=2)
    assert conv2d_forward(layer, np.zeros((1, 1, 7, 6))).shape == (1, 2, 4, 3)
    assert layer.output_hw(7, 6) == (4, 3)


def test_conv_channel_mismatch():
    layer = Conv2dLayer.create(2, 1, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        conv2d_forward(layer, np.zeros((1, 3, 4, 4)))


def test_even_kernel_rejected():
    with pytest.raises(DimensionError):
        Conv2dLayer(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)))


def test_init_is_seed_deterministic():
    a = init_params((8, 5), np.random.default_rng(7)).data
    b = init_params((8, 5), np.random.default_rng(7)).data
    assert np.array_equal(a, b)


def test_bias_init_is_zero():
    assert not init_params((6,), np.random.default_rng(0)).data.any()


def test_glorot_bound_and_mean():
    fan_out, fan_in = 100, 100
    w = init_params((fan_out, fan_in), np.random.default_rng(1)).data
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    assert np.abs(w).max() <= limit
    sigma = limit / np.sqrt(3.0) / np.sqrt(w.size)  # std of the mean of U(-l, l)
    assert abs(w.mean()) < 3 * sigma


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState(lr=0.1)
    for _ in range(5):
        adam_step([p], [np.zeros(2)], state)
    assert p.data.tolist() == [1.0, -2.0]
    assert state.t == 5


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    adam_step([p], [np.array([1.0])], AdamState(lr=0.1))
    assert p.data[0] == pytest.approx(-0.1, abs=1e-7)


def test_adam_trajectories_are_bit_identical():
    def run():
        rng = np.random.default_rng(3)
        p = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        state = AdamState(lr=0.01)
        for _ in range(20):
            adam_step([p], [2.0 * p.data], state)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(2)], AdamState())


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=5), st.integers(1, 30))
def test_adam_second_moment_nonnegative(values, steps):
    p = Tensor(np.zeros(len(values)), requires_grad=True)
    state = AdamState()
    for _ in range(steps):
        adam_step([p], [np.array(values)], state)
    assert np.all(state.v[0] >= 0)
    assert np.all(np.isfinite(p.data))
