import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from slimadam.tensors import (Axes, ShapeError, broadcast_along, mean_along,
                              reduced_shape, var_along)

T = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])


def test_mean_along_fan_in():
    np.testing.assert_array_equal(mean_along(T, Axes.FAN_IN), [2.0, 5.0])


def test_mean_along_both():
    np.testing.assert_array_equal(mean_along(T, Axes.BOTH), [3.5])


def test_mean_along_none_is_identity():
    assert mean_along(T, Axes.NONE) is T


def test_mean_along_fan_out():
    np.testing.assert_allclose(mean_along(T, Axes.FAN_OUT), [2.5, 3.5, 4.5])


def test_var_along_fan_in():
    np.testing.assert_allclose(var_along(T, Axes.FAN_IN), [2 / 3, 2 / 3])


def test_var_along_both():
    np.testing.assert_allclose(var_along(T, Axes.BOTH), [35 / 12])


def test_var_constant_is_exact_zero():
    c = np.full((2, 2), 3.0)
    np.testing.assert_array_equal(var_along(c, Axes.FAN_IN), [0.0, 0.0])


def test_var_size_one_reduction_is_zero():
    one_col = np.array([[5.0], [7.0]])
    np.testing.assert_array_equal(var_along(one_col, Axes.FAN_IN), [0.0, 0.0])


def test_rank1_rejects_fan_axes():
    v = np.arange(4.0)
    with pytest.raises(ShapeError):
        mean_along(v, Axes.FAN_IN)
    with pytest.raises(ShapeError):
        var_along(v, Axes.FAN_OUT)


def test_broadcast_fan_in():
    out = broadcast_along(np.array([2.0, 5.0]), Axes.FAN_IN, (2, 3))
    np.testing.assert_array_equal(out, [[2, 2, 2], [5, 5, 5]])


def test_broadcast_both():
    out = broadcast_along(np.array([3.5]), Axes.BOTH, (2, 3))
    np.testing.assert_array_equal(out, np.full((2, 3), 3.5))


def test_broadcast_none_identity():
    assert broadcast_along(T, Axes.NONE, (2, 3)) is T


def test_broadcast_shape_mismatch():
    with pytest.raises(ShapeError):
        broadcast_along(np.array([1.0, 2.0, 3.0]), Axes.FAN_IN, (2, 3))


matrices = arrays(np.float64, (3, 4),
                  elements=st.floats(-1e6, 1e6, allow_nan=False))


@given(matrices, st.sampled_from(list(Axes)))
def test_round_trip_mean(t, k):
    m = mean_along(t, k)
    back = broadcast_along(m, k, t.shape)
    np.testing.assert_array_equal(mean_along(back, k), m)


@given(matrices, st.sampled_from([Axes.FAN_OUT, Axes.FAN_IN, Axes.BOTH]))
def test_var_nonnegative(t, k):
    assert np.all(var_along(t, k) >= 0)


@given(matrices)
def test_reduction_consistency(t):
    both = mean_along(t, Axes.BOTH)[0]
    via_rows = np.mean(mean_along(t, Axes.FAN_IN))
    assert both == pytest.approx(via_rows, rel=1e-12, abs=1e-18)


def test_reduced_shape():
    assert reduced_shape((2, 3), Axes.FAN_OUT) == (3,)
    assert reduced_shape((2, 3), Axes.FAN_IN) == (2,)
    assert reduced_shape((2, 3), Axes.BOTH) == (1,)
    assert reduced_shape((5,), Axes.BOTH) == (1,)
    assert reduced_shape((2, 3), Axes.NONE) == (2, 3)
