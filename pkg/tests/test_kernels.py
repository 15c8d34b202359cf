import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlink import kernels
from mlink._accel import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
tokens = st.lists(st.integers(0, 5), max_size=12)


def edit_distance_oracle(a, b):
    # plain recursion over prefixes; fine for short inputs
    from functools import lru_cache

    @lru_cache(None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


@given(tokens, tokens)
@settings(max_examples=200, deadline=None)
def test_edit_distance_matches_recursion(a, b):
    assert kernels.edit_distance_np(a, b) == edit_distance_oracle(a, b)


@needs_numba
@given(tokens, tokens)
@settings(max_examples=200, deadline=None)
def test_edit_distance_nb_equals_np(a, b):
    assert int(kernels.edit_distance_nb(np.array(a, np.int64), np.array(b, np.int64))) == kernels.edit_distance_np(a, b)


def test_edit_distance_known():
    assert kernels.edit_distance([1, 2, 3], [1, 3]) == 1
    assert kernels.edit_distance([], [4, 5]) == 2
    assert kernels.edit_distance([7, 8], [8, 7]) == 2


def _lstm_inputs(seed, n=5, h=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 4 * h)) * 3, rng.normal(size=(n, h))


def test_lstm_forward_np_by_hand():
    z, c_prev = _lstm_inputs(0)
    h = c_prev.shape[1]
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:, :h]), sig(z[:, h : 2 * h]), np.tanh(z[:, 2 * h : 3 * h]), sig(z[:, 3 * h :])
    c = f * c_prev + i * g
    out, c_np, _, _ = kernels.lstm_pointwise_forward_np(z, c_prev)
    np.testing.assert_allclose(c_np, c, rtol=1e-13)
    np.testing.assert_allclose(out, o * np.tanh(c), rtol=1e-13)


def test_lstm_backward_np_finite_difference():
    z, c_prev = _lstm_inputs(1, n=2, h=2)
    rng = np.random.default_rng(2)
    dh, dc_next = rng.normal(size=c_prev.shape), rng.normal(size=c_prev.shape)

    def scalar(zz, cp):
        out, c, _, _ = kernels.lstm_pointwise_forward_np(zz, cp)
        return float(np.sum(out * dh) + np.sum(c * dc_next))

    _, _, acts, tanh_c = kernels.lstm_pointwise_forward_np(z, c_prev)
    dz, dcp = kernels.lstm_pointwise_backward_np(dh, dc_next, acts, c_prev, tanh_c)
    eps = 1e-6
    for idx in itertools.product(*map(range, z.shape)):
        zp, zm = z.copy(), z.copy()
        zp[idx] += eps
        zm[idx] -= eps
        assert abs((scalar(zp, c_prev) - scalar(zm, c_prev)) / (2 * eps) - dz[idx]) < 1e-8
    for idx in itertools.product(*map(range, c_prev.shape)):
        cp, cm = c_prev.copy(), c_prev.copy()
        cp[idx] += eps
        cm[idx] -= eps
        assert abs((scalar(z, cp) - scalar(z, cm)) / (2 * eps) - dcp[idx]) < 1e-8


@needs_numba
def test_lstm_nb_equals_np():
    z, c_prev = _lstm_inputs(3, n=7, h=4)
    a = kernels.lstm_pointwise_forward_np(z, c_prev)
    b = kernels.lstm_pointwise_forward_nb(z, c_prev)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-15)
    rng = np.random.default_rng(4)
    dh, dc = rng.normal(size=c_prev.shape), rng.normal(size=c_prev.shape)
    ga = kernels.lstm_pointwise_backward_np(dh, dc, a[2], c_prev, a[3])
    gb = kernels.lstm_pointwise_backward_nb(dh, dc, a[2], c_prev, a[3])
    for x, y in zip(ga, gb):
        np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-15)


def subset_value_oracle(perf, costs, gain, members):
    k = len(costs)
    total = len(members)
    for j in range(k):
        if j in members:
            continue
        srcs = [perf[i, j] for i in members if i != j]
        if srcs:
            total += min(1.0, max(srcs) + gain * (len(members) - 1))
    return total / k, sum(costs[i] for i in members)


def test_subset_table_np_matches_enumeration():
    rng = np.random.default_rng(5)
    k = 5
    perf, costs = rng.random((k, k)), rng.random(k)
    values, totals = kernels.subset_table_np(perf, costs, 0.02)
    for mask in range(1 << k):
        members = [i for i in range(k) if mask >> i & 1]
        v, c = subset_value_oracle(perf, costs, 0.02, members)
        assert values[mask] == pytest.approx(v, abs=1e-14)
        assert totals[mask] == pytest.approx(c, abs=1e-14)


@needs_numba
def test_subset_table_nb_equals_np():
    rng = np.random.default_rng(6)
    perf, costs = rng.random((8, 8)), rng.random(8)
    for a, b in zip(kernels.subset_table_np(perf, costs, 0.02), kernels.subset_table_nb(perf, costs, 0.02)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_box_iou_known_values():
    a = np.array([[0, 0, 2, 2], [0, 0, 1, 1], [0, 0, 0, 0], [1, 1, 1, 1]], float)
    b = np.array([[1, 1, 3, 3], [2, 2, 3, 3], [0, 0, 0, 0], [2, 2, 2, 2]], float)
    np.testing.assert_allclose(kernels.box_iou_np(a, b), [1 / 7, 0.0, 1.0, 0.0])


@needs_numba
def test_box_iou_nb_equals_np():
    rng = np.random.default_rng(7)
    lo = rng.random((50, 2))
    a = np.hstack([lo, lo + rng.random((50, 2))])
    lo = rng.random((50, 2))
    b = np.hstack([lo, lo + rng.random((50, 2))])
    np.testing.assert_allclose(kernels.box_iou_np(a, b), kernels.box_iou_nb(a, b), rtol=1e-14)
