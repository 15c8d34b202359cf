"""Hot numeric kernels.

Every kernel exists twice: a ``*_nb`` version compiled with numba and a
``*_np`` version in plain numpy/Python.  The public name is bound to one of them
according to ``mlink._accel.USE_NUMBA``.  Both must agree to floating-point
round-off; ``tests/test_kernels.py`` holds them to that.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "edit_distance",
    "lstm_pointwise_forward",
    "lstm_pointwise_backward",
    "subset_table",
    "box_iou",
    "USE_NUMBA",
]


# --------------------------------------------------------------------------
# Levenshtein distance over integer token arrays
# --------------------------------------------------------------------------


def edit_distance_np(ref, hyp):
    ref = np.asarray(ref, dtype=np.int64)
    hyp = np.asarray(hyp, dtype=np.int64)
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        r = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if r == hyp[j - 1] else 1)
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[m]


@njit
def edit_distance_nb(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, n + 1):
        cur[0] = i
        r = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1]
            if r != hyp[j - 1]:
                sub += 1
            best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            if sub < best:
                best = sub
            cur[j] = best
        for j in range(m + 1):
            prev[j] = cur[j]
    return prev[m]


def _edit_distance_dispatch(ref, hyp):
    return int(
        edit_distance_nb(np.asarray(ref, dtype=np.int64), np.asarray(hyp, dtype=np.int64))
    )


# --------------------------------------------------------------------------
# LSTM cell pointwise part (gate order i, f, g, o)
# --------------------------------------------------------------------------


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_pointwise_forward_np(z, c_prev):
    h = c_prev.shape[1]
    acts = np.empty_like(z)
    acts[:, :h] = _sigmoid_np(z[:, :h])
    acts[:, h : 2 * h] = _sigmoid_np(z[:, h : 2 * h])
    acts[:, 2 * h : 3 * h] = np.tanh(z[:, 2 * h : 3 * h])
    acts[:, 3 * h :] = _sigmoid_np(z[:, 3 * h :])
    i, f, g, o = acts[:, :h], acts[:, h : 2 * h], acts[:, 2 * h : 3 * h], acts[:, 3 * h :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    return o * tanh_c, c, acts, tanh_c


def lstm_pointwise_backward_np(dh, dc_next, acts, c_prev, tanh_c):
    h = c_prev.shape[1]
    i, f, g, o = acts[:, :h], acts[:, h : 2 * h], acts[:, 2 * h : 3 * h], acts[:, 3 * h :]
    dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(acts)
    dz[:, :h] = dc * g * i * (1.0 - i)
    dz[:, h : 2 * h] = dc * c_prev * f * (1.0 - f)
    dz[:, 2 * h : 3 * h] = dc * i * (1.0 - g * g)
    dz[:, 3 * h :] = dh * tanh_c * o * (1.0 - o)
    return dz, dc * f


@njit
def _sigmoid_scalar(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    ex = np.exp(x)
    return ex / (1.0 + ex)


@njit
def lstm_pointwise_forward_nb(z, c_prev):
    n, h = c_prev.shape
    acts = np.empty_like(z)
    c = np.empty_like(c_prev)
    tanh_c = np.empty_like(c_prev)
    out = np.empty_like(c_prev)
    for b in range(n):
        for k in range(h):
            i = _sigmoid_scalar(z[b, k])
            f = _sigmoid_scalar(z[b, h + k])
            g = np.tanh(z[b, 2 * h + k])
            o = _sigmoid_scalar(z[b, 3 * h + k])
            acts[b, k] = i
            acts[b, h + k] = f
            acts[b, 2 * h + k] = g
            acts[b, 3 * h + k] = o
            cc = f * c_prev[b, k] + i * g
            tc = np.tanh(cc)
            c[b, k] = cc
            tanh_c[b, k] = tc
            out[b, k] = o * tc
    return out, c, acts, tanh_c


@njit
def lstm_pointwise_backward_nb(dh, dc_next, acts, c_prev, tanh_c):
    n, h = c_prev.shape
    dz = np.empty_like(acts)
    dc_prev = np.empty_like(c_prev)
    for b in range(n):
        for k in range(h):
            i = acts[b, k]
            f = acts[b, h + k]
            g = acts[b, 2 * h + k]
            o = acts[b, 3 * h + k]
            tc = tanh_c[b, k]
            dc = dc_next[b, k] + dh[b, k] * o * (1.0 - tc * tc)
            dz[b, k] = dc * g * i * (1.0 - i)
            dz[b, h + k] = dc * c_prev[b, k] * f * (1.0 - f)
            dz[b, 2 * h + k] = dc * i * (1.0 - g * g)
            dz[b, 3 * h + k] = dh[b, k] * tc * o * (1.0 - o)
            dc_prev[b, k] = dc * f
    return dz, dc_prev


# --------------------------------------------------------------------------
# Objective/cost table over all subsets (simulated ensemble-gain model)
# --------------------------------------------------------------------------


def subset_table_np(perf, costs, gain):
    """Return ``(values, totals)`` indexed by subset bitmask.

    ``perf[i, j]`` is the performance of the link from model i to model j.
    The ensemble over a source set A scores ``min(1, max_i perf[i, j] +
    gain * (|A| - 1))`` on target j.
    """
    perf = np.asarray(perf, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    k = len(costs)
    masks = np.arange(1 << k, dtype=np.int64)
    member = ((masks[:, None] >> np.arange(k)) & 1).astype(bool)
    size = member.sum(axis=1)
    totals = np.zeros(1 << k)
    for i in range(k):
        totals = totals + np.where(member[:, i], costs[i], 0.0)
    bonus = gain * np.maximum(size - 1, 0)
    values = size.astype(np.float64)
    for j in range(k):
        best = np.full(1 << k, -np.inf)
        for i in range(k):
            if i != j:
                best = np.where(member[:, i], np.maximum(best, perf[i, j]), best)
        pj = np.where(np.isfinite(best), np.minimum(1.0, best + bonus), 0.0)
        values = values + np.where(member[:, j], 0.0, pj)
    return values / k, totals


@njit
def subset_table_nb(perf, costs, gain):
    k = costs.shape[0]
    n = 1 << k
    values = np.empty(n)
    totals = np.empty(n)
    for mask in range(n):
        size = 0
        total = 0.0
        for i in range(k):
            if (mask >> i) & 1:
                size += 1
                total += costs[i]
        bonus = gain * max(size - 1, 0)
        acc = float(size)
        for j in range(k):
            if (mask >> j) & 1:
                continue
            best = -np.inf
            for i in range(k):
                if i != j and (mask >> i) & 1:
                    if perf[i, j] > best:
                        best = perf[i, j]
            if best > -np.inf:
                acc += min(1.0, best + bonus)
        values[mask] = acc / k
        totals[mask] = total
    return values, totals


def _subset_table_dispatch(perf, costs, gain):
    return subset_table_nb(
        np.ascontiguousarray(perf, dtype=np.float64),
        np.ascontiguousarray(costs, dtype=np.float64),
        float(gain),
    )


# --------------------------------------------------------------------------
# Rowwise IoU of (x1, y1, x2, y2) boxes
# --------------------------------------------------------------------------


def box_iou_np(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a = np.maximum(a[:, 2] - a[:, 0], 0.0) * np.maximum(a[:, 3] - a[:, 1], 0.0)
    area_b = np.maximum(b[:, 2] - b[:, 0], 0.0) * np.maximum(b[:, 3] - b[:, 1], 0.0)
    iw = np.maximum(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0.0)
    ih = np.maximum(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0.0)
    inter = iw * ih
    union = area_a + area_b - inter
    same = np.all(a == b, axis=1).astype(np.float64)
    safe = np.where(union > 0, union, 1.0)
    return np.where(union > 0, inter / safe, same)


@njit
def box_iou_nb(a, b):
    n = a.shape[0]
    out = np.empty(n)
    for r in range(n):
        area_a = max(a[r, 2] - a[r, 0], 0.0) * max(a[r, 3] - a[r, 1], 0.0)
        area_b = max(b[r, 2] - b[r, 0], 0.0) * max(b[r, 3] - b[r, 1], 0.0)
        iw = max(min(a[r, 2], b[r, 2]) - max(a[r, 0], b[r, 0]), 0.0)
        ih = max(min(a[r, 3], b[r, 3]) - max(a[r, 1], b[r, 1]), 0.0)
        inter = iw * ih
        union = area_a + area_b - inter
        if union > 0:
            out[r] = inter / union
        else:
            same = 1.0
            for c in range(4):
                if a[r, c] != b[r, c]:
                    same = 0.0
            out[r] = same
    return out


def _box_iou_dispatch(a, b):
    return box_iou_nb(
        np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(b, dtype=np.float64)
    )


if USE_NUMBA:
    edit_distance = _edit_distance_dispatch
    lstm_pointwise_forward = lstm_pointwise_forward_nb
    lstm_pointwise_backward = lstm_pointwise_backward_nb
    subset_table = _subset_table_dispatch
    box_iou = _box_iou_dispatch
else:
    edit_distance = edit_distance_np
    lstm_pointwise_forward = lstm_pointwise_forward_np
    lstm_pointwise_backward = lstm_pointwise_backward_np
    subset_table = subset_table_np
    box_iou = box_iou_np
