"""numba-compiled kernels; same signatures as ``_numpy``."""

import numpy as np
from numba import njit

DEGENERATE_UNION = 1e-12


@njit(cache=True)
def _trailing_mean(ys, omega):
    n = ys.shape[0]
    out = np.empty(n)
    acc = 0.0
    for t in range(n):
        acc += ys[t]
        if t >= omega:
            acc -= ys[t - omega]
        out[t] = acc / min(t + 1, omega)
    return out


def trailing_mean(ys, omega):
    return _trailing_mean(np.ascontiguousarray(ys, dtype=np.float64), int(omega))


@njit(cache=True)
def _rbf_gram(xa, xb, length_scale):
    out = np.empty((xa.shape[0], xb.shape[0]))
    inv = 0.5 / (length_scale * length_scale)
    for i in range(xa.shape[0]):
        for j in range(xb.shape[0]):
            d = xa[i] - xb[j]
            out[i, j] = np.exp(-d * d * inv)
    return out


def rbf_gram(xa, xb, length_scale):
    return _rbf_gram(np.ascontiguousarray(xa, dtype=np.float64),
                     np.ascontiguousarray(xb, dtype=np.float64), float(length_scale))


@njit(cache=True)
def _union_sorted(lo, hi, order):
    total = 0.0
    cur_lo = lo[order[0]]
    cur_hi = hi[order[0]]
    for k in range(1, order.shape[0]):
        a = lo[order[k]]
        b = hi[order[k]]
        if a <= cur_hi:
            if b > cur_hi:
                cur_hi = b
        else:
            total += cur_hi - cur_lo
            cur_lo = a
            cur_hi = b
    return total + (cur_hi - cur_lo)


@njit(cache=True)
def _union_width(lo, hi):
    return _union_sorted(lo, hi, np.argsort(lo, kind="mergesort"))


def union_width(lo, hi):
    lo = np.ascontiguousarray(lo, dtype=np.float64)
    return float(_union_width(lo, np.ascontiguousarray(hi, dtype=np.float64)))


@njit(cache=True)
def _overlap_ratio(lo, hi):
    n, g = lo.shape
    out = np.empty(g)
    col_lo = np.empty(n)
    col_hi = np.empty(n)
    for j in range(g):
        max_lo = -np.inf
        min_hi = np.inf
        for i in range(n):
            col_lo[i] = lo[i, j]
            col_hi[i] = hi[i, j]
            if lo[i, j] > max_lo:
                max_lo = lo[i, j]
            if hi[i, j] < min_hi:
                min_hi = hi[i, j]
        inter = min_hi - max_lo
        if inter < 0.0:
            inter = 0.0
        union = _union_sorted(col_lo, col_hi, np.argsort(col_lo, kind="mergesort"))
        out[j] = 1.0 if union < DEGENERATE_UNION else inter / union
    return out


def overlap_ratio(lo, hi):
    return _overlap_ratio(np.ascontiguousarray(lo, dtype=np.float64),
                          np.ascontiguousarray(hi, dtype=np.float64))


@njit(cache=True)
def _rbf_grad_sums(xs, alpha, inv_lower, length_scale):
    n = xs.shape[0]
    inv2 = 0.5 / (length_scale * length_scale)
    s_r = 0.0
    s_rd2 = 0.0
    for i in range(n):
        s_r += alpha[i] * alpha[i] - inv_lower[i, i]
        for j in range(i):
            d = xs[i] - xs[j]
            d2 = d * d
            wr = 2.0 * (alpha[i] * alpha[j] - inv_lower[i, j]) * np.exp(-d2 * inv2)
            s_r += wr
            s_rd2 += wr * d2
    return s_r, s_rd2


def rbf_grad_sums(xs, alpha, inv_lower, length_scale):
    s_r, s_rd2 = _rbf_grad_sums(np.ascontiguousarray(xs, dtype=np.float64),
                                np.ascontiguousarray(alpha, dtype=np.float64),
                                np.asarray(inv_lower, dtype=np.float64), float(length_scale))
    return float(s_r), float(s_rd2)
