"""Pure-numpy reference kernels."""

import numpy as np

DEGENERATE_UNION = 1e-12


def trailing_mean(ys, omega):
    ys = np.asarray(ys, dtype=np.float64)
    csum = np.concatenate(([0.0], np.cumsum(ys)))
    idx = np.arange(1, ys.size + 1)
    start = np.maximum(idx - omega, 0)
    return (csum[idx] - csum[start]) / (idx - start)


def rbf_gram(xa, xb, length_scale):
    d = np.subtract.outer(np.asarray(xa, dtype=np.float64), np.asarray(xb, dtype=np.float64))
    return np.exp(-0.5 * (d / length_scale) ** 2)


def union_width(lo, hi):
    order = np.argsort(lo, kind="stable")
    lo = np.asarray(lo, dtype=np.float64)[order]
    hi = np.asarray(hi, dtype=np.float64)[order]
    reach = np.maximum.accumulate(hi)
    prev = np.concatenate(([-np.inf], reach[:-1]))
    return float(np.sum(np.maximum(0.0, hi - np.maximum(lo, prev))))


def overlap_ratio(lo, hi):
    """Column-wise intersection/union width ratio of n stacked intervals.

    ``lo`` and ``hi`` have shape (n, G); returns shape (G,).
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    inter = np.maximum(0.0, hi.min(axis=0) - lo.max(axis=0))
    order = np.argsort(lo, axis=0, kind="stable")
    slo = np.take_along_axis(lo, order, axis=0)
    shi = np.take_along_axis(hi, order, axis=0)
    reach = np.maximum.accumulate(shi, axis=0)
    prev = np.vstack([np.full((1, lo.shape[1]), -np.inf), reach[:-1]])
    union = np.maximum(0.0, shi - np.maximum(slo, prev)).sum(axis=0)
    out = np.ones(lo.shape[1])
    ok = union >= DEGENERATE_UNION
    out[ok] = inter[ok] / union[ok]
    return out


def rbf_grad_sums(xs, alpha, inv_lower, length_scale):
    """Sums of W*R and W*R*D2, with W = alpha alpha^T - K^-1.

    ``inv_lower`` holds K^-1 in its lower triangle (upper part ignored).
    """
    xs = np.asarray(xs, dtype=np.float64)
    d2 = np.subtract.outer(xs, xs) ** 2
    r = np.exp(-0.5 * d2 / length_scale**2)
    inv = np.tril(inv_lower)
    inv = inv + np.tril(inv, -1).T
    w = np.outer(alpha, alpha) - inv
    wr = w * r
    return float(wr.sum()), float((wr * d2).sum())
