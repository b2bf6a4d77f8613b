"""Smoothing, normalisation and RBF Gaussian-process regression.

The GP uses a zero prior mean (inputs are z-scored first) and the kernel

    k(x, x') = signal_variance * exp(-(x - x')**2 / (2 * length_scale**2))
               + noise_variance * [x == x']

Hyperparameters maximise the log marginal likelihood in log-space with
multi-start L-BFGS-B and analytic gradients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, optimize

from . import kernels

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 4
DEGENERATE_SIGMA = 1e-12
JITTER = 1e-8
MAX_JITTER = 1e-4
N_RESTARTS = 5
RESTART_SEED = 0

# (low, high) per hyperparameter, in natural units
BOUNDS = {
    "signal_variance": (1e-3, 1e3),
    "length_scale": (0.1, 100.0),
    "noise_variance": (1e-5, 1.0),
}
_PARAM_ORDER = ("signal_variance", "length_scale", "noise_variance")
LOG_BOUNDS = np.log(np.array([BOUNDS[k] for k in _PARAM_ORDER]))


class GprError(RuntimeError):
    pass


@dataclass(frozen=True)
class SmoothedSeries:
    xs: np.ndarray
    ys: np.ndarray
    mu: float
    sigma: float


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    length_scale: float
    noise_variance: float

    def __post_init__(self):
        for name in _PARAM_ORDER:
            lo, hi = BOUNDS[name]
            val = getattr(self, name)
            # small slack: the optimiser returns exp(log-bound) which can round off
            if not (lo * (1 - 1e-9) <= val <= hi * (1 + 1e-9)):
                raise ValueError(f"{name}={val} outside bounds [{lo}, {hi}]")

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        sv, ls, nv = np.exp(np.clip(theta, LOG_BOUNDS[:, 0], LOG_BOUNDS[:, 1]))
        return cls(float(sv), float(ls), float(nv))

    def to_log(self) -> np.ndarray:
        return np.log([self.signal_variance, self.length_scale, self.noise_variance])


@dataclass(frozen=True)
class GprPosterior:
    xs: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    params: KernelParams
    log_marginal_likelihood: float

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def moving_average(ys, omega: int = DEFAULT_WINDOW) -> np.ndarray:
    """Trailing moving average; the first windows shrink to the available prefix."""
    if int(omega) != omega or omega < 1:
        raise ValueError(f"window must be a positive integer, got {omega!r}")
    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise ValueError("moving_average needs a non-empty series")
    return kernels.trailing_mean(ys, int(omega))


def normalize(ys):
    """Z-score with the population standard deviation.

    Returns ``(zs, mu, sigma)``; a constant series maps to zeros.
    """
    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise ValueError("normalize needs a non-empty series")
    mu = float(ys.mean())
    sigma = float(ys.std())
    if sigma < DEGENERATE_SIGMA:
        return np.zeros_like(ys), mu, sigma
    return (ys - mu) / sigma, mu, sigma


def smooth(ys, omega: int = DEFAULT_WINDOW, xs=None) -> SmoothedSeries:
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.arange(1, ys.size + 1, dtype=np.float64) if xs is None else np.asarray(xs, dtype=np.float64)
    zs, mu, sigma = normalize(moving_average(ys, omega))
    return SmoothedSeries(xs=xs, ys=zs, mu=mu, sigma=sigma)


def kernel_matrix(xa, xb, params: KernelParams, *, same: bool = False) -> np.ndarray:
    k = params.signal_variance * kernels.rbf_gram(xa, xb, params.length_scale)
    if same:
        k[np.diag_indices_from(k)] += params.noise_variance
    return k


def _factor(k: np.ndarray):
    jitter = JITTER
    eye = np.eye(k.shape[0])
    while jitter <= MAX_JITTER * (1 + 1e-9):
        try:
            return linalg.cho_factor(k + jitter * eye, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise GprError("Gram matrix is not positive definite even with jitter 1e-4")


def log_marginal_likelihood(theta, xs, ys, eval_gradient: bool = False):
    """Log marginal likelihood at log-hyperparameters ``theta``.

    ``theta`` is ``log([signal_variance, length_scale, noise_variance])``.
    """
    sv, ls, nv = np.exp(theta)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    r = kernels.rbf_gram(xs, xs, ls)
    k = sv * r
    k[np.diag_indices_from(k)] += nv
    (chol, lower), _ = _factor(k)
    alpha = linalg.cho_solve((chol, lower), ys, check_finite=False)
    n = ys.size
    lml = -0.5 * ys @ alpha - np.log(np.diag(chol)).sum() - 0.5 * n * math.log(2 * math.pi)
    if not eval_gradient:
        return float(lml)
    inv_lower, info = linalg.lapack.dpotri(chol, lower=1)
    if info != 0:
        raise GprError(f"dpotri failed with info={info}")
    s_r, s_rd2 = kernels.rbf_grad_sums(xs, alpha, inv_lower, ls)
    trace_w = alpha @ alpha - np.trace(inv_lower)
    grad = 0.5 * np.array([sv * s_r, sv * s_rd2 / ls**2, nv * trace_w])
    return float(lml), grad


def _starts(n_restarts: int, seed: int) -> np.ndarray:
    centre = LOG_BOUNDS.mean(axis=1)
    # a data-scale start: unit signal, moderate length scale, small noise
    first = np.log([1.0, 5.0, 0.1])
    rng = np.random.default_rng(seed)
    extra = rng.uniform(LOG_BOUNDS[:, 0], LOG_BOUNDS[:, 1], size=(max(n_restarts - 2, 0), 3))
    return np.vstack([first, centre, extra])[:n_restarts]


def optimize_hyperparameters(xs, ys, n_restarts: int = N_RESTARTS, seed: int = RESTART_SEED):
    def objective(theta):
        try:
            lml, grad = log_marginal_likelihood(theta, xs, ys, eval_gradient=True)
        except GprError:
            return np.inf, np.zeros(3)
        return -lml, -grad

    best_theta, best_val = None, np.inf
    for start in _starts(n_restarts, seed):
        res = optimize.minimize(objective, start, jac=True, method="L-BFGS-B", bounds=LOG_BOUNDS)
        if res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)
    if best_theta is None:
        raise GprError("hyperparameter optimisation failed from every start")
    return KernelParams.from_log(best_theta), -best_val


def posterior(xs, ys, params: KernelParams, query) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent-function variance at ``query``."""
    k = kernel_matrix(xs, xs, params, same=True)
    (chol, lower), _ = _factor(k)
    alpha = linalg.cho_solve((chol, lower), ys, check_finite=False)
    ks = kernel_matrix(xs, query, params)
    mean = ks.T @ alpha
    v = linalg.solve_triangular(chol, ks, lower=True, check_finite=False)
    var = params.signal_variance - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def fit_gpr(xs, ys, query=None, *, n_restarts: int = N_RESTARTS, seed: int = RESTART_SEED) -> GprPosterior:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    query = xs if query is None else np.asarray(query, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError("fit_gpr needs matching 1-D xs, ys with at least 2 points")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys)) and np.all(np.isfinite(query))):
        raise ValueError("fit_gpr inputs must be finite")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    return _fit_cached(xs.tobytes(), ys.tobytes(), query.tobytes(), n_restarts, seed)


@lru_cache(maxsize=256)
def _fit_cached(xb: bytes, yb: bytes, qb: bytes, n_restarts: int, seed: int) -> GprPosterior:
    xs, ys, query = (np.frombuffer(b, dtype=np.float64) for b in (xb, yb, qb))
    params, lml = optimize_hyperparameters(xs, ys, n_restarts, seed)
    mean, var = posterior(xs, ys, params, query)
    log.debug("gpr fit n=%d params=%s lml=%.6f", xs.size, params, lml)
    return GprPosterior(xs=query.copy(), mean=mean, variance=var, params=params, log_marginal_likelihood=lml)


def support_interval(post: GprPosterior, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper band ``mean -/+ z * std`` at every query point."""
    half = z * post.std
    return post.mean - half, post.mean + half
