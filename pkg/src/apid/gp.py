"""Gaussian-process regression with a squared-exponential kernel.

Small, exact implementation sized for surrogate modeling with a few dozen
samples: the gram matrix is Cholesky-factored from scratch whenever data is
added.  Targets can be standardized internally (zero-mean unit-variance)
so the zero-mean prior is sensible for strictly positive objectives;
predictions are returned in the original units.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular


class NotPositiveDefinite(Exception):
    """Gram matrix stayed indefinite after the maximum jitter boosts."""


@dataclass(frozen=True)
class KernelParams:
    sigma_se: float = 1.0
    length_scale: float | np.ndarray = 0.2
    sigma_eps: float = 0.05

    def __post_init__(self):
        ell = np.atleast_1d(np.asarray(self.length_scale, dtype=float))
        if not self.sigma_se > 0:
            raise ValueError("sigma_se must be positive")
        if np.any(ell <= 0):
            raise ValueError("length_scale must be positive")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be non-negative")
        object.__setattr__(self, "length_scale", ell)


def se_kernel(kernel: KernelParams, x, y) -> float:
    """Covariance sigma_se^2 * exp(-||(x - y)/ell||^2 / 2)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("kernel inputs must have equal dimension")
    d = (x - y) / kernel.length_scale
    return float(kernel.sigma_se ** 2 * np.exp(-0.5 * np.dot(d, d)))


def _cross_cov(kernel: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sa = A / kernel.length_scale
    sb = B / kernel.length_scale
    d2 = (
        np.sum(sa ** 2, axis=1)[:, None]
        + np.sum(sb ** 2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    np.maximum(d2, 0.0, out=d2)
    return kernel.sigma_se ** 2 * np.exp(-0.5 * d2)


@dataclass(frozen=True)
class GpModel:
    """Immutable fitted model; ``add_sample`` returns a new instance."""

    X: np.ndarray
    Y: np.ndarray
    kernel: KernelParams
    normalize_y: bool
    y_mean: float
    y_std: float
    chol: np.ndarray          # lower Cholesky factor of k(X,X) + sigma_eps^2 I
    alpha: np.ndarray         # solve(K + sigma_eps^2 I, standardized Y)
    jitter: float

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


def fit(X, Y, kernel: KernelParams | None = None,
        normalize_y: bool = True) -> GpModel:
    """Fit the exact GP; raises NotPositiveDefinite for degenerate data."""
    kernel = kernel or KernelParams()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must have the same number of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data must be finite")

    n = X.shape[0]
    if normalize_y and n > 0:
        y_mean = float(np.mean(Y))
        std = float(np.std(Y))
        y_std = std if std > 1e-12 else 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    ys = (Y - y_mean) / y_std

    if n == 0:
        return GpModel(X=X, Y=Y, kernel=kernel, normalize_y=normalize_y,
                       y_mean=y_mean, y_std=y_std,
                       chol=np.zeros((0, 0)), alpha=np.zeros(0), jitter=0.0)

    if kernel.sigma_eps == 0.0 and n > 1:
        # jitter would mask an exactly singular gram; fail loudly instead
        sorted_rows = X[np.lexsort(X.T[::-1])]
        if np.any(np.all(sorted_rows[1:] == sorted_rows[:-1], axis=1)):
            raise NotPositiveDefinite(
                "duplicate training inputs with zero observation noise")
    K = _cross_cov(kernel, X, X)
    K[np.diag_indices_from(K)] += kernel.sigma_eps ** 2
    jitter = 0.0
    boost = 1e-10 * kernel.sigma_se ** 2
    for attempt in range(11):
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter = boost if jitter == 0.0 else 2.0 * jitter
    else:
        raise NotPositiveDefinite(
            "gram matrix not positive definite after max jitter; duplicate "
            "inputs with zero noise or degenerate length scales?"
        )
    alpha = solve_triangular(L.T, solve_triangular(L, ys, lower=True), lower=False)
    return GpModel(X=X, Y=Y, kernel=kernel, normalize_y=normalize_y,
                   y_mean=y_mean, y_std=y_std, chol=L, alpha=alpha,
                   jitter=jitter)


def add_sample(model: GpModel, x, y: float) -> GpModel:
    """Refit on the data plus one observation (cheap at surrogate sizes)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if model.n_samples == 0:
        X = x[None, :]
        Y = np.array([y], dtype=float)
    else:
        X = np.vstack([model.X, x[None, :]])
        Y = np.append(model.Y, float(y))
    return fit(X, Y, model.kernel, normalize_y=model.normalize_y)


def posterior(model: GpModel, x):
    """Predictive mean and variance at one query (d,) or a batch (m, d).

    Variance is the latent-function variance (no observation noise added);
    tiny negative values from rounding are clamped to zero.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    Xq = np.atleast_2d(x)
    prior_var = model.kernel.sigma_se ** 2
    if model.n_samples == 0:
        mean = np.full(Xq.shape[0], model.y_mean)
        var = np.full(Xq.shape[0], prior_var) * model.y_std ** 2
    else:
        if Xq.shape[1] != model.X.shape[1]:
            raise ValueError("query dimension does not match training data")
        Ks = _cross_cov(model.kernel, model.X, Xq)       # (n, m)
        mean = model.y_mean + model.y_std * (Ks.T @ model.alpha)
        V = solve_triangular(model.chol, Ks, lower=True)  # (n, m)
        var = prior_var - np.sum(V * V, axis=0)
        var[var < 0.0] = 0.0
        var = var * model.y_std ** 2
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def log_marginal_likelihood(model: GpModel) -> float:
    """Evidence of the (standardized) observations under the kernel."""
    n = model.n_samples
    if n == 0:
        return 0.0
    ys = (model.Y - model.y_mean) / model.y_std
    return float(
        -0.5 * ys @ model.alpha
        - np.sum(np.log(np.diag(model.chol)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def select_length_scale(X, Y, kernel: KernelParams,
                        grid=(0.1, 0.2, 0.4)) -> KernelParams:
    """Pick the grid length scale maximizing the marginal likelihood."""
    best = None
    best_lml = -np.inf
    for ell in grid:
        cand = replace(kernel, length_scale=ell)
        try:
            lml = log_marginal_likelihood(fit(X, Y, cand))
        except NotPositiveDefinite:
            continue
        if lml > best_lml:
            best, best_lml = cand, lml
    if best is None:
        raise NotPositiveDefinite("no grid length scale gave a valid fit")
    return best
