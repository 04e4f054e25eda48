"""Gaussian-process surrogate with an ARD Matern-5/2 kernel.

Inputs live in the unit cube (see :class:`InputNormalizer`), targets are
standardized per objective. Hyperparameters are fitted by maximizing the
log marginal likelihood with multi-start L-BFGS-B in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import InvalidData, NumericalError

SQRT5 = math.sqrt(5.0)
NOISE_FLOOR = 1e-8
SIGNAL_FLOOR = 1e-6
JITTER_START = 1e-10
JITTER_MAX = 1e-4

LOG_BOUNDS_LENGTHSCALE = (math.log(1e-2), math.log(1e3))
LOG_BOUNDS_SIGNAL = (math.log(SIGNAL_FLOOR), math.log(1e2))
LOG_BOUNDS_NOISE = (math.log(NOISE_FLOOR), math.log(1.0))


class InputNormalizer:
    """Min-max map from box bounds to the unit cube."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise InvalidData("upper bounds must exceed lower bounds")

    def encode(self, X):
        return (np.asarray(X, dtype=float) - self.lower) / (self.upper - self.lower)

    def decode(self, U):
        return self.lower + np.asarray(U, dtype=float) * (self.upper - self.lower)


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters on the standardized target scale."""

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.log(self.lengthscales), [math.log(self.signal_variance), math.log(self.noise_variance)]]
        )

    @classmethod
    def from_vector(cls, theta) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[:-2]), float(np.exp(theta[-2])), float(np.exp(theta[-1])))


def _scaled_sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    a2 = np.sum(A * A, axis=1)
    b2 = np.sum(B * B, axis=1)
    return np.maximum(a2[:, None] + b2[None, :] - 2.0 * A @ B.T, 0.0)


def matern52(X1, X2, lengthscales, signal_variance) -> np.ndarray:
    ls = np.asarray(lengthscales, dtype=float)
    r = np.sqrt(_scaled_sqdist(np.asarray(X1) / ls, np.asarray(X2) / ls))
    return signal_variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def jittered_cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding diagonal jitter 1e-10 .. 1e-4 (x10 per retry) on failure."""
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    scale = max(float(np.mean(np.abs(np.diag(K)))), 1e-300)
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            Kj = K + jitter * scale * np.eye(K.shape[0])
            return cholesky(Kj, lower=True, check_finite=False), jitter * scale
        except LinAlgError:
            jitter *= 10.0
    raise NumericalError("covariance matrix not positive definite even with maximal jitter")


class GpModel:
    """A fitted (or hand-parameterized) GP; immutable after construction."""

    def __init__(self, X, y, params: KernelParams, standardize: bool = True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise InvalidData("training data must be finite")
        if X.shape[0] != y.size:
            raise InvalidData("X and y have different lengths")
        self.X = X
        self.params = params
        if standardize:
            self.y_mean = float(y.mean())
            std = float(y.std())
            self.y_scale = std if std > 0 else 1.0
        else:
            self.y_mean, self.y_scale = 0.0, 1.0
        self.y_raw = y
        self.y = (y - self.y_mean) / self.y_scale
        K = self._k(X, X) + params.noise_variance * np.eye(X.shape[0])
        self.chol, self.jitter = jittered_cholesky(K)
        self.alpha = cho_solve((self.chol, True), self.y, check_finite=False)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def noise_variance(self) -> float:
        """Observation-noise variance in target units."""
        return self.params.noise_variance * self.y_scale**2

    @property
    def prior_variance(self) -> float:
        return self.params.signal_variance * self.y_scale**2

    def _k(self, A, B):
        return matern52(A, B, self.params.lengthscales, self.params.signal_variance)

    def _solve_l(self, B):
        return solve_triangular(self.chol, B, lower=True, check_finite=False)

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean and variance at each row of ``Xq`` (target units)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Kx = self._k(self.X, Xq)
        V = self._solve_l(Kx)
        mean = Kx.T @ self.alpha
        var = np.maximum(self.params.signal_variance - np.sum(V * V, axis=0), 0.0)
        return self.y_mean + self.y_scale * mean, var * self.y_scale**2

    def predict_cov(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Kx = self._k(self.X, Xq)
        V = self._solve_l(Kx)
        mean = Kx.T @ self.alpha
        cov = self._k(Xq, Xq) - V.T @ V
        cov = 0.5 * (cov + cov.T)
        return self.y_mean + self.y_scale * mean, cov * self.y_scale**2

    def cross_cov(self, X1, X2) -> np.ndarray:
        V1 = self._solve_l(self._k(self.X, X1))
        V2 = self._solve_l(self._k(self.X, X2))
        return (self._k(X1, X2) - V1.T @ V2) * self.y_scale**2

    def whitened(self, Xo) -> np.ndarray:
        """``L^{-1} k(X, Xo)``, reusable across :meth:`predict_cross` calls."""
        return self._solve_l(self._k(self.X, np.atleast_2d(Xo)))

    def predict_cross(self, Xq, Xo, Vo=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean and variance at ``Xq`` plus the posterior covariance ``cov(f(Xo), f(Xq))``.

        Shares one kernel evaluation against the training set; when ``Xo`` is
        the training set itself the prior cross term is reused as well.
        """
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Kx = self._k(self.X, Xq)
        V = self._solve_l(Kx)
        Vo = self.whitened(Xo) if Vo is None else Vo
        Koq = Kx if Xo is self.X else self._k(np.atleast_2d(Xo), Xq)
        mean = self.y_mean + self.y_scale * (Kx.T @ self.alpha)
        var = np.maximum(self.params.signal_variance - np.sum(V * V, axis=0), 0.0) * self.y_scale**2
        return mean, var, (Koq - Vo.T @ V) * self.y_scale**2

    def log_marginal_likelihood(self) -> float:
        n = self.y.size
        return float(
            -0.5 * self.y @ self.alpha - np.sum(np.log(np.diag(self.chol))) - 0.5 * n * math.log(2 * math.pi)
        )


def posterior(model: GpModel, x) -> tuple[float, float]:
    mean, var = model.predict(np.atleast_2d(x))
    return float(mean[0]), float(var[0])


def neg_lml_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient in log-hyperparameter space."""
    n, d = X.shape
    ls = np.exp(theta[:d])
    s = math.exp(theta[d])
    noise = math.exp(theta[d + 1])
    Xs = X / ls
    r = np.sqrt(_scaled_sqdist(Xs, Xs))
    e = np.exp(-SQRT5 * r)
    Kf = s * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    K = Kf + noise * np.eye(n)
    try:
        L = cholesky(K, lower=True, check_finite=False)
    except LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), y, check_finite=False)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi)
    Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv
    # d k / d log(l_d) = s (5/3)(1 + sqrt5 r) e^{-sqrt5 r} (dx_d / l_d)^2
    H = W * (s * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e)
    h = H.sum(axis=1)
    g_ls = 0.5 * 2.0 * (h @ (Xs * Xs) - np.sum(Xs * (H @ Xs), axis=0))
    g_s = 0.5 * np.sum(W * Kf)
    g_n = 0.5 * noise * np.trace(W)
    grad = np.concatenate([g_ls, [g_s, g_n]])
    return float(nll), -grad


def _bounds(d: int):
    return [LOG_BOUNDS_LENGTHSCALE] * d + [LOG_BOUNDS_SIGNAL, LOG_BOUNDS_NOISE]


def sample_initial_params(d: int, rng: np.random.Generator) -> np.ndarray:
    base = 0.5 * math.log(d)
    return np.concatenate(
        [
            rng.uniform(base + math.log(0.1), base + math.log(2.0), size=d),
            [rng.uniform(math.log(0.5), math.log(2.0)), rng.uniform(math.log(1e-6), math.log(1e-2))],
        ]
    )


def fit(
    X,
    y,
    rng: np.random.Generator | None = None,
    n_restarts: int = 8,
    init_params: KernelParams | None = None,
    maxiter: int = 200,
) -> GpModel:
    """Maximum-marginal-likelihood fit from ``n_restarts`` sampled starts.

    ``init_params`` (e.g. the previous BO iteration's optimum) is tried as an
    extra start. The returned model's likelihood is never below that of any start.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise InvalidData("training data must be finite")
    if X.shape[0] != y.size:
        raise InvalidData("X and y have different lengths")
    if y.size < 2:
        raise InvalidData("at least two observations are needed to fit a GP")
    rng = np.random.default_rng() if rng is None else rng
    d = X.shape[1]
    std = y.std()
    ys = (y - y.mean()) / (std if std > 0 else 1.0)
    bounds = _bounds(d)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [sample_initial_params(d, rng) for _ in range(n_restarts)]
    if init_params is not None:
        starts.append(init_params.to_vector())
    best_theta, best_val = None, np.inf
    for theta0 in starts:
        theta0 = np.clip(theta0, lo, hi)
        f0, _ = neg_lml_and_grad(theta0, X, ys)
        res = minimize(
            neg_lml_and_grad, theta0, args=(X, ys), jac=True, method="L-BFGS-B",
            bounds=bounds, options={"maxiter": maxiter},
        )
        theta, val = (res.x, res.fun) if res.fun <= f0 else (theta0, f0)
        if np.isfinite(val) and val < best_val:
            best_theta, best_val = theta, val
    if best_theta is None or best_val >= 1e25:
        raise NumericalError("no restart produced a factorizable covariance")
    return GpModel(X, y, KernelParams.from_vector(best_theta))


def sample_joint(
    model: GpModel,
    points,
    n_samples: int,
    rng: np.random.Generator | None = None,
    base: np.ndarray | None = None,
) -> np.ndarray:
    """Joint posterior draws ``(n_samples, n_points)`` of the latent function.

    ``base`` supplies the standard-normal draws directly (e.g. quasi-MC);
    otherwise they come from ``rng``.
    """
    mean, cov = model.predict_cov(points)
    L, _ = jittered_cholesky(cov)
    if base is None:
        rng = np.random.default_rng() if rng is None else rng
        base = rng.standard_normal((n_samples, mean.size))
    return mean[None, :] + base @ L.T
