"""Monte-Carlo hypervolume-improvement acquisitions and their maximizer.

Both estimators average the hypervolume improvement over joint posterior
draws generated from scrambled-Sobol normal base samples that are frozen
when the acquisition is built, so the surface is deterministic while it
is being maximized.

* :class:`QEHVI` measures improvement over a fixed front (the observed values).
* :class:`NEHVI` draws the front too: for draw ``i`` the front is the set of
  sampled function values at the already-observed designs, drawn jointly
  with the candidates.

Candidates are passed as arrays of shape ``(B, q, d)``; the result has shape ``(B,)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm, qmc

from .errors import InvalidConfig, InvalidInput
from .gp import jittered_cholesky
from .pareto import StaircaseFronts, hvi

# memory cap for (draws x candidates x front size) work arrays
_WORK_ELEMS = 4_000_000


@dataclass(frozen=True)
class AcquisitionConfig:
    n_mc_samples: int = 128
    batch_size: int = 1
    n_restarts: int = 10
    raw_candidates: int = 512
    seed: int = 0
    step0: float = 0.1
    min_step: float = 1e-3
    max_iters: int = 60
    max_directions: int = 32

    def validate(self) -> "AcquisitionConfig":
        if self.n_mc_samples < 16:
            raise InvalidConfig("n_mc_samples must be at least 16")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be at least 1")
        if self.n_restarts < 1 or self.raw_candidates < 1:
            raise InvalidConfig("n_restarts and raw_candidates must be at least 1")
        return self


def sobol_candidates(n: int, d: int, seed: int | None = 0, scramble: bool = True) -> np.ndarray:
    """First ``n`` points of a Sobol sequence in ``[0, 1)^d``.

    Scrambled sequences (Owen scrambling seeded by ``seed``) start at their
    first point. Unscrambled sequences skip the all-zero origin, so the first
    returned point is ``(0.5, ..., 0.5)``.
    """
    if d < 1:
        raise InvalidInput("dimension must be at least 1")
    if n < 0:
        raise InvalidInput("n must be nonnegative")
    eng = qmc.Sobol(d, scramble=scramble, seed=seed)
    if not scramble:
        eng.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two n
        return eng.random(n)


def normal_base_samples(n: int, d: int, seed: int) -> np.ndarray:
    u = sobol_candidates(n, d, seed)
    return norm.ppf(np.clip(u, 1e-10, 1 - 1e-10))


def _chunks(B: int, per_item: int):
    step = max(1, _WORK_ELEMS // max(per_item, 1))
    for s in range(0, B, step):
        yield slice(s, min(B, s + step))


def _as_batches(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, None, :]
    elif X.ndim == 2:
        X = X[:, None, :]
    return X


def _set_hvi(draws: np.ndarray, fronts: Sequence[np.ndarray], r) -> np.ndarray:
    # draws (N, q, T); exact per-draw HVI of a q-point set, used when q > 1
    return np.array([hvi(draws[i], fronts[i], r) for i in range(draws.shape[0])])


class QEHVI:
    def __init__(self, models, front, r, cfg: AcquisitionConfig):
        self.models = list(models)
        self.front = np.asarray(front, dtype=float).reshape(-1, len(self.models))
        self.r = np.asarray(r, dtype=float)
        self.cfg = cfg.validate()
        T, q, N = len(self.models), cfg.batch_size, cfg.n_mc_samples
        self.base = normal_base_samples(N, T * q, cfg.seed).reshape(N, T, q)
        self._stair = StaircaseFronts(self.front[None] if self.front.size else np.tile(self.r, (1, 1, 1)), self.r)

    def __call__(self, X) -> np.ndarray:
        X = _as_batches(X)
        B, q, d = X.shape
        if q != self.cfg.batch_size:
            raise InvalidInput(f"expected batches of {self.cfg.batch_size} points, got {q}")
        if q == 1:
            flat = X[:, 0, :]
            out = np.empty(B)
            for sl in _chunks(B, self.cfg.n_mc_samples * max(self.front.shape[0], 1)):
                f = np.stack(
                    [
                        mu[None, :] + np.sqrt(var)[None, :] * self.base[:, t, 0][:, None]
                        for t, (mu, var) in enumerate(m.predict(flat[sl]) for m in self.models)
                    ],
                    axis=-1,
                )
                out[sl] = self._stair.hvi(f).mean(axis=0)
            return out
        out = np.empty(B)
        fronts = [self.front] * self.cfg.n_mc_samples
        for b in range(B):
            f = []
            for t, m in enumerate(self.models):
                mu, cov = m.predict_cov(X[b])
                L, _ = jittered_cholesky(cov)
                f.append(mu[None, :] + self.base[:, t, :] @ L.T)
            out[b] = _set_hvi(np.stack(f, axis=-1), fronts, self.r).mean()
        return out


class NEHVI:
    def __init__(self, models, X_observed, r, cfg: AcquisitionConfig):
        self.models = list(models)
        self.Xo = np.atleast_2d(np.asarray(X_observed, dtype=float))
        self.r = np.asarray(r, dtype=float)
        self.cfg = cfg.validate()
        T, q, N = len(self.models), cfg.batch_size, cfg.n_mc_samples
        n = self.Xo.shape[0]
        z = normal_base_samples(N, T * (n + q), cfg.seed).reshape(N, T, n + q)
        self.z_obs, self.z_cand = z[:, :, :n], z[:, :, n:]
        self.chol = []
        f_obs = np.empty((N, n, T))
        for t, m in enumerate(self.models):
            mu, cov = m.predict_cov(self.Xo)
            L, _ = jittered_cholesky(cov)
            self.chol.append(L)
            f_obs[:, :, t] = mu[None, :] + self.z_obs[:, t, :] @ L.T
        self.f_obs = f_obs
        # models exposing predict_cross get one shared kernel evaluation per call
        self._obs_args = []
        for m in self.models:
            if hasattr(m, "predict_cross"):
                Xo = m.X if np.array_equal(m.X, self.Xo) else self.Xo
                self._obs_args.append((Xo, m.whitened(Xo)))
            else:
                self._obs_args.append(None)
        # per-draw fronts are fixed for the lifetime of this acquisition
        self._stair = StaircaseFronts(f_obs, self.r)

    def __call__(self, X) -> np.ndarray:
        X = _as_batches(X)
        B, q, d = X.shape
        if q != self.cfg.batch_size:
            raise InvalidInput(f"expected batches of {self.cfg.batch_size} points, got {q}")
        if q == 1:
            return self._single(X[:, 0, :])
        return self._joint(X)

    def _single(self, Xc: np.ndarray) -> np.ndarray:
        N, n = self.cfg.n_mc_samples, self.Xo.shape[0]
        out = np.empty(Xc.shape[0])
        for sl in _chunks(Xc.shape[0], N * n):
            f = []
            for t, m in enumerate(self.models):
                if self._obs_args[t] is not None:
                    mu, var, cross = m.predict_cross(Xc[sl], *self._obs_args[t])
                else:
                    mu, var = m.predict(Xc[sl])
                    cross = m.cross_cov(self.Xo, Xc[sl])
                a = solve_triangular(self.chol[t], cross, lower=True, check_finite=False)
                cond = np.sqrt(np.maximum(var - np.sum(a * a, axis=0), 0.0))
                f.append(mu[None, :] + self.z_obs[:, t, :] @ a + cond[None, :] * self.z_cand[:, t, 0][:, None])
            out[sl] = self._stair.hvi(np.stack(f, axis=-1)).mean(axis=0)
        return out

    def _joint(self, X: np.ndarray) -> np.ndarray:
        """Reference path: full joint posterior over observed and candidate points."""
        N, n = self.cfg.n_mc_samples, self.Xo.shape[0]
        z = np.concatenate([self.z_obs, self.z_cand], axis=-1)
        out = np.empty(X.shape[0])
        for b in range(X.shape[0]):
            pts = np.vstack([self.Xo, X[b]])
            f = []
            for t, m in enumerate(self.models):
                mu, cov = m.predict_cov(pts)
                L, _ = jittered_cholesky(cov)
                f.append(mu[None, :] + z[:, t, :] @ L.T)
            f = np.stack(f, axis=-1)
            out[b] = _set_hvi(f[:, n:, :], [f[i, :n, :] for i in range(N)], self.r).mean()
        return out


def _seed_from(rng: np.random.Generator | int | None) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    rng = np.random.default_rng() if rng is None else rng
    return int(rng.integers(2**31 - 1))


def qehvi(models, X_cand, front, r, cfg: AcquisitionConfig, rng=None) -> float:
    """MC estimate of the expected HVI of the ``q`` points ``X_cand`` over ``front``."""
    acq = QEHVI(models, front, r, _with_seed(cfg, rng, len(np.atleast_2d(X_cand))))
    return float(acq(np.atleast_2d(X_cand)[None])[0])


def nehvi(models, X_cand, X_observed, r, cfg: AcquisitionConfig, rng=None) -> float:
    """MC estimate of the noisy expected HVI of ``X_cand`` given the designs ``X_observed``."""
    acq = NEHVI(models, X_observed, r, _with_seed(cfg, rng, len(np.atleast_2d(X_cand))))
    return float(acq(np.atleast_2d(X_cand)[None])[0])


def _with_seed(cfg: AcquisitionConfig, rng, q: int) -> AcquisitionConfig:
    seed = cfg.seed if rng is None else _seed_from(rng)
    return replace(cfg, seed=seed, batch_size=q)


def optimize_acquisition(
    acq: Callable[[np.ndarray], np.ndarray],
    d: int,
    cfg: AcquisitionConfig,
    rng: np.random.Generator | int | None = None,
    extra_starts: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Maximize ``acq`` over batches of ``q`` points in the unit cube.

    Raw Sobol probes (plus any ``extra_starts``, shape ``(m, q, d)``) are
    scored, the best ``n_restarts`` seed a lockstep pattern search. Each
    iteration polls ``+-step`` along up to ``max_directions`` coordinates
    (a random subset when the dimension is larger), moves to the best
    improving poll and doubles the step, or halves it when nothing improves.
    Returns the best batch seen and its value.
    """
    q = cfg.batch_size
    D = d * q
    seed = _seed_from(rng)
    gen = np.random.default_rng(seed)
    raw = sobol_candidates(cfg.raw_candidates, D, seed).reshape(-1, q, d)
    if extra_starts is not None and len(extra_starts):
        raw = np.concatenate([raw, np.clip(np.asarray(extra_starts, dtype=float).reshape(-1, q, d), 0, 1)])
    vals = np.asarray(acq(raw), dtype=float)
    order = np.lexsort((np.arange(vals.size), -vals))
    starts = order[: cfg.n_restarts]
    pos = raw[starts].reshape(len(starts), D).copy()
    cur = vals[starts].copy()
    step = np.full(len(starts), cfg.step0)
    best_x, best_v = raw[order[0]].reshape(D).copy(), float(vals[order[0]])
    for _ in range(cfg.max_iters):
        active = np.flatnonzero(step >= cfg.min_step)
        if active.size == 0:
            break
        n_dir = min(D, cfg.max_directions)
        polls, owner = [], []
        for i in active:
            coords = np.arange(D) if n_dir == D else np.sort(gen.choice(D, n_dir, replace=False))
            P = np.repeat(pos[i][None], 2 * n_dir, axis=0)
            P[np.arange(n_dir), coords] += step[i]
            P[n_dir + np.arange(n_dir), coords] -= step[i]
            polls.append(np.clip(P, 0.0, 1.0))
            owner.append(np.full(2 * n_dir, i))
        P = np.concatenate(polls)
        owner = np.concatenate(owner)
        pv = np.asarray(acq(P.reshape(-1, q, d)), dtype=float)
        for i in active:
            sel = np.flatnonzero(owner == i)
            j = sel[np.argmax(pv[sel])]
            if pv[j] > cur[i]:
                pos[i], cur[i] = P[j], pv[j]
                step[i] = min(2.0 * step[i], 0.5)
            else:
                step[i] *= 0.5
    cand = np.vstack([best_x[None], pos])
    cval = np.concatenate([[best_v], cur])
    # deterministic arg-max: highest value, then lexicographically smallest point
    keys = tuple(cand[:, j] for j in range(D - 1, -1, -1)) + (-cval,)
    k = np.lexsort(keys)[0]
    return cand[k].reshape(q, d), float(cval[k])
