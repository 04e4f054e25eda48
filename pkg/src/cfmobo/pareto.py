"""Dominance, Pareto fronts and exact two-objective hypervolume (maximization)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, Unsupported

LOG_HV_EPS = 1e-12


def dominates(a, b) -> bool:
    """True iff ``a >= b`` componentwise with at least one strict inequality."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInput(f"objective vectors differ in shape: {a.shape} vs {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


def nondominated_mask(Y) -> np.ndarray:
    """Mask of rows not dominated by any other row. Duplicates are all kept."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    ge = np.all(Y[:, None, :] >= Y[None, :, :], axis=-1)
    gt = np.any(Y[:, None, :] > Y[None, :, :], axis=-1)
    return ~np.any(ge & gt, axis=0)


def pareto_front(Y) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return Y[nondominated_mask(Y)]


def _as_front(front, r):
    r = np.asarray(r, dtype=float)
    if r.shape != (2,):
        raise Unsupported("hypervolume is implemented for two objectives only")
    P = np.asarray(front, dtype=float)
    if P.size == 0:
        return np.empty((0, 2)), r
    P = P.reshape(-1, P.shape[-1])
    if P.shape[1] != 2:
        raise Unsupported("hypervolume is implemented for two objectives only")
    return P, r


def hypervolume(front, r) -> float:
    """Exact area dominated by ``front`` above reference ``r``.

    Points below ``r`` are clipped onto it, so they contribute nothing.
    """
    P, r = _as_front(front, r)
    if P.shape[0] == 0:
        return 0.0
    P = np.maximum(P, r)
    order = np.lexsort((-P[:, 1], -P[:, 0]))
    x = P[order, 0]
    y = np.maximum.accumulate(P[order, 1])
    x_next = np.append(x[1:], r[0])
    return float(np.sum((x - x_next) * (y - r[1])))


def hvi(candidates, front, r) -> float:
    """Hypervolume gained by adding ``candidates`` to ``front``."""
    C, r = _as_front(candidates, r)
    P, _ = _as_front(front, r)
    gain = hypervolume(np.vstack([P, C]), r) - hypervolume(P, r)
    return max(gain, 0.0)


def log_hv_difference(hv_reference: float, hv: float) -> tuple[float, bool]:
    """``log10(hv_reference - hv + eps)``; the flag is set when ``hv`` overshoots the reference."""
    gap = hv_reference - hv
    clamped = gap < 0
    return float(np.log10(max(gap, 0.0) + LOG_HV_EPS)), bool(clamped)


def reference_point(Y, margin: float = 0.1) -> np.ndarray:
    """Componentwise nadir of ``Y`` lowered by ``margin`` times each objective's range."""
    Y = np.asarray(Y, dtype=float)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    span = hi - lo
    # a degenerate range still needs a strictly lower reference
    span = np.where(span > 0, span, np.maximum(np.abs(lo), 1.0))
    return lo - margin * span


class StaircaseFronts:
    """Many two-objective fronts prepared for vectorized single-point HVI.

    ``fronts`` has shape ``(N, n, 2)``; each front is sorted by the first
    objective (descending) with a running maximum over the second, which is
    all a sweep needs, so dominated members may be left in.
    """

    def __init__(self, fronts: np.ndarray, r):
        r = np.asarray(r, dtype=float)
        F = np.maximum(np.asarray(fronts, dtype=float), r)
        if F.ndim != 3 or F.shape[-1] != 2:
            raise Unsupported("staircase fronts need shape (N, n, 2)")
        N = F.shape[0]
        order = np.lexsort((-F[..., 1], -F[..., 0]), axis=-1)
        F = np.take_along_axis(F, order[..., None], axis=1)
        self.x = F[..., 0]
        self.y = np.maximum.accumulate(F[..., 1], axis=1)
        self.x_next = np.concatenate([self.x[:, 1:], np.full((N, 1), r[0])], axis=1)
        self.r = r

    def hvi(self, points: np.ndarray) -> np.ndarray:
        """HVI of one point per (front, candidate): ``points`` is ``(N, B, 2)``, result ``(N, B)``."""
        r = self.r
        p = np.maximum(points, r)
        box = (p[..., 0] - r[0]) * (p[..., 1] - r[1])
        px = p[..., 0][..., None]
        py = p[..., 1][..., None]
        x = np.minimum(self.x[:, None, :], px)
        xn = np.minimum(self.x_next[:, None, :], px)
        y = np.minimum(self.y[:, None, :], py)
        covered = np.sum((x - xn) * (y - r[1]), axis=-1)
        return np.maximum(box - covered, 0.0)


@dataclass
class ArchiveEntry:
    x: np.ndarray
    y: np.ndarray
    iteration: int


@dataclass
class ParetoArchive:
    """Every evaluated point plus the cached nondominated subset."""

    reference: np.ndarray | None = None
    entries: list[ArchiveEntry] = field(default_factory=list)
    _front_idx: list[int] = field(default_factory=list)

    def add(self, x, y, iteration: int) -> None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise InvalidInput("objective values must be finite")
        self.entries.append(ArchiveEntry(np.asarray(x, dtype=float), y, int(iteration)))
        new = len(self.entries) - 1
        if any(dominates(self.entries[i].y, y) for i in self._front_idx):
            return
        self._front_idx = [i for i in self._front_idx if not dominates(y, self.entries[i].y)]
        self._front_idx.append(new)

    @property
    def Y(self) -> np.ndarray:
        return np.array([e.y for e in self.entries]).reshape(len(self.entries), -1)

    @property
    def front_entries(self) -> list[ArchiveEntry]:
        return [self.entries[i] for i in self._front_idx]

    @property
    def front(self) -> np.ndarray:
        return np.array([e.y for e in self.front_entries]).reshape(len(self._front_idx), -1)

    def hypervolume(self, r=None) -> float:
        r = self.reference if r is None else r
        if r is None:
            raise InvalidInput("archive has no reference point yet")
        return hypervolume(self.front, r)
