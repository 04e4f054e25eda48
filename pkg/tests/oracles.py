"""Reference computations built without the package's fast paths.

Everything here is deliberately naive: explicit matrices, loops and
enumeration, so agreement with the vectorized code is meaningful.
"""

from __future__ import annotations

import itertools

import numpy as np


# --- geometry / covariance -------------------------------------------------


def dense_covariance(beta, theta, mu, M):
    """Entry-by-entry exponential-correlation matrix."""
    R = np.empty((M, M), dtype=complex)
    rho = mu * np.exp(1j * theta)
    for m in range(M):
        for n in range(M):
            R[m, n] = beta * rho ** (m - n) if m >= n else np.conj(beta * rho ** (n - m))
    return R


def pathloss_db(d_m, z_db):
    return -148.1 - 37.6 * np.log10(d_m / 1000.0) + z_db


# --- closed-form SINR, literal transcription ------------------------------


def dense_link_model(R, pilot_of, pilots, p_ul, p_dl, sigma_ul, sigma_dl):
    """Array gain and interference sums for every link, from full matrices.

    ``R`` maps link -> MxM covariance, ``pilot_of`` link -> pilot row,
    ``pilots`` the pilot matrix, ``p_ul``/``p_dl`` link -> power.
    Returns ``{link: (A_ul, IC_ul, II_ul, A_dl, IC_dl, II_dl)}``.
    """
    links = list(R)
    M = next(iter(R.values())).shape[0]
    psi = {a: pilots[pilot_of[a]] for a in links}

    def inner(a, b):
        return abs(np.vdot(psi[a], psi[b])) ** 2

    F = {}
    for a in links:
        F[a] = sum(R[b] * inner(b, a) for b in links) + sigma_ul * np.vdot(psi[a], psi[a]).real * np.eye(M)
    Finv = {a: np.linalg.inv(F[a]) for a in links}
    gamma = {a: np.trace(R[a] @ Finv[a] @ R[a]).real for a in links}
    out = {}
    for a in links:
        n4 = np.vdot(psi[a], psi[a]).real ** 2
        ic_ul = ii_ul = ic_dl = ii_dl = 0.0
        for b in links:
            if b == a:
                continue
            c = inner(a, b)
            ic_ul += p_ul[b] * c * abs(np.trace(R[b] @ Finv[a] @ R[a])) ** 2 / gamma[a]
            ic_dl += p_dl[b] * c * abs(np.trace(R[b] @ Finv[b] @ R[a])) ** 2 / gamma[b]
            ii_ul += p_ul[b] * np.trace(R[b] @ R[a] @ Finv[a] @ R[a]).real / gamma[a]
            ii_dl += p_dl[b] * np.trace(R[b] @ Finv[b] @ R[b] @ R[a]).real / gamma[b]
        out[a] = (p_ul[a] * n4 * gamma[a], ic_ul, ii_ul, p_dl[a] * n4 * gamma[a], ic_dl, ii_dl)
    return out


def scalar_single_link_sinr(p, beta, tau_p, sigma2):
    """One AP, one UE, one antenna: F = tau_p^2 beta + sigma^2 tau_p, SINR = p tau_p^2 beta^2 / (F sigma^2)."""
    F = tau_p**2 * beta + sigma2 * tau_p
    return p * tau_p**2 * beta**2 / F / sigma2


# --- hypervolume ------------------------------------------------------------


def grid_hypervolume(front, r):
    """Exact 2-D hypervolume by summing the cells of the coordinate grid."""
    P = np.maximum(np.asarray(front, dtype=float).reshape(-1, 2), r)
    if P.size == 0:
        return 0.0
    xs = np.unique(np.concatenate([[r[0]], P[:, 0]]))
    ys = np.unique(np.concatenate([[r[1]], P[:, 1]]))
    total = 0.0
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            cx, cy = xs[i + 1], ys[j + 1]  # upper corner of the cell
            if np.any((P[:, 0] >= cx) & (P[:, 1] >= cy)):
                total += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
    return total


def mc_hypervolume(front, r, n, rng):
    """Rejection-sampling estimate over the bounding box of ``front`` above ``r``."""
    P = np.maximum(np.asarray(front, dtype=float).reshape(-1, 2), r)
    hi = P.max(axis=0)
    box = np.prod(hi - r)
    if box == 0:
        return 0.0
    U = r + rng.uniform(size=(n, 2)) * (hi - r)
    hit = np.zeros(n, dtype=bool)
    for p in P:
        hit |= (U[:, 0] <= p[0]) & (U[:, 1] <= p[1])
    return box * hit.mean()


def brute_dominates(a, b):
    ge = all(x >= y for x, y in zip(a, b))
    gt = any(x > y for x, y in zip(a, b))
    return ge and gt


# --- GP ---------------------------------------------------------------------


def dense_matern52(X1, X2, ls, s2):
    K = np.empty((len(X1), len(X2)))
    for i, a in enumerate(X1):
        for j, b in enumerate(X2):
            r = np.sqrt(np.sum(((a - b) / ls) ** 2))
            K[i, j] = s2 * (1 + np.sqrt(5) * r + 5 * r * r / 3) * np.exp(-np.sqrt(5) * r)
    return K


def dense_gp_posterior(X, y, Xq, ls, s2, noise):
    """Posterior on the raw target scale with explicit inverses (no standardization)."""
    K = dense_matern52(X, X, ls, s2) + noise * np.eye(len(X))
    Ks = dense_matern52(X, Xq, ls, s2)
    Kss = dense_matern52(Xq, Xq, ls, s2)
    Kinv = np.linalg.inv(K)
    return Ks.T @ Kinv @ y, Kss - Ks.T @ Kinv @ Ks


# --- pilots -----------------------------------------------------------------


def best_balanced_partition(S, n_groups):
    """Minimum within-group similarity over all equal-size partitions (small K only)."""
    K = S.shape[0]
    size = K // n_groups
    best, best_cost = None, np.inf
    for labels in itertools.product(range(n_groups), repeat=K):
        if any(labels.count(g) != size for g in range(n_groups)):
            continue
        cost = sum(S[a, b] for a in range(K) for b in range(a + 1, K) if labels[a] == labels[b])
        if cost < best_cost - 1e-15:
            best, best_cost = labels, cost
    return best, best_cost


# --- discrepancy -------------------------------------------------------------


def star_discrepancy_2d(P):
    """Exact L-infinity star discrepancy in 2-D over the critical grid."""
    P = np.asarray(P)
    n = len(P)
    xs = np.unique(np.concatenate([P[:, 0], [1.0]]))
    ys = np.unique(np.concatenate([P[:, 1], [1.0]]))
    worst = 0.0
    for x in xs:
        y_open = np.sort(P[P[:, 0] < x, 1])
        y_closed = np.sort(P[P[:, 0] <= x, 1])
        open_count = np.searchsorted(y_open, ys, side="left") / n
        closed_count = np.searchsorted(y_closed, ys, side="right") / n
        vol = x * ys
        worst = max(worst, np.max(vol - open_count), np.max(closed_count - vol))
    return worst
