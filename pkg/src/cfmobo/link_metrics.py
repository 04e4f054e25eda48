"""Closed-form UL/DL SINR and ergodic spectral efficiency for cell-free links.

Every connected AP-UE pair ``(l, k)`` is a link with its own covariance,
pilot, combiner and precoder. Interference sums run over all connected
links except the link itself. All power-independent traces are tabulated
once per network (:class:`LinkTables`), after which evaluating an
allocation reduces to a couple of matrix-vector products.

Traces against Toeplitz covariances are computed from diagonal sums:
``Tr(R_b A) = sum_D t_b(D) * dsum_A(-D)`` with ``dsum_A(E) = sum_{i-j=E} A[i,j]``,
which keeps the pairwise tables at ``O(n_links^2 M)`` instead of ``O(n_links^2 M^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve, toeplitz

from .errors import InvalidConfig, InvalidInput, NumericalError
from .topology import (
    CovarianceSet,
    NetworkConfig,
    NetworkTopology,
    PilotBook,
    assign_pilots,
    covariance_set,
    generate_topology,
)

Direction = Literal["UL", "DL"]


@dataclass(frozen=True)
class PowerAllocation:
    """Per-link decision variables, arrays of shape ``(L, K)``."""

    w_ul: np.ndarray
    w_dl: np.ndarray
    p_ul: np.ndarray
    p_dl: np.ndarray

    def violations(
        self, p_max_ul: float, p_max_dl: float, connectivity: np.ndarray | None = None, tol=1e-12
    ) -> dict[str, int]:
        """Count constraint violations; the allocation is feasible iff all counts are zero."""
        mask = np.ones_like(self.p_ul, dtype=bool) if connectivity is None else connectivity.astype(bool)
        w_ul, w_dl = self.w_ul[mask], self.w_dl[mask]
        p_ul = self.p_ul[mask]
        p_dl = np.where(mask, self.p_dl, 0.0)
        return {
            "w_negative": int(np.sum((w_ul < -tol) | (w_dl < -tol))),
            "w_sum": int(np.sum(w_ul + w_dl > 1.0 + tol)),
            "p_ul_range": int(np.sum((p_ul < -tol) | (p_ul > p_max_ul * (1 + tol)))),
            "p_dl_negative": int(np.sum(p_dl < -tol)),
            "p_dl_budget": int(np.sum(p_dl.sum(axis=1) > p_max_dl * (1 + tol))),
        }

    def is_feasible(self, p_max_ul, p_max_dl, connectivity=None) -> bool:
        return not any(self.violations(p_max_ul, p_max_dl, connectivity).values())


@dataclass(frozen=True)
class PrecodingStats:
    """Pilot-training matrices ``F`` and their Cholesky factors.

    With an orthogonal pilot book ``F_{l,k}`` depends on the link only
    through its pilot, so one matrix per pilot index is stored.
    """

    F: np.ndarray  # (tau_p, M, M)
    chol: list  # cho_factor output per pilot
    pilot_norm2: np.ndarray  # (tau_p,)
    noise_ul: float

    def solve(self, pilot: int, B: np.ndarray) -> np.ndarray:
        """``F_pilot^{-1} B`` through the cached factorization."""
        return cho_solve(self.chol[pilot], B)


@dataclass(frozen=True)
class SinrBreakdown:
    array_gain: float
    coherent_interf: float
    incoherent_interf: float
    noise: float

    @property
    def sinr(self) -> float:
        return self.array_gain / (self.coherent_interf + self.incoherent_interf + self.noise)


@dataclass(frozen=True)
class SpectralEfficiency:
    ul: np.ndarray  # (L, K), zero on unconnected links
    dl: np.ndarray

    @property
    def sum_ul(self) -> float:
        return float(self.ul.sum())

    @property
    def sum_dl(self) -> float:
        return float(self.dl.sum())

    @property
    def sum_total(self) -> float:
        return self.sum_ul + self.sum_dl


@dataclass(frozen=True)
class ObjectiveValues:
    vector: np.ndarray  # (sum UL SE, sum DL SE)
    total: float
    min_link_total: float
    se: SpectralEfficiency


def compute_precoding_stats(cov: CovarianceSet, pilots: PilotBook, noise_ul: float) -> PrecodingStats:
    """``F_{l,k} = sum_{(i,j)} R_{i,j} |psi_{i,j}^H psi_{l,k}|^2 + sigma^2 ||psi_{l,k}||^2 I``."""
    conn = cov.connectivity.astype(bool)
    if np.any(pilots.assignment[conn] < 0):
        raise InvalidInput("pilot assignment does not cover every connected link")
    tau_p, M = pilots.tau_p, cov.M
    gram2 = np.abs(pilots.gram()) ** 2
    # Toeplitz sums stay Toeplitz: accumulate first columns per pilot
    group_col = np.zeros((tau_p, M), dtype=complex)
    np.add.at(group_col, pilots.assignment[conn], cov.first_col[conn])
    norm2 = gram2.diagonal().real ** 0.5
    F = np.empty((tau_p, M, M), dtype=complex)
    chol = []
    for p in range(tau_p):
        col = gram2[:, p] @ group_col
        Fp = toeplitz(col, col.conj()) + noise_ul * norm2[p] * np.eye(M)
        try:
            chol.append(cho_factor(Fp, lower=True))
        except LinAlgError as exc:
            raise NumericalError(f"F matrix of pilot {p} is not positive definite") from exc
        F[p] = Fp
    return PrecodingStats(F, chol, norm2, float(noise_ul))


def _diag_sum_operator(M: int) -> sp.csr_matrix:
    # maps vec(A) (row-major) to dsum_A(E), E = -(M-1)..M-1 at index E + M - 1
    i, j = np.divmod(np.arange(M * M), M)
    return sp.csr_matrix((np.ones(M * M), (np.arange(M * M), i - j + M - 1)), shape=(M * M, 2 * M - 1))


@dataclass(frozen=True)
class LinkTables:
    """Power-independent coefficients of the closed-form SINR.

    For link ``a`` with interferer ``b``:
    ``UL interference = sum_b p_b * ul_interf[a, b]`` and
    ``DL interference = sum_b p_b * dl_interf[a, b]``, while the array gain is
    ``p_a * gain[a]``. Diagonals of the interference tables are zero.
    """

    link_l: np.ndarray
    link_k: np.ndarray
    gamma: np.ndarray  # Tr(R F^-1 R)
    gain: np.ndarray  # ||psi||^4 gamma
    pilot_coupling: np.ndarray  # |psi_a^H psi_b|^2
    tr_cross: np.ndarray  # Tr(R_b F_a^-1 R_a)
    tr_incoh: np.ndarray  # Tr(R_b R_a F_a^-1 R_a)
    ul_coh: np.ndarray
    ul_incoh: np.ndarray
    dl_coh: np.ndarray
    dl_incoh: np.ndarray

    @property
    def n_links(self) -> int:
        return self.link_l.size

    @property
    def ul_interf(self) -> np.ndarray:
        return self.ul_coh + self.ul_incoh

    @property
    def dl_interf(self) -> np.ndarray:
        return self.dl_coh + self.dl_incoh


def compute_link_tables(cov: CovarianceSet, pilots: PilotBook, stats: PrecodingStats, chunk=64) -> LinkTables:
    link_l, link_k = np.nonzero(cov.connectivity)
    n, M = link_l.size, cov.M
    pil = pilots.assignment[link_l, link_k]
    op = _diag_sum_operator(M)
    ds_G = np.empty((n, 2 * M - 1), dtype=complex)
    ds_S = np.empty((n, 2 * M - 1), dtype=complex)
    gamma = np.empty(n)
    for p in np.unique(pil):
        idx = np.flatnonzero(pil == p)
        for start in range(0, idx.size, chunk):
            sel = idx[start : start + chunk]
            R = np.stack([cov.matrix(link_l[a], link_k[a]) for a in sel])
            B = R.transpose(1, 0, 2).reshape(M, -1)
            G = stats.solve(p, B).reshape(M, sel.size, M).transpose(1, 0, 2)
            S = R @ G
            flat_G = G.reshape(sel.size, -1)
            flat_S = S.reshape(sel.size, -1)
            ds_G[sel] = (op.T @ flat_G.real.T).T + 1j * (op.T @ flat_G.imag.T).T
            ds_S[sel] = (op.T @ flat_S.real.T).T + 1j * (op.T @ flat_S.imag.T).T
            gamma[sel] = np.trace(S, axis1=1, axis2=2).real
    if np.any(gamma <= 0):
        raise NumericalError("nonpositive Tr(R F^-1 R); a covariance is degenerate")
    lags = cov.lags()[link_l, link_k]  # (n, 2M-1)
    tr_cross = ds_G[:, ::-1] @ lags.T
    tr_incoh = (ds_S[:, ::-1] @ lags.T).real
    gram2 = np.abs(pilots.gram()) ** 2
    coupling = gram2[np.ix_(pil, pil)]
    norm2 = stats.pilot_norm2[pil]
    coh = coupling * np.abs(tr_cross) ** 2
    ul_coh = coh / gamma[:, None]
    ul_incoh = tr_incoh / gamma[:, None]
    dl_coh = coh.T / gamma[None, :]
    dl_incoh = tr_incoh.T / gamma[None, :]
    for tab in (ul_coh, ul_incoh, dl_coh, dl_incoh):
        np.fill_diagonal(tab, 0.0)
    return LinkTables(
        link_l, link_k, gamma, norm2**2 * gamma, coupling, tr_cross, tr_incoh,
        ul_coh, ul_incoh, dl_coh, dl_incoh,
    )


@dataclass(frozen=True)
class NetworkState:
    """Everything needed to score an allocation on one network realization."""

    config: NetworkConfig
    topology: NetworkTopology
    cov: CovarianceSet
    pilots: PilotBook
    stats: PrecodingStats
    tables: LinkTables

    @property
    def prelog(self) -> float:
        return 1.0 - self.config.tau_p / self.config.coherence_len

    def link_index(self, l: int, k: int) -> int:
        hit = np.flatnonzero((self.tables.link_l == l) & (self.tables.link_k == k))
        if hit.size == 0:
            raise InvalidInput(f"link ({l}, {k}) is not connected")
        return int(hit[0])


def build_state(
    config: NetworkConfig,
    topology: NetworkTopology | None = None,
    cov: CovarianceSet | None = None,
    pilots: PilotBook | None = None,
) -> NetworkState:
    config = config.validate().resolved()
    if topology is None:
        topology = generate_topology(config)
    if cov is None:
        cov = covariance_set(topology, config.correlation_magnitude, config.antennas_per_ap)
    if pilots is None:
        pilots = assign_pilots(cov, config.tau_p)
    stats = compute_precoding_stats(cov, pilots, config.noise_power_ul)
    tables = compute_link_tables(cov, pilots, stats)
    return NetworkState(config, topology, cov, pilots, stats, tables)


def _link_vectors(state: NetworkState, alloc: PowerAllocation):
    t = state.tables
    return tuple(getattr(alloc, f)[t.link_l, t.link_k] for f in ("w_ul", "w_dl", "p_ul", "p_dl"))


def sinr_components(state: NetworkState, alloc: PowerAllocation, direction: Direction):
    """Vectorized ``(A, I_C, I_I, sigma^2)`` over all connected links."""
    t = state.tables
    _, _, p_ul, p_dl = _link_vectors(state, alloc)
    if direction == "UL":
        p, coh, incoh, noise = p_ul, t.ul_coh, t.ul_incoh, state.config.noise_power_ul
    elif direction == "DL":
        p, coh, incoh, noise = p_dl, t.dl_coh, t.dl_incoh, state.config.sigma2_dl
    else:
        raise InvalidInput(f"direction must be 'UL' or 'DL', got {direction!r}")
    return p * t.gain, coh @ p, incoh @ p, noise


def sinr(link: tuple[int, int], direction: Direction, alloc: PowerAllocation, state: NetworkState) -> SinrBreakdown:
    a = state.link_index(*link)
    A, ic, ii, noise = sinr_components(state, alloc, direction)
    return SinrBreakdown(float(A[a]), float(ic[a]), float(ii[a]), float(noise))


def se_from_sinr(w, sinr_value, prelog):
    return w * prelog * np.log2(1.0 + sinr_value)


def ergodic_se(link: tuple[int, int], direction: Direction, alloc: PowerAllocation, state: NetworkState) -> float:
    a = state.link_index(*link)
    b = sinr(link, direction, alloc, state)
    w = _link_vectors(state, alloc)[0 if direction == "UL" else 1][a]
    return float(se_from_sinr(w, b.sinr, state.prelog))


def spectral_efficiency(state: NetworkState, alloc: PowerAllocation) -> SpectralEfficiency:
    t = state.tables
    w_ul, w_dl, _, _ = _link_vectors(state, alloc)
    L, K = state.topology.num_aps, state.topology.num_ues
    out = []
    for direction, w in (("UL", w_ul), ("DL", w_dl)):
        A, ic, ii, noise = sinr_components(state, alloc, direction)
        grid = np.zeros((L, K))
        grid[t.link_l, t.link_k] = se_from_sinr(w, A / (ic + ii + noise), state.prelog)
        out.append(grid)
    return SpectralEfficiency(*out)


def objectives(alloc: PowerAllocation, state: NetworkState) -> ObjectiveValues:
    """Objective pair ``(sum UL SE, sum DL SE)`` plus total and max-min diagnostics."""
    se = spectral_efficiency(state, alloc)
    t = state.tables
    per_link = se.ul[t.link_l, t.link_k] + se.dl[t.link_l, t.link_k]
    vec = np.array([se.sum_ul, se.sum_dl])
    return ObjectiveValues(vec, float(vec.sum()), float(per_link.min()), se)


@dataclass(frozen=True)
class McEstimate:
    se: float
    stderr: float
    sinr: float


def _sqrtm_psd(R: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(R)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def mc_validate_se(
    link: tuple[int, int],
    direction: Direction,
    alloc: PowerAllocation,
    state: NetworkState,
    n_realizations: int,
    rng: np.random.Generator,
    estimator: Literal["uatf", "instantaneous"] = "uatf",
    n_groups: int = 20,
) -> McEstimate:
    """Monte-Carlo spectral efficiency from explicit channel realizations.

    Each realization draws ``h ~ CN(0, R)`` for every link, the pilot
    observations ``Y``, MMSE estimates and MR combiners/precoders. Data
    symbols and data-phase noise are averaged analytically given the channels.

    ``estimator="uatf"`` plugs sample moments into the use-and-then-forget
    SINR, the quantity the closed form evaluates exactly; the standard error
    comes from a grouped jackknife. ``"instantaneous"`` averages
    ``log2(1 + SINR)`` over realizations instead (a genie-aided bound that
    sits slightly above the closed form).
    """
    if n_realizations < 1:
        raise InvalidConfig("n_realizations must be at least 1")
    if direction not in ("UL", "DL"):
        raise InvalidInput(f"direction must be 'UL' or 'DL', got {direction!r}")
    t, cfg = state.tables, state.config
    a = state.link_index(*link)
    n, M = t.n_links, state.cov.M
    tau_p = state.pilots.tau_p
    pil = state.pilots.assignment[t.link_l, t.link_k]
    psi = state.pilots.pilots[pil]  # (n, tau_p)
    sqrtR = np.stack([_sqrtm_psd(state.cov.matrix(l, k)) for l, k in zip(t.link_l, t.link_k)])
    w_ul, w_dl, p_ul, p_dl = _link_vectors(state, alloc)
    sigma_ul, sigma_dl = cfg.noise_power_ul, cfg.sigma2_dl
    norm2 = np.real(np.sum(np.abs(psi) ** 2, axis=1))

    def estimate(b, h, noise):
        Y = h.T @ psi.conj() + noise  # (M, tau_p)
        rhs = Y @ psi[b]
        return norm2[b] * (sqrtR[b] @ (sqrtR[b] @ state.stats.solve(pil[b], rhs)))

    # per realization: desired term, interference powers per link, noise weight
    desired = np.empty(n_realizations, dtype=complex)
    interf = np.empty((n_realizations, n))
    noise_w = np.empty(n_realizations)
    for r in range(n_realizations):
        h = np.einsum("nij,nj->ni", sqrtR, _cn(rng, (n, M)))
        if direction == "UL":
            v = estimate(a, h, np.sqrt(sigma_ul) * _cn(rng, (M, tau_p)))
            g = h.conj() @ v  # conj(v^H h_b)
            desired[r] = np.conj(g[a])
            interf[r] = np.abs(g) ** 2
            noise_w[r] = sigma_ul * np.real(np.vdot(v, v))
        else:
            W = np.empty((n, M), dtype=complex)
            for b in range(n):
                hb = estimate(b, h, np.sqrt(sigma_ul) * _cn(rng, (M, tau_p)))
                W[b] = hb / np.sqrt(t.gain[b])
            g = W @ h[a].conj()  # h_a^H w_b
            desired[r] = g[a]
            interf[r] = np.abs(g) ** 2
            noise_w[r] = sigma_dl
    p = p_ul if direction == "UL" else p_dl
    w = (w_ul if direction == "UL" else w_dl)[a]
    mask = np.ones(n, dtype=bool)
    mask[a] = False

    if estimator == "instantaneous":
        inst = p[a] * interf[:, a] / (interf[:, mask] @ p[mask] + noise_w)
        se_r = se_from_sinr(w, inst, state.prelog)
        err = se_r.std(ddof=1) / np.sqrt(n_realizations) if n_realizations > 1 else np.nan
        return McEstimate(float(se_r.mean()), float(err), float(inst.mean()))
    if estimator != "uatf":
        raise InvalidInput(f"unknown estimator {estimator!r}")

    def uatf(idx):
        num = p[a] * np.abs(desired[idx].mean()) ** 2
        den = interf[idx][:, mask].mean(axis=0) @ p[mask] + noise_w[idx].mean()
        return num / den

    s = uatf(slice(None))
    se = float(se_from_sinr(w, s, state.prelog))
    groups = np.array_split(np.arange(n_realizations), min(n_groups, n_realizations))
    if len(groups) < 2:
        return McEstimate(se, float("nan"), float(s))
    loo = np.array(
        [se_from_sinr(w, uatf(np.setdiff1d(np.arange(n_realizations), g)), state.prelog) for g in groups]
    )
    G = len(groups)
    stderr = float(np.sqrt((G - 1) / G * np.sum((loo - loo.mean()) ** 2)))
    return McEstimate(se, stderr, float(s))
