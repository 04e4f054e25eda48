"""Random cell-free network generation.

Units are placed uniformly on a square with pairwise minimum distances,
large-scale fading follows a log-distance model with log-normal shadowing,
and each AP-UE link gets an exponentially correlated uniform-linear-array
covariance. All per-link arrays are indexed ``[l, k]`` (AP first, UE second).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import toeplitz

from .errors import InvalidConfig, InvalidCorrelation, InvalidDistance, PlacementInfeasible

MAX_PLACEMENT_RETRIES = 10**6


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


# -94 dBm: thermal noise over 20 MHz with a 7 dB noise figure
DEFAULT_NOISE_W = dbm_to_watt(-94.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Static description of a network scenario.

    ``pilot_len``, ``noise_power_dl`` and ``p_max_dl`` default to ``None``
    meaning "K", "same as UL" and "0.2 W times K" respectively; use
    :meth:`resolved` to obtain concrete values.
    """

    num_aps: int = 5
    num_ues: int = 5
    antennas_per_ap: int = 128
    area_side: float = 500.0
    min_dist_ap_ue: float = 40.0
    min_dist_ue_ue: float = 5.0
    min_dist_ap_ap: float = 100.0
    coherence_len: int = 200
    pilot_len: int | None = None
    pilot_reuse: bool = False
    correlation_magnitude: float = 0.5
    shadow_std_db: float = 4.0
    noise_power_ul: float = DEFAULT_NOISE_W
    noise_power_dl: float | None = None
    p_max_ul: float = 0.2
    p_max_dl: float | None = None
    aps_per_ue: int = 0
    seed: int = 0

    @property
    def tau_p(self) -> int:
        return self.num_ues if self.pilot_len is None else self.pilot_len

    @property
    def sigma2_dl(self) -> float:
        return self.noise_power_ul if self.noise_power_dl is None else self.noise_power_dl

    @property
    def p_dl_budget(self) -> float:
        return 0.2 * self.num_ues if self.p_max_dl is None else self.p_max_dl

    def resolved(self) -> "NetworkConfig":
        return replace(
            self,
            pilot_len=self.tau_p,
            noise_power_dl=self.sigma2_dl,
            p_max_dl=self.p_dl_budget,
        )

    def validate(self) -> "NetworkConfig":
        L, K = self.num_aps, self.num_ues
        if L < 1 or K < 1:
            raise InvalidConfig(f"num_aps and num_ues must be at least 1 (got num_aps={L}, num_ues={K})")
        if self.antennas_per_ap < 1:
            raise InvalidConfig("antennas_per_ap must be positive")
        if self.area_side <= 0:
            raise InvalidConfig("area_side must be positive")
        for name in ("min_dist_ap_ue", "min_dist_ue_ue", "min_dist_ap_ap"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        tau_p = self.tau_p
        if tau_p < 1:
            raise InvalidConfig("pilot_len must be at least 1")
        if not self.pilot_reuse and tau_p < K:
            raise InvalidConfig(f"pilot_len={tau_p} < K={K} requires pilot_reuse")
        if tau_p > K * L:
            raise InvalidConfig(f"pilot_len={tau_p} exceeds K*L={K * L}")
        if tau_p >= self.coherence_len:
            raise InvalidConfig("pilot_len must be shorter than coherence_len")
        if not 0.0 <= self.correlation_magnitude <= 1.0:
            raise InvalidConfig("correlation_magnitude must lie in [0, 1]")
        if self.shadow_std_db < 0:
            raise InvalidConfig("shadow_std_db must be nonnegative")
        if self.noise_power_ul <= 0:
            raise InvalidConfig("noise_power_ul must be positive")
        if self.sigma2_dl <= 0:
            raise InvalidConfig("noise_power_dl must be positive")
        if self.p_max_ul <= 0:
            raise InvalidConfig("p_max_ul must be positive")
        if self.p_dl_budget <= 0:
            raise InvalidConfig("p_max_dl must be positive")
        if not 0 <= self.aps_per_ue <= L:
            raise InvalidConfig("aps_per_ue must lie in [0, num_aps]")
        return self


@dataclass(frozen=True)
class NetworkTopology:
    ap_positions: np.ndarray  # (L, 2) meters
    ue_positions: np.ndarray  # (K, 2) meters
    connectivity: np.ndarray  # (L, K) int8 in {0, 1}
    distance: np.ndarray  # (L, K) meters
    angle: np.ndarray  # (L, K) radians, bearing from AP to UE
    shadow_db: np.ndarray  # (L, K)
    beta: np.ndarray  # (L, K) linear gain

    @property
    def num_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def num_ues(self) -> int:
        return self.ue_positions.shape[0]

    def links(self) -> tuple[np.ndarray, np.ndarray]:
        """Connected ``(l, k)`` index arrays in row-major order."""
        return np.nonzero(self.connectivity)

    def snapshot(self) -> str:
        """Plain-text dump of positions and the large-scale fading table."""
        lines = ["# ap x y"]
        lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(self.ap_positions.tolist())]
        lines.append("# ue x y")
        lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(self.ue_positions.tolist())]
        lines.append("# l k connected distance_m angle_rad shadow_db beta")
        for l in range(self.num_aps):
            for k in range(self.num_ues):
                lines.append(
                    f"{l} {k} {int(self.connectivity[l, k])} {float(self.distance[l, k])!r} "
                    f"{float(self.angle[l, k])!r} {float(self.shadow_db[l, k])!r} "
                    f"{float(self.beta[l, k])!r}"
                )
        return "\n".join(lines) + "\n"


def large_scale_fading(d, z=0.0):
    """Linear large-scale gain for distance ``d`` in meters and shadowing ``z`` in dB.

    ``beta[dB] = -148.1 - 37.6 log10(d / 1 km) + z``
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise InvalidDistance("distance must be positive and finite")
    beta_db = -148.1 - 37.6 * np.log10(d / 1000.0) + np.asarray(z, dtype=float)
    beta = 10.0 ** (beta_db / 10.0)
    return float(beta) if beta.ndim == 0 else beta


def draw_shadowing(shape, std_db: float, rng: np.random.Generator) -> np.ndarray:
    """Shadowing in dB; Gaussian in dB means log-normal in linear scale."""
    return rng.normal(0.0, std_db, size=shape)


def _place_group(
    n: int,
    side: float,
    rng: np.random.Generator,
    own_min: float,
    others: list[tuple[np.ndarray, float]],
    budget: list[int],
    chunk: int = 64,
) -> np.ndarray:
    placed = np.empty((0, 2))
    while placed.shape[0] < n:
        cand = rng.uniform(0.0, side, size=(chunk, 2))
        ok = np.ones(chunk, dtype=bool)
        if placed.shape[0]:
            ok &= _min_dist(cand, placed) >= own_min
        for pts, dmin in others:
            if pts.shape[0]:
                ok &= _min_dist(cand, pts) >= dmin
        hits = np.flatnonzero(ok)
        used = chunk if hits.size == 0 else hits[0] + 1
        budget[0] -= used - (0 if hits.size == 0 else 1)
        if budget[0] < 0:
            raise PlacementInfeasible(
                "could not satisfy minimum distances within the retry budget; "
                "enlarge area_side or reduce the minimum distances"
            )
        if hits.size:
            placed = np.vstack([placed, cand[hits[0]]])
    return placed


def _min_dist(cand: np.ndarray, pts: np.ndarray) -> np.ndarray:
    diff = cand[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(-1)).min(axis=1)


def place_units(
    config: NetworkConfig,
    rng: np.random.Generator,
    max_retries: int = MAX_PLACEMENT_RETRIES,
) -> NetworkTopology:
    """Uniform placement with rejection of candidates violating any minimum distance.

    APs are placed first, then UEs. Shadowing is drawn after placement from
    the same stream so a seed fixes the whole topology.
    """
    config.validate()
    L, K = config.num_aps, config.num_ues
    budget = [max_retries]
    aps = _place_group(L, config.area_side, rng, config.min_dist_ap_ap, [], budget)
    ues = _place_group(
        K, config.area_side, rng, config.min_dist_ue_ue, [(aps, config.min_dist_ap_ue)], budget
    )
    delta = ues[None, :, :] - aps[:, None, :]
    distance = np.hypot(delta[..., 0], delta[..., 1])
    angle = np.arctan2(delta[..., 1], delta[..., 0])
    shadow = draw_shadowing((L, K), config.shadow_std_db, rng)
    beta = large_scale_fading(distance, shadow)
    beta = np.asarray(beta).reshape(L, K)
    connectivity = strongest_connectivity(beta, config.aps_per_ue)
    return NetworkTopology(aps, ues, connectivity, distance, angle, shadow, beta)


def strongest_connectivity(beta: np.ndarray, aps_per_ue: int) -> np.ndarray:
    """Full connectivity when ``aps_per_ue`` is 0, else keep the strongest APs per UE."""
    L, K = beta.shape
    conn = np.ones((L, K), dtype=np.int8)
    if aps_per_ue and aps_per_ue < L:
        order = np.argsort(-beta, axis=0, kind="stable")
        conn[:] = 0
        for k in range(K):
            conn[order[:aps_per_ue, k], k] = 1
    return conn


def generate_topology(config: NetworkConfig) -> NetworkTopology:
    return place_units(config, np.random.default_rng(config.seed))


def spatial_covariance(beta: float, theta: float, mu: float, M: int) -> np.ndarray:
    """Exponential-correlation ULA covariance.

    Entry ``(m, n)`` equals ``beta * (mu e^{j theta})^(m - n)`` for ``m >= n``
    and the conjugate above the diagonal.
    """
    if not 0.0 <= mu <= 1.0:
        raise InvalidCorrelation(f"correlation magnitude {mu} outside [0, 1]")
    col = beta * (mu * np.exp(1j * theta)) ** np.arange(M)
    return toeplitz(col, col.conj())


@dataclass(frozen=True)
class CovarianceSet:
    """Hermitian Toeplitz covariances, one per AP-UE pair.

    Stored as first columns ``first_col[l, k, m] = R_{l,k}[m, 0]``; the
    full matrix is rebuilt on demand so large networks stay cheap in memory.
    Entries of unconnected links are kept but never used downstream.
    """

    first_col: np.ndarray  # (L, K, M) complex
    connectivity: np.ndarray  # (L, K)

    @property
    def M(self) -> int:
        return self.first_col.shape[-1]

    @property
    def beta(self) -> np.ndarray:
        return self.first_col[..., 0].real

    def matrix(self, l: int, k: int) -> np.ndarray:
        col = self.first_col[l, k]
        return toeplitz(col, col.conj())

    def matrices(self) -> np.ndarray:
        L, K, M = self.first_col.shape
        out = np.empty((L, K, M, M), dtype=complex)
        for l in range(L):
            for k in range(K):
                out[l, k] = self.matrix(l, k)
        return out

    def lags(self) -> np.ndarray:
        """Lag coefficients ``t(D) = R[n, n - D]`` for ``D = -(M-1) .. M-1``."""
        col = self.first_col
        return np.concatenate([col[..., :0:-1].conj(), col], axis=-1)


def covariance_set(topology: NetworkTopology, mu: float, M: int) -> CovarianceSet:
    if not 0.0 <= mu <= 1.0:
        raise InvalidCorrelation(f"correlation magnitude {mu} outside [0, 1]")
    rho = mu * np.exp(1j * topology.angle)
    col = topology.beta[..., None] * rho[..., None] ** np.arange(M)
    return CovarianceSet(col, topology.connectivity.copy())


@dataclass(frozen=True)
class PilotBook:
    """Orthogonal pilots (rows of ``pilots``) and the link-to-pilot map.

    ``assignment[l, k]`` is the pilot index of link ``(l, k)`` or -1 when the
    link is not connected.
    """

    pilots: np.ndarray  # (tau_p, tau_p) complex, row i is psi_i
    assignment: np.ndarray  # (L, K) int
    ue_pilot: np.ndarray = field(default=None)  # (K,) int

    @property
    def tau_p(self) -> int:
        return self.pilots.shape[0]

    def gram(self) -> np.ndarray:
        """``G[i, j] = psi_i^H psi_j``, with rounding residue of orthogonal pairs set to exact zero."""
        G = self.pilots.conj() @ self.pilots.T
        scale = np.max(np.abs(np.diagonal(G))) if G.size else 0.0
        G[np.abs(G) <= 1e-12 * scale] = 0.0
        return G


def orthogonal_pilots(tau_p: int) -> np.ndarray:
    """Unit-modulus DFT rows, so ``||psi||^2 = tau_p`` and distinct rows are orthogonal."""
    n = np.arange(tau_p)
    return np.exp(-2j * np.pi * np.outer(n, n) / tau_p)


def covariance_similarity(lags_a: np.ndarray, lags_b: np.ndarray, M: int) -> float:
    """``|Tr(R_a R_b)| / (||R_a||_F ||R_b||_F)`` evaluated from Toeplitz lags."""
    D = np.arange(-(M - 1), M)
    weight = M - np.abs(D)
    cross = np.sum(weight * lags_a * lags_b[::-1])
    na = np.sqrt(np.sum(weight * np.abs(lags_a) ** 2))
    nb = np.sqrt(np.sum(weight * np.abs(lags_b) ** 2))
    if na == 0 or nb == 0:
        return 0.0
    return float(abs(cross) / (na * nb))


def ue_similarity(cov: CovarianceSet) -> np.ndarray:
    """Pairwise UE similarity summed over APs that serve both UEs."""
    L, K, M = cov.first_col.shape
    lags = cov.lags()
    conn = cov.connectivity.astype(bool)
    S = np.zeros((K, K))
    for a in range(K):
        for b in range(a + 1, K):
            s = 0.0
            for l in range(L):
                if conn[l, a] and conn[l, b]:
                    s += covariance_similarity(lags[l, a], lags[l, b], M)
            S[a, b] = S[b, a] = s
    return S


def assign_pilots(cov: CovarianceSet, tau_p: int) -> PilotBook:
    """Per-UE pilot assignment; a UE uses the same pilot towards all its APs.

    With ``tau_p >= K`` every UE gets a dedicated pilot. Otherwise UEs are
    visited in index order and each joins the pilot whose current members
    are least similar to it, with at most ``ceil(K / tau_p)`` UEs per pilot.
    """
    if tau_p < 1:
        raise InvalidConfig("tau_p must be at least 1")
    K = cov.first_col.shape[1]
    if tau_p >= K:
        ue_pilot = np.arange(K)
    else:
        sim = ue_similarity(cov)
        cap = math.ceil(K / tau_p)
        members: list[list[int]] = [[] for _ in range(tau_p)]
        ue_pilot = np.empty(K, dtype=int)
        for k in range(K):
            cost = [
                sim[k, m].sum() if len(m) < cap else np.inf
                for m in (np.array(g, dtype=int) for g in members)
            ]
            p = int(np.argmin(cost))
            members[p].append(k)
            ue_pilot[k] = p
    assignment = np.where(cov.connectivity.astype(bool), ue_pilot[None, :], -1)
    return PilotBook(orthogonal_pilots(tau_p), assignment, ue_pilot)
