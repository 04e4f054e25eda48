"""Power-control optimization driver: decision encoding, BO loop, replication."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .acquisition import NEHVI, QEHVI, AcquisitionConfig, optimize_acquisition
from .errors import InvalidConfig, NumericalError
from .gp import fit
from .link_metrics import NetworkState, ObjectiveValues, PowerAllocation, build_state, objectives
from .pareto import (
    ParetoArchive,
    hypervolume,
    log_hv_difference,
    nondominated_mask,
    pareto_front,
    reference_point,
)
from .topology import NetworkConfig

METHODS = ("nehvi", "ehvi", "sobol")
FREE_VARIABLES = {
    "powers_only": ("p_ul", "p_dl"),
    "weights_only": ("w_ul", "w_dl"),
    "mixed": ("p_dl", "w_dl"),
    "full": ("p_ul", "p_dl", "w_ul", "w_dl"),
}
OBJECTIVE_MODES = ("sums", "total_minlink")


def default_fixed_allocation(state: NetworkState, seed: int) -> PowerAllocation:
    """Values used for variables a codec mode keeps fixed.

    Powers sit at their budgets (DL split evenly over an AP's links);
    time fractions are random: ``w_ul = a b``, ``w_dl = a (1 - b)`` with
    ``a, b`` uniform.
    """
    cfg, conn = state.config, state.topology.connectivity.astype(float)
    rng = np.random.default_rng([seed, 7])
    a = rng.uniform(size=conn.shape)
    b = rng.uniform(size=conn.shape)
    per_ap = np.maximum(conn.sum(axis=1, keepdims=True), 1.0)
    return PowerAllocation(
        w_ul=a * b * conn,
        w_dl=a * (1 - b) * conn,
        p_ul=cfg.p_max_ul * conn,
        p_dl=cfg.p_dl_budget / per_ap * conn,
    )


@dataclass(frozen=True)
class DecisionCodec:
    """Maps the unit cube onto feasible allocations.

    Coordinates are laid out in blocks (one entry per connected link, or
    per UE for a tied UL power): ``p_ul``, ``p_dl``, then the weight blocks.
    With both weights free the two blocks are ``a`` (total data fraction)
    and ``b`` (UL share); with one weight free it is scaled into the room
    the fixed weight leaves.
    """

    mode: str
    connectivity: np.ndarray
    p_max_ul: float
    p_max_dl: float
    fixed: PowerAllocation
    tie_ul_per_ue: bool = False

    def __post_init__(self):
        if self.mode not in FREE_VARIABLES:
            raise InvalidConfig(f"unknown codec mode {self.mode!r}; expected one of {sorted(FREE_VARIABLES)}")

    @property
    def free(self) -> tuple[str, ...]:
        return FREE_VARIABLES[self.mode]

    @property
    def links(self):
        return np.nonzero(self.connectivity)

    def _blocks(self) -> list[tuple[str, int]]:
        n = int(self.connectivity.sum())
        K = self.connectivity.shape[1]
        blocks = []
        if "p_ul" in self.free:
            blocks.append(("p_ul", K if self.tie_ul_per_ue else n))
        if "p_dl" in self.free:
            blocks.append(("p_dl", n))
        if "w_ul" in self.free and "w_dl" in self.free:
            blocks += [("w_a", n), ("w_b", n)]
        elif "w_ul" in self.free:
            blocks.append(("w_ul", n))
        elif "w_dl" in self.free:
            blocks.append(("w_dl", n))
        return blocks

    @property
    def dim(self) -> int:
        return sum(size for _, size in self._blocks())

    def split(self, u) -> dict[str, np.ndarray]:
        u = np.asarray(u, dtype=float).ravel()
        if u.size != self.dim:
            raise InvalidConfig(f"expected a {self.dim}-dimensional point, got {u.size}")
        out, pos = {}, 0
        for name, size in self._blocks():
            out[name] = u[pos : pos + size]
            pos += size
        return out

    def decode(self, u) -> PowerAllocation:
        parts = self.split(np.clip(u, 0.0, 1.0))
        ll, kk = self.links
        f = self.fixed
        w_ul, w_dl, p_ul, p_dl = (np.array(x, dtype=float, copy=True) for x in (f.w_ul, f.w_dl, f.p_ul, f.p_dl))
        if "p_ul" in parts:
            v = parts["p_ul"][kk] if self.tie_ul_per_ue else parts["p_ul"]
            p_ul[ll, kk] = v * self.p_max_ul
        if "p_dl" in parts:
            raw = np.zeros_like(p_dl)
            raw[ll, kk] = parts["p_dl"] * self.p_max_dl
            total = raw.sum(axis=1, keepdims=True)
            scale = np.where(total > self.p_max_dl, self.p_max_dl / np.where(total > 0, total, 1.0), 1.0)
            p_dl = raw * scale
        if "w_a" in parts:
            a, b = parts["w_a"], parts["w_b"]
            w_ul[ll, kk] = a * b
            w_dl[ll, kk] = a * (1.0 - b)
        elif "w_ul" in parts:
            w_ul[ll, kk] = parts["w_ul"] * (1.0 - w_dl[ll, kk])
        elif "w_dl" in parts:
            w_dl[ll, kk] = parts["w_dl"] * (1.0 - w_ul[ll, kk])
        return PowerAllocation(w_ul, w_dl, p_ul, p_dl)

    def encode(self, alloc: PowerAllocation) -> np.ndarray:
        """Cube point decoding to ``alloc`` (for allocations in the codec's image).

        The decoder is not injective (DL rescaling, ``b`` is lost when ``a = 0``),
        so ``decode(encode(alloc)) == alloc`` holds but the converse only off
        those degenerate sets.
        """
        ll, kk = self.links
        parts = []
        for name, _ in self._blocks():
            if name == "p_ul":
                v = alloc.p_ul[ll, kk] / self.p_max_ul
                if self.tie_ul_per_ue:
                    K = self.connectivity.shape[1]
                    v = np.array([v[kk == k][0] if np.any(kk == k) else 0.0 for k in range(K)])
                parts.append(v)
            elif name == "p_dl":
                parts.append(alloc.p_dl[ll, kk] / self.p_max_dl)
            elif name == "w_a":
                a = alloc.w_ul[ll, kk] + alloc.w_dl[ll, kk]
                parts.append(a)
            elif name == "w_b":
                a = alloc.w_ul[ll, kk] + alloc.w_dl[ll, kk]
                parts.append(np.divide(alloc.w_ul[ll, kk], a, out=np.zeros_like(a), where=a > 0))
            elif name == "w_ul":
                room = 1.0 - self.fixed.w_dl[ll, kk]
                parts.append(np.divide(alloc.w_ul[ll, kk], room, out=np.zeros_like(room), where=room > 0))
            elif name == "w_dl":
                room = 1.0 - self.fixed.w_ul[ll, kk]
                parts.append(np.divide(alloc.w_dl[ll, kk], room, out=np.zeros_like(room), where=room > 0))
        return np.clip(np.concatenate(parts), 0.0, 1.0)


def make_codec(state: NetworkState, mode: str, fixed_seed: int | None = None, tie_ul_per_ue=False) -> DecisionCodec:
    cfg = state.config
    seed = cfg.seed if fixed_seed is None else fixed_seed
    return DecisionCodec(
        mode, state.topology.connectivity.copy(), cfg.p_max_ul, cfg.p_dl_budget,
        default_fixed_allocation(state, seed), tie_ul_per_ue,
    )


def decode(u, codec: DecisionCodec) -> PowerAllocation:
    return codec.decode(u)


@dataclass(frozen=True)
class BoConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    mode: str = "full"
    tie_ul_per_ue: bool = False
    fixed_seed: int | None = None
    objective_mode: str = "sums"
    budget: int = 50
    n_init: int = 0  # 0 selects min(2d + 1, max(2, budget // 5))
    batch_size: int = 1
    n_mc_samples: int = 128
    n_restarts: int = 10
    raw_candidates: int = 512
    gp_restarts: int = 8
    gp_maxiter: int = 200
    noise_std: float = 0.0

    def validate(self) -> "BoConfig":
        self.network.validate()
        if self.mode not in FREE_VARIABLES:
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise InvalidConfig(f"unknown objective_mode {self.objective_mode!r}")
        if self.budget < 1:
            raise InvalidConfig("budget must be at least 1")
        if self.n_init < 0:
            raise InvalidConfig("n_init must be nonnegative")
        for name in ("batch_size", "gp_restarts", "gp_maxiter", "n_restarts", "raw_candidates"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be at least 1")
        if self.n_mc_samples < 16:
            raise InvalidConfig("n_mc_samples must be at least 16")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std must be nonnegative")
        return self

    def initial_design_size(self, d: int) -> int:
        if self.n_init:
            return min(self.n_init, self.budget)
        return min(2 * d + 1, max(2, self.budget // 5), self.budget)


@dataclass(frozen=True)
class ObservationRecord:
    iteration: int  # 1-based evaluation index
    batch: int  # 0 for the initial design
    x: np.ndarray
    allocation: PowerAllocation
    objectives: np.ndarray  # noise-free objective vector
    observed: np.ndarray  # what the surrogate saw
    total_se: float
    min_link_se: float
    wall_clock: float
    fallback: bool = False


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    method: str
    hv: float
    log_hv_diff: float
    best_total_se: float
    normalized_total_se: float
    flags: str = ""


@dataclass
class RunResult:
    method: str
    seed: int
    reference: np.ndarray
    archive: ParetoArchive
    records: list[ObservationRecord]
    trace: list[TraceRow]
    wall_clock: float


def objective_vector(values: ObjectiveValues, mode: str) -> np.ndarray:
    if mode == "sums":
        return values.vector
    return np.array([values.total, values.min_link_total])


class _SobolStream:
    def __init__(self, d: int, seed: int):
        self.engine = qmc.Sobol(d, scramble=True, seed=seed)

    def take(self, n: int) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return self.engine.random(n)


def _perturbed_incumbents(X: np.ndarray, Y: np.ndarray, rng: np.random.Generator, per_point=20, max_points=10):
    """Gaussian perturbations of nondominated designs, touching ~20 coordinates each."""
    n, d = X.shape
    idx = np.flatnonzero(nondominated_mask(Y))[:max_points]
    if idx.size == 0:
        return np.empty((0, 1, d))
    base = np.repeat(X[idx], per_point, axis=0)
    touch = rng.uniform(size=base.shape) < min(1.0, 20.0 / d)
    step = rng.normal(scale=0.05, size=base.shape) * touch
    return np.clip(base + step, 0.0, 1.0)[:, None, :]


def run(
    config: BoConfig,
    method: str,
    seed: int,
    state: NetworkState | None = None,
) -> RunResult:
    """One optimization run; fully determined by ``(config, method, seed)``."""
    config.validate()
    if method not in METHODS:
        raise InvalidConfig(f"unknown method {method!r}; expected one of {METHODS}")
    state = build_state(config.network) if state is None else state
    codec = make_codec(state, config.mode, config.fixed_seed, config.tie_ul_per_ue)
    d = codec.dim
    sobol = _SobolStream(d, seed)
    rng = np.random.default_rng([seed, 1])
    noise_rng = np.random.default_rng([seed, 2])
    t0 = time.perf_counter()
    records: list[ObservationRecord] = []

    def evaluate(u: np.ndarray, batch: int, fallback: bool) -> None:
        alloc = codec.decode(u)
        vals = objectives(alloc, state)
        y = objective_vector(vals, config.objective_mode)
        obs = y + config.noise_std * noise_rng.standard_normal(y.shape) if config.noise_std else y.copy()
        records.append(
            ObservationRecord(
                len(records) + 1, batch, np.asarray(u, dtype=float), alloc, y, obs,
                vals.total, vals.min_link_total, time.perf_counter() - t0, fallback,
            )
        )

    n_init = config.initial_design_size(d)
    for u in sobol.take(n_init):
        evaluate(u, 0, False)
    r = reference_point(np.array([rec.objectives for rec in records]))
    prev_params = [None, None]
    batch = 0
    while len(records) < config.budget:
        batch += 1
        q = min(config.batch_size, config.budget - len(records))
        if method == "sobol":
            for u in sobol.take(q):
                evaluate(u, batch, False)
            continue
        X = np.array([rec.x for rec in records])
        Yobs = np.array([rec.observed for rec in records])
        try:
            models = []
            for t in range(Yobs.shape[1]):
                m = fit(X, Yobs[:, t], rng, config.gp_restarts, prev_params[t], config.gp_maxiter)
                prev_params[t] = m.params
                models.append(m)
            acfg = AcquisitionConfig(
                config.n_mc_samples, q, config.n_restarts, config.raw_candidates,
                seed=int(rng.integers(2**31 - 1)),
            )
            if method == "nehvi":
                acq = NEHVI(models, X, r, acfg)
            else:
                acq = QEHVI(models, pareto_front(Yobs), r, acfg)
            extra = _perturbed_incumbents(X, Yobs, rng) if q == 1 else None
            best, _ = optimize_acquisition(acq, d, acfg, int(rng.integers(2**31 - 1)), extra)
            for u in best:
                evaluate(u, batch, False)
        except NumericalError:
            for u in sobol.take(q):
                evaluate(u, batch, True)
    archive = ParetoArchive(reference=r)
    for rec in records:
        archive.add(rec.x, rec.objectives, rec.iteration)
    result = RunResult(method, seed, r, archive, records, [], time.perf_counter() - t0)
    result.trace = build_trace(result)
    return result


def hv_history(result: RunResult) -> np.ndarray:
    Y = np.array([rec.objectives for rec in result.records])
    out = np.empty(len(Y))
    for i in range(len(Y)):
        out[i] = hypervolume(pareto_front(Y[: i + 1]), result.reference)
    # the union only grows; guard against rounding wiggles in the sweep
    return np.maximum.accumulate(out)


def build_trace(result: RunResult, hv_reference: float | None = None, se_normalizer: float | None = None):
    hv = hv_history(result)
    totals = np.maximum.accumulate([rec.total_se for rec in result.records])
    hv_ref = hv[-1] if hv_reference is None else hv_reference
    norm = totals[-1] if se_normalizer is None else se_normalizer
    rows = []
    for i, rec in enumerate(result.records):
        lhd, clamped = log_hv_difference(hv_ref, hv[i])
        flags = "|".join(f for f, on in (("fallback", rec.fallback), ("clamped", clamped)) if on)
        rows.append(
            TraceRow(
                rec.iteration, result.method, float(hv[i]), lhd, float(totals[i]),
                float(totals[i] / norm) if norm > 0 else 0.0, flags,
            )
        )
    return rows


@dataclass
class ReplicateResult:
    runs: list[RunResult]
    summary: list[dict]
    hv_reference: dict[int, float]
    se_normalizer: float


_SUMMARY_FIELDS = ("hv", "log_hv_diff", "normalized_total_se")


def aggregate(runs: Iterable[RunResult]) -> list[dict]:
    """Per (method, iteration): mean, std, min and max across seeds of the trace metrics."""
    by_method: dict[str, list[RunResult]] = {}
    for res in runs:
        by_method.setdefault(res.method, []).append(res)
    rows = []
    for method in sorted(by_method, key=lambda m: METHODS.index(m) if m in METHODS else len(METHODS)):
        group = by_method[method]
        n_iter = min(len(r.trace) for r in group)
        for i in range(n_iter):
            row = {"method": method, "iteration": i + 1, "n_seeds": len(group)}
            for f in _SUMMARY_FIELDS:
                v = np.array([getattr(r.trace[i], f) for r in group])
                row[f"{f}_mean"] = float(v.mean())
                row[f"{f}_std"] = float(v.std())
                row[f"{f}_min"] = float(v.min())
                row[f"{f}_max"] = float(v.max())
            rows.append(row)
    return rows


def replicate(
    config: BoConfig,
    methods: Sequence[str],
    seeds: Sequence[int],
    state: NetworkState | None = None,
) -> ReplicateResult:
    """Run every method for every seed on one network, then renormalize the traces.

    The log-HV reference of a seed is the best final HV any method reached
    with that seed (all methods share that seed's initial design and thus
    its reference point). Total SE is normalized by the best total SE seen
    anywhere in the batch.
    """
    if len(seeds) < 2:
        raise InvalidConfig("replicate needs at least two seeds")
    state = build_state(config.network) if state is None else state
    return renormalize([run(config, m, s, state) for s in seeds for m in methods])


def renormalize(runs: Sequence[RunResult]) -> ReplicateResult:
    """Rebuild every trace against the batch-wide references and aggregate."""
    finals: dict[int, float] = {}
    for res in runs:
        finals[res.seed] = max(finals.get(res.seed, 0.0), hv_history(res)[-1])
    norm = max(max(rec.total_se for rec in res.records) for res in runs)
    for res in runs:
        res.trace = build_trace(res, finals[res.seed], norm)
    return ReplicateResult(list(runs), aggregate(runs), finals, norm)
