"""End-to-end acceptance checks, each reporting a single pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``; the summary block at the end
of the session lists every criterion with its measured numbers.
"""

import io
import time
from dataclasses import replace

import numpy as np
import pytest

from cfmobo import cli
from cfmobo.bo_loop import make_codec, renormalize, run
from cfmobo.config import apply_overrides, preset
from cfmobo.gp import NOISE_FLOOR, GpModel, KernelParams
from cfmobo.link_metrics import PowerAllocation, build_state, ergodic_se, mc_validate_se, sinr
from cfmobo.pareto import hypervolume
from cfmobo.topology import NetworkConfig
from oracles import dense_gp_posterior, mc_hypervolume, scalar_single_link_sinr


def test_c1_hypervolume_vs_monte_carlo(report):
    rng = np.random.default_rng(2024)
    fronts = [rng.uniform(size=(rng.integers(1, 21), 2)) for _ in range(50)]
    r = np.zeros(2)
    t0 = time.perf_counter()
    exact = [hypervolume(F, r) for F in fronts]
    est = [mc_hypervolume(F, r, 10**6, rng) for F in fronts]
    elapsed = time.perf_counter() - t0
    worst = max(abs(a - b) / b for a, b in zip(exact, est))
    ok = worst <= 0.01 and elapsed < 10.0
    report(1, ok, f"max relative gap {worst:.2e} over 50 fronts, {elapsed:.1f} s including the MC estimates")
    assert ok


def test_c2_single_antenna_link_scalar(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(100):
        cfg = NetworkConfig(num_aps=1, num_ues=1, antennas_per_ap=1, shadow_std_db=8.0, seed=i)
        st = build_state(cfg)
        p = rng.uniform(0.0, cfg.p_max_ul)
        alloc = PowerAllocation(np.ones((1, 1)), np.zeros((1, 1)), np.full((1, 1), p), np.zeros((1, 1)))
        got = sinr((0, 0), "UL", alloc, st).sinr
        ref = scalar_single_link_sinr(p, st.topology.beta[0, 0], st.pilots.tau_p, cfg.noise_power_ul)
        worst = max(worst, abs(got - ref) / ref)
    ok = worst <= 1e-10
    report(2, ok, f"max relative error {worst:.2e} over 100 draws")
    assert ok


def test_c3_closed_form_vs_monte_carlo(report):
    cfg = NetworkConfig(num_aps=1, num_ues=1, antennas_per_ap=128, seed=11)
    st = build_state(cfg)
    codec = make_codec(st, "full")
    rng = np.random.default_rng(3)
    zs = []
    for _ in range(5):
        alloc = codec.decode(rng.uniform(size=codec.dim))
        for direction in ("UL", "DL"):
            est = mc_validate_se((0, 0), direction, alloc, st, 1000, rng)
            ref = ergodic_se((0, 0), direction, alloc, st)
            zs.append(abs(est.se - ref) / est.stderr)
    worst = max(zs)
    ok = worst <= 3.0
    report(3, ok, f"max |MC - closed form| = {worst:.2f} standard errors (5 allocations, UL and DL)")
    assert ok


def test_c4_gp_interpolation_and_dense_posterior(report):
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(12, 2))
    y = np.sin(4 * X[:, 0]) + 0.5 * X[:, 1] ** 2
    m = GpModel(X, y, KernelParams(np.array([0.3, 0.3]), 1.0, NOISE_FLOOR))
    interp = np.max(np.abs(m.predict(X)[0] - y))
    X3 = np.array([[0.1, 0.2], [0.5, 0.9], [0.8, 0.4]])
    y3 = np.array([0.3, -1.2, 0.7])
    ls, s2, noise = np.array([0.3, 0.6]), 1.4, 1e-3
    m3 = GpModel(X3, y3, KernelParams(ls, s2, noise), standardize=False)
    Xq = rng.uniform(size=(5, 2))
    mu_ref, cov_ref = dense_gp_posterior(X3, y3, Xq, ls, s2, noise)
    mu, cov = m3.predict_cov(Xq)
    dense = max(np.max(np.abs(mu - mu_ref)), np.max(np.abs(cov - cov_ref)))
    ok = interp <= 1e-6 and dense <= 1e-10
    report(4, ok, f"interpolation error {interp:.2e}, 3-point posterior gap {dense:.2e}")
    assert ok


def test_c5_decoder_feasibility(report):
    st = build_state(preset("cf5x5").network)
    cfg = st.config
    rng = np.random.default_rng(5)
    total, n = 0, 0
    for mode in ("full", "powers_only", "weights_only", "mixed"):
        codec = make_codec(st, mode)
        for u in rng.uniform(size=(25_000, codec.dim)):
            v = codec.decode(u).violations(cfg.p_max_ul, cfg.p_dl_budget, st.topology.connectivity)
            total += sum(v.values())
            n += 1
    ok = total == 0 and n == 10**5
    report(5, ok, f"{total} violations in {n} decoded points")
    assert ok


def test_c6_single_link_nehvi_vs_sobol(report):
    cfg = preset("link1x1_powers").optimizer
    st = build_state(cfg.network)
    t0 = time.perf_counter()
    wins = []
    for seed in range(5):
        hv_n = run(cfg, "nehvi", seed, st).trace[-1].hv
        hv_s = run(cfg, "sobol", seed, st).trace[-1].hv
        wins.append(hv_n >= hv_s)
    elapsed = time.perf_counter() - t0
    ok = sum(wins) >= 4 and elapsed < 120.0
    report(6, ok, f"NEHVI >= Sobol final HV in {sum(wins)}/5 seeds, {elapsed:.1f} s")
    assert ok


def test_c7_cf5x5_normalized_total_se(report):
    base = preset("cf5x5").optimizer
    st = build_state(base.network)
    d = make_codec(st, base.mode).dim
    # the first 20 evaluations of a 50-evaluation run, without spending the other 30
    cfg = replace(base, budget=20, n_init=base.initial_design_size(d))
    t0 = time.perf_counter()
    runs = [run(cfg, m, s, st) for s in range(5) for m in ("nehvi", "sobol")]
    elapsed = time.perf_counter() - t0
    out = renormalize(runs)
    at20 = {r["method"]: r["normalized_total_se_mean"] for r in out.summary if r["iteration"] == 20}
    ok = at20["nehvi"] >= at20["sobol"] and elapsed < 600.0
    report(7, ok, f"mean normalized total SE at eval 20: NEHVI {at20['nehvi']:.4f}, Sobol {at20['sobol']:.4f}, {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_c8_large_network_run(report):
    cfg = preset("cf30x20").optimizer
    st = build_state(cfg.network)
    res = run(cfg, "nehvi", 0, st)
    hv = np.array([t.hv for t in res.trace])
    fallbacks = sum(rec.fallback for rec in res.records)
    finite = all(np.all(np.isfinite(rec.objectives)) for rec in res.records)
    monotone = bool(np.all(np.diff(hv) >= 0))
    ok = len(res.records) == 100 and fallbacks == 0 and finite and monotone
    report(8, ok, f"{len(res.records)} evaluations, {fallbacks} fallbacks, HV nondecreasing: {monotone}, wall-clock {res.wall_clock:.0f} s")
    assert ok


def test_c9_byte_identical_rerun(report, tmp_path):
    cfg = apply_overrides(preset("cf5x5"), ["optimizer.budget=14", "experiment.seeds=0,1", "experiment.methods=nehvi,ehvi,sobol"])
    for name in ("a", "b"):
        cli.run_experiment(cfg, tmp_path / name, stream=io.StringIO())
    files = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    ok = len(files) == 16 and all(same)
    report(9, ok, f"{sum(same)}/{len(files)} CSV files byte-identical on rerun")
    assert ok
