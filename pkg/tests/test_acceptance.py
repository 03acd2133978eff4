"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (also collected in the terminal summary)
and then asserts the same condition.
"""

import itertools
import os
import time

import numpy as np
import pytest

import _oracles as oracle
from polyvb.attributes import QMatrix, build_gmatrices, enumerate_profiles
from polyvb.effects import delta_to_theta, theta_to_delta
from polyvb.gibbs import ChainConfig, gibbs_fit
from polyvb.metrics import monotonicity_check
from polyvb.simulate import (SimConfig, builtin_qmatrix, gen_item_params, gen_responses,
                             sample_profiles, simulate)
from polyvb.study import bench, compare_fits, run_replications
from polyvb.vb import FitConfig, VariationalState, default_priors, fit, ve_step, vm_step

SCHEMES = ("weakly_informative", "noninformative")
DESK = SimConfig(n=10000, design="K4J60", rho=0.1, seed=1)
RMSE_LIMITS = {1: 0.0122, 2: 0.0220, 3: 0.0356}


def _random_q(rng, levels, n_items):
    rows = []
    for _ in range(n_items):
        row = [int(rng.integers(0, m)) for m in levels]
        if not any(row):
            k = int(rng.integers(len(levels)))
            row[k] = int(rng.integers(1, levels[k]))
        rows.append(row)
    return QMatrix(np.array(rows), np.array(levels))


# ---------------------------------------------------------------------------
# 1. VLB monotonicity
# ---------------------------------------------------------------------------


def test_c1_vlb_monotone_on_random_instances(verdict):
    rng = np.random.default_rng(20240601)
    worst = np.inf
    bad = []
    t0 = time.perf_counter()
    for i in range(200):
        flavor = ("collapsed", "reduced")[i % 2]
        scheme = SCHEMES[(i // 2) % 2]
        K = int(rng.integers(1, 4))
        levels = [int(rng.integers(2, 4)) for _ in range(K)]
        q = _random_q(rng, levels, int(rng.integers(1, 31)))
        n = int(rng.integers(1, 501))
        space = enumerate_profiles(q.levels)
        pi = rng.dirichlet(np.full(space.n_profiles, 2.0))
        theta = gen_item_params(q, flavor, rng)
        X = gen_responses(sample_profiles(n, pi, space, rng), q, theta, flavor, rng)
        rpt = fit(X, q, flavor, config=FitConfig(cores=1), prior_scheme=scheme)
        steps = np.diff(rpt.state.vlb_trace)
        low = float(steps.min()) if steps.size else 0.0
        worst = min(worst, low)
        if low < -1e-9:
            bad.append(i)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 120
    verdict("C1 VLB monotonicity", ok,
            f"200 instances, worst step {worst:.3e}, violations {bad}, {elapsed:.1f}s (< 120s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. brute-force equivalence
# ---------------------------------------------------------------------------


def test_c2_single_steps_match_brute_force(verdict):
    rng = np.random.default_rng(7)
    level_sets = [(2,), (3,), (2, 2), (2, 3), (3, 2), (3, 3), (2, 2, 2), (2, 4), (4, 2)]
    ve_err = vm_err = 0.0
    cases = 0
    for levels, n, J, _ in itertools.product(level_sets, range(1, 5), range(1, 4), range(3)):
        q = _random_q(rng, levels, J)
        X = rng.integers(0, 2, size=(n, J)).astype(np.uint8)
        space = enumerate_profiles(q.levels)
        assert space.n_profiles <= 9
        for flavor in ("collapsed", "reduced"):
            gs = build_gmatrices(q, space, flavor)
            Gs = oracle.dense_gs(q.entries, q.levels, flavor)
            priors = default_priors(space, gs, SCHEMES[cases % 2])
            a = [rng.uniform(0.3, 6.0, g.n_patterns) for g in gs]
            b = [rng.uniform(0.3, 6.0, g.n_patterns) for g in gs]
            d = rng.uniform(0.3, 6.0, space.n_profiles)
            state = VariationalState(np.full((n, space.n_profiles), 1.0 / space.n_profiles), d, a, b)
            r = ve_step(X, gs, state, priors)
            ve_err = max(ve_err, float(np.abs(r - oracle.brute_force_r(X, Gs, a, b, d)).max()))
            r = rng.dirichlet(np.ones(space.n_profiles), size=n)
            va, vb_ = vm_step(X, gs, r, priors)
            ra, rb = oracle.dense_vm(X, Gs, r, priors.a0, priors.b0)
            vm_err = max(vm_err, max(float(np.abs(x - y).max()) for x, y in zip(va + vb_, ra + rb)))
            cases += 1
    ok = ve_err <= 1e-10 and vm_err <= 1e-12
    verdict("C2 brute-force oracle", ok,
            f"{cases} instances, VE max err {ve_err:.2e} (<= 1e-10), VM max err {vm_err:.2e} (<= 1e-12)")
    assert ok


# ---------------------------------------------------------------------------
# 3, 4, 7. desk-scale recovery and prior sensitivity
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_run():
    t0 = time.perf_counter()
    reports, raw = run_replications(DESK, 10, FitConfig(cores=8), schemes=SCHEMES)
    return reports, raw, time.perf_counter() - t0


def test_c3_desk_scale_recovery(desk_run, verdict):
    reports, _, elapsed = desk_run
    rep = reports["weakly_informative"]
    table = rep.theta_table()
    bias_ok = all(abs(b) <= 0.005 for b, _ in table.values())
    rmse_ok = all(table[k][1] <= RMSE_LIMITS[k] for k in RMSE_LIMITS) and set(table) == set(RMSE_LIMITS)
    cls_ok = bool(np.all(rep.eacr >= 0.90)) and rep.pacr >= 0.70
    ok = bias_ok and rmse_ok and cls_ok and rep.convergence_rate == 1.0 and elapsed < 900
    buckets = ", ".join(f"K*={k}: bias {b:+.4f} rmse {r:.4f}" for k, (b, r) in sorted(table.items()))
    verdict("C3 desk-scale recovery", ok,
            f"{buckets}; EACR {np.round(rep.eacr, 3).tolist()} PACR {rep.pacr:.3f}; "
            f"convergence {rep.convergence_rate:.0%}; {elapsed:.0f}s for both priors (< 900s)")
    assert ok


def test_c4_mixing_proportion_recovery(desk_run, verdict):
    rep = desk_run[0]["weakly_informative"]
    max_bias = max(abs(rep.pi_bias_max), abs(rep.pi_bias_min))
    ok = max_bias <= 0.002 and rep.pi_rmse_max <= 0.004
    verdict("C4 mixing proportions", ok,
            f"max |bias| {max_bias:.5f} (<= .002), max RMSE {rep.pi_rmse_max:.5f} (<= .004)")
    assert ok


def test_c7_prior_sensitivity(desk_run, verdict):
    reports, raw, _ = desk_run
    weak = reports["weakly_informative"].theta_table()
    flat = reports["noninformative"].theta_table()
    diff = max(max(abs(weak[k][0] - flat[k][0]), abs(weak[k][1] - flat[k][1])) for k in weak)
    violations = {s: 0 for s in SCHEMES}
    for res in raw["fits"]:
        if res.report is not None:
            violations[res.scheme] += len(monotonicity_check(res.report.eap_theta, res.report.gmatrices))
    failures = sum(res.report is None for res in raw["fits"])
    ok = set(weak) == set(flat) and diff <= 0.001 and not any(violations.values()) and failures == 0
    verdict("C7 prior sensitivity", ok,
            f"max bucket bias/RMSE difference {diff:.5f} (<= .001), monotonicity violations {violations}")
    assert ok


# ---------------------------------------------------------------------------
# 5, 6. VB against Gibbs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def vb_vs_gibbs():
    t0 = time.perf_counter()
    X, truth = simulate(SimConfig(n=2000, design="K3J34", seed=1), 0)
    vb = fit(X, truth.qmatrix)
    mc = gibbs_fit(X, truth.qmatrix, chain_config=ChainConfig(n_chains=3, n_iter=5000, burn_in=2000))
    return compare_fits(vb, mc), time.perf_counter() - t0


def test_c5_vb_gibbs_agreement(vb_vs_gibbs, verdict):
    c, elapsed = vb_vs_gibbs
    ok = (c["max_rhat"] < 1.05 and c["vb_converged"] and c["max_abs_eap_theta_diff"] <= 0.03
          and c["max_abs_eap_pi_diff"] <= 0.005 and c["pattern_agreement"] >= 0.99 and elapsed < 600)
    verdict("C5 VB-Gibbs agreement", ok,
            f"max R-hat {c['max_rhat']:.4f} (< 1.05); max |dEAP theta| {c['max_abs_eap_theta_diff']:.4f} "
            f"(<= .03); max |dEAP pi| {c['max_abs_eap_pi_diff']:.5f} (<= .005); pattern agreement "
            f"{c['pattern_agreement']:.4f} (>= .99); {elapsed:.0f}s (< 600s)")
    assert ok


def test_c6_posterior_sd_bound(vb_vs_gibbs, verdict):
    c, _ = vb_vs_gibbs
    ok = c["max_sd_theta_excess"] <= 0.01
    verdict("C6 posterior SDs", ok,
            f"max VB-minus-Gibbs SD {c['max_sd_theta_excess']:+.4f} (<= +.01); VB SD below Gibbs on "
            f"{c['share_vb_sd_below_gibbs']:.0%} of theta, mean difference {c['mean_sd_theta_diff']:+.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 8. determinism and scaling
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_data():
    return simulate(DESK, 0)


def test_c8_bit_identical_across_cores(desk_data, verdict):
    X, truth = desk_data
    fits = {c: fit(X, truth.qmatrix, config=FitConfig(cores=c)) for c in (1, 2, 8)}
    base = fits[1]
    same = all(f.state.vlb_trace == base.state.vlb_trace
               and all(np.array_equal(a, b) for a, b in zip(f.eap_theta, base.eap_theta))
               and np.array_equal(f.eap_pi, base.eap_pi) for f in fits.values())
    verdict("C8a determinism", same,
            f"vlb_trace bit-identical for cores 1/2/8 over {base.iterations} iterations")
    assert same


def test_c8_parallel_speedup(desk_data, verdict):
    X, truth = desk_data
    rows = bench(truth.qmatrix, X, cores_list=(1, 8))
    speedup = rows[-1]["speedup"]
    ok = speedup >= 2.0
    verdict("C8b speedup 1->8 cores", ok,
            f"speedup {speedup:.2f}x (>= 2x) with {len(os.sched_getaffinity(0))} available core(s); "
            f"wall {rows[0]['wall_time']:.2f}s vs {rows[-1]['wall_time']:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 9. effects
# ---------------------------------------------------------------------------


def test_c9_effects_round_trip(verdict):
    rng = np.random.default_rng(11)
    round_trip = dina = 0.0
    n_items = 0
    for design in ("K4J60", "K7J60", "K3J34"):
        q = builtin_qmatrix(design)
        gs = build_gmatrices(q)
        generated = gen_item_params(q, "collapsed", 3)
        for g, t in zip(gs, generated):
            if g.attributes.size > 4:
                continue
            n_items += 1
            for theta in (t, rng.uniform(0.01, 0.99, g.n_patterns)):
                eff = theta_to_delta(theta, g.patterns)
                round_trip = max(round_trip, float(np.abs(delta_to_theta(eff, g.patterns) - theta).max()))
    for k in (2, 3, 4):
        pats = np.array(list(itertools.product((0, 1), repeat=k)))
        theta = np.where(pats.all(axis=1), 0.88, 0.17)
        mains = [v for s, v in theta_to_delta(theta, pats).as_dict().items() if len(s) == 1]
        dina = max(dina, max(abs(v) for v in mains))
    ok = round_trip <= 1e-12 and dina <= 1e-12
    verdict("C9 effects round trip", ok,
            f"{n_items} items with K* <= 4, max reconstruction error {round_trip:.2e} (<= 1e-12); "
            f"DINA main effects max {dina:.2e} (<= 1e-12)")
    assert ok


# ---------------------------------------------------------------------------
# substituted K=7 grid: property check only
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_k7_convergence_property(verdict):
    reports, _ = run_replications(SimConfig(n=3000, design="K7J60", rho=0.1, seed=1), 3, FitConfig(cores=8))
    rate = reports["weakly_informative"].convergence_rate
    ok = rate == 1.0
    verdict("K7 property check", ok, f"K=7 N=3000, 3 replications, convergence {rate:.0%}")
    assert ok
