import numpy as np
import pytest

from polyvb.gibbs import McmcSummary
from polyvb.simulate import SimConfig, simulate
from polyvb.study import ReplicationResult, aggregate, bench, compare_fits, run_replications
from polyvb.vb import FitConfig, fit

CFG = SimConfig(n=300, design="K4J60", seed=5, truth_mc_draws=100_000)


@pytest.fixture(scope="module")
def one_fit():
    X, truth = simulate(CFG, 0)
    return X, truth, fit(X, truth.qmatrix, config=FitConfig(cores=1))


def _as_mcmc(rpt):
    return McmcSummary(rpt.eap_theta, rpt.sd_theta, [np.ones_like(t) for t in rpt.eap_theta],
                       rpt.eap_pi, rpt.sd_pi, np.ones_like(rpt.eap_pi), rpt.map_profiles,
                       np.zeros(1), wall_time=1.0, space=rpt.space, gmatrices=rpt.gmatrices)


def test_compare_identical_inputs_zero_deltas(one_fit):
    rpt = one_fit[2]
    c = compare_fits(rpt, _as_mcmc(rpt))
    assert c["max_abs_eap_theta_diff"] == 0 and c["max_abs_eap_pi_diff"] == 0
    assert c["max_abs_sd_theta_diff"] == 0 and c["pattern_agreement"] == 1.0
    assert c["element_agreement"] == [1.0] * 4 and c["rhat_ok"]


def test_compare_locates_largest_difference(one_fit):
    rpt = one_fit[2]
    mc = _as_mcmc(rpt)
    mc.eap_theta = [t.copy() for t in mc.eap_theta]
    mc.eap_theta[9][1] += 0.05
    c = compare_fits(rpt, mc)
    assert c["max_abs_eap_theta_diff"] == pytest.approx(0.05)
    assert c["max_abs_eap_theta_diff_at"] == {"item": 10, "pattern": 2}


def test_single_replication_bias_is_the_error(one_fit):
    X, truth, rpt = one_fit
    reports, raw = run_replications(CFG, 1, FitConfig(cores=1))
    rep = reports["weakly_informative"]
    assert rep.convergence_rate == 1.0 and rep.extra == {"replications": 1, "failures": 0}
    assert np.array_equal(raw["fits"][0].report.eap_pi, rpt.eap_pi)
    err = rpt.eap_pi - truth.pi
    assert rep.pi_bias_max == pytest.approx(np.abs(err).max())
    assert rep.pi_rmse_max == pytest.approx(np.abs(err).max())
    assert rep.pacr == pytest.approx(np.mean((rpt.map_attribute_profiles == truth.profiles).all(axis=1)))


def test_workers_do_not_change_results():
    a, _ = run_replications(CFG, 2, FitConfig(cores=2), workers=1)
    b, _ = run_replications(CFG, 2, FitConfig(cores=2), workers=2)
    ra, rb = a["weakly_informative"], b["weakly_informative"]
    assert ra.theta_table() == rb.theta_table() and ra.pacr == rb.pacr


def test_aggregate_counts_failures(one_fit):
    _, truth, rpt = one_fit
    fits = [ReplicationResult(0, "weakly_informative", rpt),
            ReplicationResult(0, "weakly_informative", None, "boom")]
    rep = aggregate([truth], fits, truth.pi)
    assert rep.convergence_rate == 0.5 and rep.extra["failures"] == 1
    empty = aggregate([truth], fits[1:], truth.pi)
    assert empty.convergence_rate == 0.0 and np.isnan(empty.pacr)


def test_run_replications_rejects_zero():
    with pytest.raises(ValueError):
        run_replications(CFG, 0)


def test_bench_rows(one_fit):
    X, truth, _ = one_fit
    rows = bench(truth.qmatrix, X, cores_list=(1, 2), dry_run=True)
    assert [r["cores"] for r in rows] == [1, 2]
    assert rows[0]["speedup"] == 1.0 and all(r["iterations"] == 1 for r in rows)
    assert rows[0]["vlb"] == rows[1]["vlb"]
