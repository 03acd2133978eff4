import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyvb.attributes import QMatrix, build_gmatrices
from polyvb.metrics import (bias_rmse_pi, bias_rmse_theta, classification_rates,
                            monotonicity_check, parameter_bias_rmse)

TRUTH = [np.array([0.2, 0.8]), np.array([0.1, 0.4, 0.5, 0.9]), np.array([0.3, 0.7])]
KSTAR = [1, 2, 1]


def test_exact_estimates_zero():
    stats = bias_rmse_theta([TRUTH, TRUTH], TRUTH, KSTAR)
    assert all(b.bias == 0 and b.rmse == 0 for b in stats)
    assert [b.n_attributes for b in stats] == [1, 2]
    assert [b.n_parameters for b in stats] == [4, 4]


def test_constant_offset():
    est = [[t + 0.01 for t in TRUTH]]
    for b in bias_rmse_theta(est, TRUTH, KSTAR):
        assert b.bias == pytest.approx(0.01) and b.rmse == pytest.approx(0.01)


def test_symmetric_offsets_cancel_in_bias():
    est = [[t + 0.01 for t in TRUTH], [t - 0.01 for t in TRUTH]]
    for b in bias_rmse_theta(est, TRUTH, KSTAR):
        assert abs(b.bias) < 1e-15 and b.rmse == pytest.approx(0.01)


def test_single_replication_reduces_to_error():
    rng = np.random.default_rng(0)
    est = [t + rng.normal(0, 0.02, t.shape) for t in TRUTH]
    bias, rmse = parameter_bias_rmse([np.concatenate(est)], np.concatenate(TRUTH))
    err = np.concatenate(est) - np.concatenate(TRUTH)
    assert np.allclose(bias, err) and np.allclose(rmse, np.abs(err))


def test_layout_mismatch_rejected():
    with pytest.raises(ValueError):
        bias_rmse_theta([TRUTH[:2]], TRUTH, KSTAR)
    with pytest.raises(ValueError):
        bias_rmse_theta([[TRUTH[0], TRUTH[0], TRUTH[2]]], TRUTH, KSTAR)
    with pytest.raises(ValueError):
        bias_rmse_theta([], TRUTH, KSTAR)


def test_pi_extremes():
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    assert bias_rmse_pi([pi], pi) == (0.0, 0.0, 0.0, 0.0)
    est = pi.copy()
    est[2] += 0.002
    bmax, bmin, rmax, rmin = bias_rmse_pi([est], pi)
    assert bmax == pytest.approx(0.002) and bmin == 0.0
    assert rmax == pytest.approx(0.002) and rmin == 0.0


def test_pi_biases_sum_to_zero_on_simplex():
    rng = np.random.default_rng(1)
    pi = rng.dirichlet(np.ones(9))
    est = rng.dirichlet(np.ones(9) * 50, size=5)
    bias, _ = parameter_bias_rmse(est, pi)
    assert abs(bias.sum()) < 1e-12


def test_classification_perfect_and_one_miss():
    true = np.random.default_rng(2).integers(0, 3, size=(10, 4))
    eacr, pacr = classification_rates(true, true)
    assert np.all(eacr == 1) and pacr == 1
    est = true.copy()
    est[3, 1] = (est[3, 1] + 1) % 3
    eacr, pacr = classification_rates(est, true)
    assert eacr.tolist() == [1, 0.9, 1, 1] and pacr == pytest.approx(0.9)


def test_classification_shape_mismatch():
    with pytest.raises(ValueError):
        classification_rates(np.zeros((5, 2)), np.zeros((6, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 40), st.integers(1, 5), st.integers(0, 2**31))
def test_rates_bounded_and_pacr_below_eacr(reps, n, k, seed):
    rng = np.random.default_rng(seed)
    true = rng.integers(0, 3, size=(reps, n, k))
    est = np.where(rng.random(true.shape) < 0.8, true, rng.integers(0, 3, size=true.shape))
    eacr, pacr = classification_rates(est, true)
    assert np.all((eacr >= 0) & (eacr <= 1)) and 0 <= pacr <= 1
    assert pacr <= eacr.min() + 1e-15
    perm = rng.permutation(n)
    e2, p2 = classification_rates(est[:, perm], true[:, perm])
    assert np.allclose(e2, eacr) and p2 == pytest.approx(pacr)


def test_monotonicity_ramp_clean():
    q = QMatrix.uniform([[1, 2], [2, 0]], 3)
    gs = build_gmatrices(q)
    assert monotonicity_check([np.array([0.1, 0.4, 0.4, 0.9]), np.array([0.2, 0.8])], gs) == []


def test_monotonicity_flags_drop():
    q = QMatrix.uniform([[1, 2]], 3)
    gs = build_gmatrices(q)
    # patterns (0,0),(0,1),(1,0),(1,1): (1,0) above (1,1)
    v = monotonicity_check([np.array([0.1, 0.3, 0.95, 0.9])], gs)
    assert v == [(0, 2, 3)]


def test_monotonicity_ignores_incomparable_and_ties():
    q = QMatrix.uniform([[1, 2]], 3)
    gs = build_gmatrices(q)
    # (0,1) above (1,0) is fine; equal values are not violations
    assert monotonicity_check([np.array([0.1, 0.6, 0.3, 0.6])], gs) == []


def test_monotonicity_reduced_partial_order():
    q = QMatrix.uniform([[2, 0]], 3)
    gs = build_gmatrices(q, flavor="reduced")
    v = monotonicity_check([np.array([0.2, 0.7, 0.6])], gs)
    assert v == [(0, 1, 2)]
