"""Simulation-study drivers: replications, VB-vs-Gibbs comparison, timing."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .attributes import QMatrix
from .gibbs import McmcSummary
from .metrics import RecoveryReport, bias_rmse_pi, bias_rmse_theta, classification_rates
from .simulate import SimConfig, config_qmatrix, simulate, substream, true_mixing_proportions
from .vb import FitConfig, FitReport, fit

logger = logging.getLogger(__name__)


@dataclass
class ReplicationResult:
    replication: int
    scheme: str
    report: FitReport | None
    error: str | None = None


def _one(config: SimConfig, rep: int, schemes, fit_config: FitConfig, pi_true):
    X, truth = simulate(config, rep, with_pi=False)
    if pi_true is not None:
        truth.pi = pi_true
    out = []
    for scheme in schemes:
        try:
            rpt = fit(X, truth.qmatrix, config.flavor, config=fit_config, prior_scheme=scheme)
            out.append(ReplicationResult(rep, scheme, rpt))
        except Exception as exc:  # recorded; the study keeps going
            logger.warning("replication %d (%s) failed: %s", rep, scheme, exc)
            out.append(ReplicationResult(rep, scheme, None, repr(exc)))
    return truth, out


def run_replications(config: SimConfig, reps: int, fit_config: FitConfig | None = None,
                     schemes=("weakly_informative",), workers: int | None = None,
                     pi_true=None, exclusive: bool = True) -> tuple[dict[str, RecoveryReport], dict]:
    """Simulate ``reps`` datasets, fit each under every prior scheme, aggregate.

    Replications run on ``workers`` threads; when more than one worker is used
    and ``exclusive`` is set, each fit runs with ``cores=1`` so the two levels
    of parallelism do not oversubscribe the machine.

    Returns ``(reports, raw)`` where ``reports[scheme]`` is a RecoveryReport and
    ``raw`` holds the per-replication truths and fit results.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    fit_config = fit_config or FitConfig()
    workers = workers or 1
    if workers > 1 and exclusive:
        fit_config = replace(fit_config, cores=1)
    qmatrix = config_qmatrix(config)
    if pi_true is None and config.design != "K3J34":
        pi_true = true_mixing_proportions(qmatrix.levels, config.rho, config.truth_mc_draws,
                                          substream(config.seed, "truth-pi"))
    jobs = range(reps)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: _one(config, t, schemes, fit_config, pi_true), jobs))
    else:
        results = [_one(config, t, schemes, fit_config, pi_true) for t in jobs]

    truths = [r[0] for r in results]
    if pi_true is None:
        pi_true = truths[0].pi
    reports = {}
    for scheme in schemes:
        fits = [res for _, rs in results for res in rs if res.scheme == scheme]
        reports[scheme] = aggregate(truths, fits, pi_true)
    return reports, {"truths": truths, "fits": [res for _, rs in results for res in rs]}


def aggregate(truths, fits: list[ReplicationResult], pi_true) -> RecoveryReport:
    """Recovery metrics over the successful replications."""
    ok = [(truths[f.replication], f.report) for f in fits if f.report is not None]
    converged = sum(1 for f in fits if f.report is not None and f.report.converged)
    if not ok:
        nan = float("nan")
        return RecoveryReport([], nan, nan, nan, nan, np.array([]), nan, 0.0, nan,
                              extra={"failures": len(fits)})
    truth0 = ok[0][0]
    k_star = truth0.qmatrix.k_star()
    theta = bias_rmse_theta([r.eap_theta for _, r in ok], truth0.theta, k_star) \
        if all(np.array_equal(np.concatenate(t.theta), np.concatenate(truth0.theta)) for t, _ in ok) \
        else _pooled_theta(ok, k_star)
    pi_stats = bias_rmse_pi([r.eap_pi for _, r in ok], pi_true) if pi_true is not None else \
        (float("nan"),) * 4
    eacr, pacr = classification_rates([r.map_attribute_profiles for _, r in ok],
                                      [t.profiles for t, _ in ok])
    return RecoveryReport(
        theta=theta,
        pi_bias_max=pi_stats[0], pi_bias_min=pi_stats[1],
        pi_rmse_max=pi_stats[2], pi_rmse_min=pi_stats[3],
        eacr=eacr, pacr=pacr,
        convergence_rate=converged / len(fits),
        mean_wall_time=float(np.mean([r.wall_time for _, r in ok])),
        extra={"replications": len(fits), "failures": len(fits) - len(ok)},
    )


def _pooled_theta(ok, k_star):
    """Bias/RMSE when true item parameters differ between replications.

    Errors ``est - true`` are formed per replication, then treated exactly
    like estimates of a zero truth.
    """
    errors = [[e - t for e, t in zip(r.eap_theta, truth.theta)] for truth, r in ok]
    zeros = [np.zeros_like(t) for t in ok[0][0].theta]
    return bias_rmse_theta(errors, zeros, k_star)


# ---------------------------------------------------------------------------
# VB vs Gibbs
# ---------------------------------------------------------------------------


def compare_fits(vb_report: FitReport, mcmc: McmcSummary, rhat_limit: float = 1.05) -> dict:
    """Side-by-side differences between a VB fit and a Gibbs summary."""
    d_theta = [np.asarray(v) - np.asarray(g) for v, g in zip(vb_report.eap_theta, mcmc.eap_theta)]
    d_sd = [np.asarray(v) - np.asarray(g) for v, g in zip(vb_report.sd_theta, mcmc.sd_theta)]
    flat = np.concatenate(d_theta)
    flat_sd = np.concatenate(d_sd)
    where = int(np.argmax(np.abs(flat)))
    item_of = np.concatenate([[j] * d.size for j, d in enumerate(d_theta)]).astype(int)
    pat_of = np.concatenate([np.arange(d.size) for d in d_theta]).astype(int)
    d_pi = vb_report.eap_pi - mcmc.eap_pi
    vb_prof = vb_report.map_attribute_profiles
    mc_prof = mcmc.map_attribute_profiles
    match = vb_prof == mc_prof
    max_rhat = mcmc.max_rhat
    return {
        "max_abs_eap_theta_diff": float(np.abs(flat).max()),
        "max_abs_eap_theta_diff_at": {"item": int(item_of[where]) + 1, "pattern": int(pat_of[where]) + 1},
        "max_abs_sd_theta_diff": float(np.abs(flat_sd).max()),
        "max_sd_theta_excess": float(flat_sd.max()),
        "share_vb_sd_below_gibbs": float(np.mean(flat_sd < 0)),
        "mean_sd_theta_diff": float(flat_sd.mean()),
        "max_abs_eap_pi_diff": float(np.abs(d_pi).max()),
        "max_abs_sd_pi_diff": float(np.abs(vb_report.sd_pi - mcmc.sd_pi).max()),
        "element_agreement": match.mean(axis=0).tolist() if match.size else [],
        "pattern_agreement": float(match.all(axis=1).mean()) if match.size else float("nan"),
        "vb_wall_time": vb_report.wall_time,
        "gibbs_wall_time": mcmc.wall_time,
        "wall_time_ratio": mcmc.wall_time / vb_report.wall_time if vb_report.wall_time else float("inf"),
        "max_rhat": max_rhat,
        "rhat_ok": bool(max_rhat < rhat_limit),
        "vb_converged": vb_report.converged,
    }


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------


def bench(qmatrix: QMatrix, X, cores_list=(1, 2, 4, 8), fit_config: FitConfig | None = None,
          dry_run: bool = False) -> list[dict]:
    """Wall time of one fit per core count; ``dry_run`` stops after one iteration.

    Kernels are compiled before timing so the first row is not penalized.
    """
    fit_config = fit_config or FitConfig()
    fit(X[: min(len(X), 10)], qmatrix, config=replace(fit_config, max_iter=1, cores=1))
    rows = []
    base = None
    for c in cores_list:
        cfg = replace(fit_config, cores=int(c), max_iter=1 if dry_run else fit_config.max_iter)
        t0 = time.perf_counter()
        rpt = fit(X, qmatrix, config=cfg)
        wall = time.perf_counter() - t0
        base = base if base is not None else wall
        rows.append({"cores": int(c), "wall_time": wall, "iterations": rpt.iterations,
                     "per_iteration": wall / rpt.iterations, "speedup": base / wall,
                     "converged": rpt.converged, "vlb": rpt.vlb})
    return rows


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1
