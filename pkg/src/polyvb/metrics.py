"""Recovery metrics against simulation truth, aggregated the way the
simulation tables report them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .attributes import GMatrix


@dataclass
class BucketStats:
    n_attributes: int
    bias: float
    rmse: float
    n_parameters: int


@dataclass
class RecoveryReport:
    theta: list[BucketStats]
    pi_bias_max: float
    pi_bias_min: float
    pi_rmse_max: float
    pi_rmse_min: float
    eacr: NDArray[np.float64]
    pacr: float
    convergence_rate: float
    mean_wall_time: float
    extra: dict = field(default_factory=dict)

    def theta_table(self) -> dict[int, tuple[float, float]]:
        return {b.n_attributes: (b.bias, b.rmse) for b in self.theta}

    def to_dict(self) -> dict:
        return {
            "theta": [vars(b) for b in self.theta],
            "pi": {"bias_max": self.pi_bias_max, "bias_min": self.pi_bias_min,
                   "rmse_max": self.pi_rmse_max, "rmse_min": self.pi_rmse_min},
            "eacr": self.eacr.tolist(),
            "pacr": self.pacr,
            "convergence_rate": self.convergence_rate,
            "mean_wall_time": self.mean_wall_time,
            **self.extra,
        }


def parameter_bias_rmse(estimates, truth) -> tuple[NDArray, NDArray]:
    """Per-parameter bias and RMSE over replications (rows of ``estimates``)."""
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape[1:] != truth.shape:
        raise ValueError(f"estimates have shape {est.shape[1:]}, truth {truth.shape}")
    err = est - truth
    return err.mean(axis=0), np.sqrt((err ** 2).mean(axis=0))


def bias_rmse_theta(estimates: Sequence[Sequence[NDArray]], truth: Sequence[NDArray],
                    k_star: Sequence[int]) -> list[BucketStats]:
    """Bias/RMSE of item-pattern probabilities, averaged within buckets of K*.

    ``estimates[t][j]`` is replication ``t``'s estimate for item ``j``.
    """
    if len(estimates) == 0:
        raise ValueError("need at least one replication")
    n_items = len(truth)
    if len(k_star) != n_items:
        raise ValueError("k_star must give one entry per item")
    for t, rep in enumerate(estimates):
        if len(rep) != n_items or any(np.shape(e) != np.shape(tv) for e, tv in zip(rep, truth)):
            raise ValueError(f"replication {t} does not match the truth's item/pattern layout")
    biases: dict[int, list] = {}
    rmses: dict[int, list] = {}
    for j in range(n_items):
        b, r = parameter_bias_rmse([rep[j] for rep in estimates], truth[j])
        biases.setdefault(int(k_star[j]), []).append(b)
        rmses.setdefault(int(k_star[j]), []).append(r)
    out = []
    for k in sorted(biases):
        b = np.concatenate(biases[k])
        r = np.concatenate(rmses[k])
        out.append(BucketStats(k, float(b.mean()), float(r.mean()), int(b.size)))
    return out


def bias_rmse_pi(estimates, pi_true) -> tuple[float, float, float, float]:
    """Largest/smallest bias and RMSE over the mixing proportions."""
    bias, rmse = parameter_bias_rmse(estimates, pi_true)
    return float(bias.max()), float(bias.min()), float(rmse.max()), float(rmse.min())


def classification_rates(estimated, true) -> tuple[NDArray[np.float64], float]:
    """Element-wise (per attribute) and pattern-wise exact-match rates.

    Accepts one ``(N, K)`` array or a sequence of them (one per replication);
    rates are averaged over examinees, then over replications.
    """
    est = np.asarray(estimated)
    tru = np.asarray(true)
    if est.ndim == 2:
        est, tru = est[None], tru[None]
    if est.shape != tru.shape:
        raise ValueError(f"profile arrays differ in shape: {est.shape} vs {tru.shape}")
    match = est == tru
    eacr = match.mean(axis=1).mean(axis=0)
    pacr = float(match.all(axis=2).mean(axis=1).mean())
    return eacr, pacr


def monotonicity_check(eap_theta: Sequence[NDArray], gmatrices: Sequence[GMatrix]
                       ) -> list[tuple[int, int, int]]:
    """Pairs of item patterns where the estimate decreases as mastery increases.

    Patterns are compared under the coordinatewise partial order; each
    violation is reported as ``(item, lower_pattern_row, higher_pattern_row)``.
    """
    violations = []
    for j, (theta, g) in enumerate(zip(eap_theta, gmatrices)):
        pats = g.patterns
        below = np.all(pats[:, None, :] <= pats[None, :, :], axis=2)
        np.fill_diagonal(below, False)
        lo, hi = np.nonzero(below)
        bad = theta[lo] > theta[hi]
        violations.extend((j, int(a), int(b)) for a, b in zip(lo[bad], hi[bad]))
    return violations
