"""Intercept, main and interaction effects from pattern probabilities.

For an item with ``K*`` collapsed attributes the saturated probabilities
``theta`` over the ``2**K*`` patterns are re-expressed as

    theta(a) = d0 + sum_k d_k a_k + sum_{k<k'} d_kk' a_k a_k' + ... ,

by least squares on the full-factorial design matrix. With one row per
collapsed pattern the system is square and the fit is exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import qr, solve_triangular


@dataclass
class DeltaEffects:
    """Effects keyed by attribute subsets; ``()`` is the intercept.

    ``subsets`` index positions within the item's measured attributes.
    """

    subsets: list[tuple[int, ...]]
    values: NDArray[np.float64]

    def labels(self, attributes=None) -> list[str]:
        """Column labels like ``d0``, ``d1``, ``d12`` (1-based attribute numbers)."""
        names = []
        for s in self.subsets:
            if not s:
                names.append("d0")
                continue
            ids = [attributes[k] if attributes is not None else k for k in s]
            names.append("d" + "".join(str(int(i) + 1) for i in ids))
        return names

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(zip(self.subsets, self.values.tolist()))


def effect_subsets(n_attributes: int) -> list[tuple[int, ...]]:
    """All attribute subsets ordered by size, then lexicographically."""
    return [c for size in range(n_attributes + 1)
            for c in itertools.combinations(range(n_attributes), size)]


def design_matrix(patterns) -> tuple[NDArray[np.float64], list[tuple[int, ...]]]:
    """Rows ``[1, a_1, ..., a_1 a_2, ...]`` for each binary pattern."""
    patterns = np.atleast_2d(np.asarray(patterns))
    if not np.all((patterns == 0) | (patterns == 1)):
        raise ValueError("effects are defined on binary (collapsed) patterns only")
    subsets = effect_subsets(patterns.shape[1])
    D = np.ones((patterns.shape[0], len(subsets)))
    for c, s in enumerate(subsets):
        if s:
            D[:, c] = np.prod(patterns[:, list(s)], axis=1)
    return D, subsets


def theta_to_delta(theta, patterns) -> DeltaEffects:
    """Least-squares effects for one item via a QR factorization.

    ``patterns`` may repeat (overdetermined system); the design must still
    have full column rank, which holds whenever every binary pattern occurs.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    D, subsets = design_matrix(patterns)
    if D.shape[0] != theta.size:
        raise ValueError(f"{theta.size} probabilities for {D.shape[0]} patterns")
    if D.shape[0] < D.shape[1]:
        raise ValueError("fewer patterns than effects; the design is rank deficient")
    Qm, R = qr(D, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    values = solve_triangular(R, Qm.T @ theta)
    return DeltaEffects(subsets, values)


def delta_to_theta(effects: DeltaEffects, patterns) -> NDArray[np.float64]:
    D, subsets = design_matrix(patterns)
    if subsets != effects.subsets:
        raise ValueError("effects and patterns use different attribute counts")
    return D @ effects.values
