"""Synthetic data for recovery studies.

Attribute levels come from thresholding a correlated standard normal vector
at the ``m / M_k`` quantiles, item parameters from a linear ramp between a
per-item guessing floor and slip ceiling, and responses from the resulting
Bernoulli model. All randomness is drawn from named sub-streams of one master
seed (see :func:`substream`), so a (config, seed) pair reproduces its data
bit for bit and replications can run in any order.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm

from .attributes import (
    GMatrix,
    ProfileSpace,
    QMatrix,
    build_gmatrices,
    enumerate_profiles,
    mixed_radix_index,
)

DESIGNS: tuple[str, ...] = ("K4J60", "K4J120", "K7J60", "K7J120", "K3J34")


def substream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(purpose, *keys)`` derived from ``seed``."""
    tag = zlib.crc32(purpose.encode())
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(tag, *map(int, keys))))


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


# ---------------------------------------------------------------------------
# configs and truth
# ---------------------------------------------------------------------------


@dataclass
class SimConfig:
    n: int = 10000
    design: str = "K4J60"
    n_levels: int = 3
    rho: float = 0.1
    flavor: str = "collapsed"
    seed: int = 1
    p_low_range: tuple[float, float] = (0.05, 0.25)
    p_high_range: tuple[float, float] = (0.75, 0.95)
    truth_mc_draws: int = 10_000_000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sample size must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        lo, hi = self.p_low_range, self.p_high_range
        if not (0 < lo[0] <= lo[1] < 1 and 0 < hi[0] <= hi[1] < 1):
            raise ValueError("probability ranges must lie inside (0, 1)")
        if hi[0] <= lo[1]:
            raise ValueError("p_high_range must lie entirely above p_low_range")
        self.p_low_range = tuple(map(float, lo))
        self.p_high_range = tuple(map(float, hi))


@dataclass
class SimTruth:
    qmatrix: QMatrix
    theta: list[NDArray[np.float64]]
    pi: NDArray[np.float64] | None
    profiles: NDArray[np.int64]
    flavor: str = "collapsed"
    meta: dict = field(default_factory=dict)

    @property
    def profile_index(self) -> NDArray[np.int64]:
        return mixed_radix_index(self.profiles, self.qmatrix.levels)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def level_cutpoints(n_levels: int) -> NDArray[np.float64]:
    """Interior standard-normal cutpoints ``Phi^-1(m / M)`` for ``m = 1..M-1``."""
    return norm.ppf(np.arange(1, n_levels) / n_levels)


def _compound_symmetric_cholesky(k: int, rho: float) -> NDArray[np.float64]:
    sigma = np.full((k, k), rho)
    np.fill_diagonal(sigma, 1.0)
    return np.linalg.cholesky(sigma)


def gen_profiles(n: int, levels: Sequence[int] | int, rho: float, seed=None,
                 n_attributes: int | None = None) -> NDArray[np.int64]:
    """Correlated polytomous profiles by thresholding ``N(0, Sigma)`` draws.

    ``levels`` is either a per-attribute sequence or a single M shared by
    ``n_attributes`` attributes. ``Sigma`` has unit diagonal and ``rho`` off it.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    if np.isscalar(levels):
        if n_attributes is None:
            raise ValueError("n_attributes is required with a scalar number of levels")
        levels = [int(levels)] * n_attributes
    levels = [int(m) for m in levels]
    rng = _rng(seed)
    chol = _compound_symmetric_cholesky(len(levels), rho)
    latent = rng.standard_normal((n, len(levels))) @ chol.T
    out = np.empty((n, len(levels)), dtype=np.int64)
    for k, m in enumerate(levels):
        out[:, k] = np.searchsorted(level_cutpoints(m), latent[:, k], side="right")
    return out


def sample_profiles(n: int, pi, space: ProfileSpace, seed=None) -> NDArray[np.int64]:
    """Profiles drawn from an explicit mixing distribution over ``space``."""
    pi = np.asarray(pi, dtype=np.float64)
    pi = pi / pi.sum()
    idx = _rng(seed).choice(space.n_profiles, size=n, p=pi)
    return space.profiles[idx].copy()


def ramp_theta(g: GMatrix, levels: Sequence[int], p_low: float, p_high: float) -> NDArray[np.float64]:
    """Linear ramp from ``p_low`` (nothing mastered) to ``p_high`` (everything mastered).

    Collapsed patterns move by the share of required attributes mastered;
    reduced patterns by the share of attainable levels reached.
    """
    patterns = g.patterns.astype(np.float64)
    if g.flavor == "collapsed":
        frac = patterns.sum(axis=1) / patterns.shape[1]
    else:
        top = np.asarray(levels)[g.attributes] - 1
        frac = patterns.sum(axis=1) / top.sum()
    return p_low + frac * (p_high - p_low)


def gen_item_params(qmatrix: QMatrix, flavor: str = "collapsed", seed=None,
                    p_low_range=(0.05, 0.25), p_high_range=(0.75, 0.95)) -> list[NDArray[np.float64]]:
    """True correct-response probabilities for every item pattern."""
    rng = _rng(seed)
    gmatrices = build_gmatrices(qmatrix, None, flavor)
    theta = []
    for g in gmatrices:
        p_low = rng.uniform(*p_low_range)
        p_high = rng.uniform(*p_high_range)
        theta.append(ramp_theta(g, qmatrix.levels, p_low, p_high))
    return theta


def gen_responses(profiles, qmatrix: QMatrix, theta: Sequence[NDArray], flavor: str = "collapsed",
                  seed=None) -> NDArray[np.uint8]:
    """Bernoulli responses given each examinee's profile."""
    rng = _rng(seed)
    space = enumerate_profiles(qmatrix.levels)
    gmatrices = build_gmatrices(qmatrix, space, flavor)
    idx = space.index_of(profiles) if len(profiles) else np.zeros(0, dtype=np.int64)
    prob = np.empty((idx.size, qmatrix.n_items))
    for j, g in enumerate(gmatrices):
        prob[:, j] = np.asarray(theta[j])[g.lookup[idx]]
    return (rng.random(prob.shape) < prob).astype(np.uint8)


def true_mixing_proportions(levels: Sequence[int], rho: float, mc_draws: int = 10_000_000,
                            seed=None, batch: int = 1_000_000) -> NDArray[np.float64]:
    """Monte Carlo profile frequencies under the thresholded-normal generator."""
    if mc_draws < 100_000:
        raise ValueError("mc_draws must be at least 1e5")
    levels = np.asarray(levels, dtype=np.int64)
    rng = _rng(seed)
    counts = np.zeros(int(np.prod(levels)), dtype=np.int64)
    remaining = int(mc_draws)
    while remaining > 0:
        take = min(batch, remaining)
        prof = gen_profiles(take, levels, rho, rng)
        counts += np.bincount(mixed_radix_index(prof, levels), minlength=counts.size)
        remaining -= take
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# built-in Q-matrices
# ---------------------------------------------------------------------------


def _multi_attribute_rows(n_attr: int, sizes: Sequence[int], targets: Sequence[int]) -> list[tuple[int, ...]]:
    """Pick attribute sets row by row so each attribute is used ``targets[k]`` times.

    Each row takes the unused-most combination among those with the largest
    total remaining demand; ties go to the lexicographically smallest set.
    """
    deficit = np.array(targets, dtype=np.int64)
    usage: dict[tuple[int, ...], int] = {}
    rows = []
    for size in sizes:
        best = None
        for combo in itertools.combinations(range(n_attr), size):
            d = deficit[list(combo)]
            if np.any(d <= 0):
                continue
            key = (int(d.sum()), -usage.get(combo, 0))
            if best is None or key > best[0]:
                best = (key, combo)
        if best is None:
            raise RuntimeError("attribute usage targets cannot be met")
        combo = best[1]
        usage[combo] = usage.get(combo, 0) + 1
        deficit[list(combo)] -= 1
        rows.append(combo)
    if np.any(deficit != 0):
        raise RuntimeError("attribute usage targets cannot be met")
    return rows


def _assign_levels(n_attr: int, rows: Sequence[tuple[int, ...]]) -> NDArray[np.int64]:
    """Fill each attribute set with required levels in {1, 2}.

    Row by row, take the level pattern that keeps every attribute's count of
    1s and 2s closest to even; prefer patterns not yet used for the same
    attribute set, then the lexicographically smallest.
    """
    balance = np.zeros(n_attr, dtype=np.int64)  # (#2s - #1s) per attribute
    used: dict[tuple[int, ...], set] = {}
    multi = np.zeros((len(rows), n_attr), dtype=np.int64)
    for r, combo in enumerate(rows):
        idx = list(combo)
        seen = used.setdefault(combo, set())
        best = None
        for pattern in itertools.product((1, 2), repeat=len(combo)):
            shift = np.where(np.array(pattern) == 2, 1, -1)
            key = (int(np.abs(balance[idx] + shift).sum()), pattern in seen, pattern)
            if best is None or key < best[0]:
                best = (key, pattern, shift)
        _, pattern, shift = best
        seen.add(pattern)
        balance[idx] += shift
        multi[r, idx] = pattern
    return multi


def _compose_qmatrix(n_attr: int, group_sizes: Sequence[tuple[int, int]], per_attribute: Sequence[int]) -> NDArray:
    ident = np.eye(n_attr, dtype=np.int64)
    sizes = [s for s, count in group_sizes for _ in range(count)]
    rows = _multi_attribute_rows(n_attr, sizes, np.asarray(per_attribute) - 2)
    return np.vstack([ident, 2 * ident, _assign_levels(n_attr, rows)])


# 34 items over a binary, a 3-level and a binary attribute
_K3J34 = np.array([
    [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0],
    [0, 1, 1], [0, 1, 0], [0, 1, 1], [1, 1, 0], [0, 2, 0], [0, 1, 0], [1, 1, 1],
    [1, 1, 1], [1, 1, 1], [1, 1, 0], [1, 1, 0], [1, 1, 0], [1, 1, 0], [1, 1, 0],
    [1, 1, 0], [1, 1, 0], [0, 0, 1], [0, 2, 0], [0, 0, 1], [1, 1, 0], [1, 1, 1],
    [1, 1, 1], [1, 1, 1], [0, 1, 1], [0, 1, 0], [0, 2, 0], [0, 2, 0],
], dtype=np.int64)

# skewed profile distribution for that structure, canonical order (sums to .998)
K3J34_PI = np.array([.259, .007, .018, .001, .004, .001, .064, .232, .020, .022, .002, .368])


def builtin_qmatrix(design: str) -> QMatrix:
    """Q-matrices of the standard simulation designs.

    ``K4J60``: both identity blocks (levels 1 and 2), 28 two-attribute and 24
    three-attribute items; every attribute is measured by 34 items.
    ``K7J60``: both identity blocks, 14 two-, 21 three- and 11 four-attribute
    items with per-attribute counts (20, 21, 22, 23, 22, 21, 20).
    The ``J120`` designs stack the ``J60`` matrix twice. ``K3J34`` is the
    34-item, levels (2, 3, 2) structure used for sampler comparisons.
    """
    if design == "K3J34":
        return QMatrix(_K3J34, np.array([2, 3, 2]))
    if design in ("K4J60", "K4J120"):
        q = QMatrix.uniform(_compose_qmatrix(4, [(2, 28), (3, 24)], [34] * 4), 3)
    elif design in ("K7J60", "K7J120"):
        q = QMatrix.uniform(_compose_qmatrix(7, [(2, 14), (3, 21), (4, 11)],
                                             [20, 21, 22, 23, 22, 21, 20]), 3)
    else:
        raise ValueError(f"unknown design {design!r}; choose from {DESIGNS}")
    return q.stacked(2) if design.endswith("J120") else q


# ---------------------------------------------------------------------------
# one-shot dataset
# ---------------------------------------------------------------------------


def config_qmatrix(config: SimConfig) -> QMatrix:
    """The design's Q-matrix, with entries capped when ``n_levels`` is not 3."""
    qmatrix = builtin_qmatrix(config.design)
    if config.design != "K3J34" and config.n_levels != 3:
        qmatrix = QMatrix(np.minimum(qmatrix.entries, config.n_levels - 1),
                          np.full(qmatrix.n_attributes, config.n_levels))
    return qmatrix


def simulate(config: SimConfig, replication: int = 0, with_pi: bool = True
             ) -> tuple[NDArray[np.uint8], SimTruth]:
    """Generate ``(X, truth)`` for one replication of a design.

    The true mixing proportions depend only on the design, levels and rho,
    so they use a stream that ignores ``replication``.
    """
    qmatrix = config_qmatrix(config)
    seed = config.seed
    theta = gen_item_params(qmatrix, config.flavor, substream(seed, "items", replication),
                            config.p_low_range, config.p_high_range)
    if config.design == "K3J34":
        space = enumerate_profiles(qmatrix.levels)
        pi = K3J34_PI / K3J34_PI.sum()
        profiles = sample_profiles(config.n, pi, space, substream(seed, "profiles", replication))
    else:
        profiles = gen_profiles(config.n, qmatrix.levels, config.rho,
                                substream(seed, "profiles", replication))
        pi = None
        if with_pi:
            pi = true_mixing_proportions(qmatrix.levels, config.rho, config.truth_mc_draws,
                                         substream(seed, "truth-pi"))
    X = gen_responses(profiles, qmatrix, theta, config.flavor, substream(seed, "responses", replication))
    truth = SimTruth(qmatrix, theta, pi, profiles, config.flavor,
                     meta={"truth_mc_draws": config.truth_mc_draws, "replication": replication})
    return X, truth
