"""Conjugate Gibbs sampler for the same model, used as an accuracy reference.

One sweep draws every class label from its full conditional, then the
mixing proportions from their Dirichlet conditional and each item-pattern
probability from its Beta conditional, using hard counts from the labels.
Chains get independent generators spawned from one seed, so results do not
depend on whether chains run sequentially or on a thread pool.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import ndtri
from scipy.stats import rankdata

from . import _kernels
from .attributes import GMatrix, ProfileSpace, QMatrix, build_gmatrices, enumerate_profiles
from .vb import Priors, _as_responses, _lookup, _pad, default_priors


@dataclass
class ChainConfig:
    n_chains: int = 3
    n_iter: int = 5000
    burn_in: int = 2000
    seed: int = 0
    thin: int = 1
    parallel: bool = True

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("need at least one chain")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.n_iter, self.thin))


@dataclass
class McmcSummary:
    eap_theta: list[NDArray[np.float64]]
    sd_theta: list[NDArray[np.float64]]
    rhat_theta: list[NDArray[np.float64]]
    eap_pi: NDArray[np.float64]
    sd_pi: NDArray[np.float64]
    rhat_pi: NDArray[np.float64]
    map_profiles: NDArray[np.int64]
    class_frequencies: NDArray[np.float64] = field(repr=False)
    wall_time: float = 0.0
    theta_draws: NDArray[np.float64] | None = field(default=None, repr=False)
    pi_draws: NDArray[np.float64] | None = field(default=None, repr=False)
    space: ProfileSpace | None = field(default=None, repr=False)
    gmatrices: list[GMatrix] | None = field(default=None, repr=False)

    @property
    def max_rhat(self) -> float:
        parts = [self.rhat_pi] + list(self.rhat_theta)
        return float(max(np.max(p) for p in parts if p.size))

    @property
    def map_attribute_profiles(self) -> NDArray[np.int64]:
        return self.space.profiles[self.map_profiles]


def split_rhat(draws) -> float:
    """Rank-normalized split R-hat.

    ``draws`` has shape ``(n_chains, n_draws)``. Pooled draws are replaced by
    normal scores of their average ranks, each chain is cut in half (dropping
    the middle draw when the length is odd) and the classic potential scale
    reduction is computed over the half-chains. Constant input returns 1.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    n_chains, n_draws = draws.shape
    half = n_draws // 2
    if half < 4:
        raise ValueError(f"need at least 4 draws per half-chain, got {half}")
    split = np.concatenate([draws[:, :half], draws[:, n_draws - half:]], axis=0)
    size = split.size
    ranks = rankdata(split, method="average").reshape(split.shape)
    z = ndtri((ranks - 0.375) / (size + 0.25))
    n = half
    means = z.mean(axis=1)
    within = z.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _run_chain(X, lookup, priors_padded, delta0, cfg: ChainConfig, rng):
    a0, b0 = priors_padded
    n_obs = X.shape[0]
    n_items, width = a0.shape
    n_profiles = delta0.size
    kept = cfg.n_kept

    # start from the prior
    pi = rng.dirichlet(delta0)
    theta = rng.beta(a0, b0)
    succ = np.zeros((n_items, width))
    fail = np.zeros((n_items, width))
    z = np.zeros(n_obs, dtype=np.int64)

    theta_draws = np.empty((kept, n_items, width))
    pi_draws = np.empty((kept, n_profiles))
    class_counts = np.zeros((n_obs, n_profiles), dtype=np.int64)
    rows = np.arange(n_obs)
    k = 0
    for it in range(cfg.n_iter):
        tables = _kernels.item_tables(lookup, np.log(theta), np.log1p(-theta))
        loglik = np.empty((n_obs, n_profiles))
        _kernels.loglik_rows(X, tables, 0, n_obs, loglik)
        _kernels.sample_classes(loglik, np.log(pi), rng.random(n_obs), z)
        pi = rng.dirichlet(delta0 + np.bincount(z, minlength=n_profiles))
        _kernels.hard_bucket_counts(X, lookup, z, succ, fail)
        theta = rng.beta(a0 + succ, b0 + fail)
        # guard the log against draws that round to exactly 0 or 1
        np.clip(theta, 1e-300, 1.0 - 1e-16, out=theta)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            theta_draws[k] = theta
            pi_draws[k] = pi
            class_counts[rows, z] += 1
            k += 1
    return theta_draws, pi_draws, class_counts


def gibbs_fit(X, qmatrix: QMatrix, flavor: str = "collapsed", priors: Priors | None = None,
              chain_config: ChainConfig | None = None, prior_scheme: str = "weakly_informative",
              keep_draws: bool = False) -> McmcSummary:
    """Run the Gibbs sampler and summarize post-burn-in draws.

    Chains start from a prior draw of (pi, theta). Parameters are summarized
    by posterior mean, SD and rank-normalized split R-hat; examinees by the
    most frequent sampled class (lowest index on ties).
    """
    cfg = chain_config or ChainConfig()
    t0 = time.perf_counter()
    X = _as_responses(X, qmatrix.n_items)
    space = enumerate_profiles(qmatrix.levels)
    gmatrices = build_gmatrices(qmatrix, space, flavor)
    if priors is None:
        priors = default_priors(space, gmatrices, prior_scheme)
    priors.check_against(space.n_profiles, gmatrices)
    lookup = _lookup(gmatrices, space.n_profiles)
    padded = (_pad(priors.a0), _pad(priors.b0))
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    rngs = [np.random.default_rng(s) for s in seeds]

    def chain(c):
        return _run_chain(X, lookup, padded, priors.delta0, cfg, rngs[c])

    if cfg.parallel and cfg.n_chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_chains) as pool:
            results = list(pool.map(chain, range(cfg.n_chains)))
    else:
        results = [chain(c) for c in range(cfg.n_chains)]

    theta_draws = np.stack([r[0] for r in results])  # (chains, kept, J, P)
    pi_draws = np.stack([r[1] for r in results])  # (chains, kept, L)
    class_counts = sum(r[2] for r in results)

    eap_theta, sd_theta, rhat_theta = [], [], []
    for j, g in enumerate(gmatrices):
        block = theta_draws[:, :, j, : g.n_patterns]
        flat = block.reshape(-1, g.n_patterns)
        eap_theta.append(flat.mean(axis=0))
        sd_theta.append(flat.std(axis=0, ddof=1))
        rhat_theta.append(np.array([split_rhat(block[:, :, p]) for p in range(g.n_patterns)]))
    flat_pi = pi_draws.reshape(-1, space.n_profiles)
    freq = class_counts / class_counts.sum(axis=1, keepdims=True) if X.shape[0] else \
        np.zeros((0, space.n_profiles))
    return McmcSummary(
        eap_theta=eap_theta,
        sd_theta=sd_theta,
        rhat_theta=rhat_theta,
        eap_pi=flat_pi.mean(axis=0),
        sd_pi=flat_pi.std(axis=0, ddof=1),
        rhat_pi=np.array([split_rhat(pi_draws[:, :, l]) for l in range(space.n_profiles)]),
        map_profiles=np.argmax(class_counts, axis=1).astype(np.int64) if X.shape[0] else
        np.zeros(0, dtype=np.int64),
        class_frequencies=freq,
        wall_time=time.perf_counter() - t0,
        theta_draws=theta_draws if keep_draws else None,
        pi_draws=pi_draws if keep_draws else None,
        space=space,
        gmatrices=gmatrices,
    )
