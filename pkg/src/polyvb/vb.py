"""Mean-field variational Bayes for the saturated polytomous-attribute DCM.

The model is a Bernoulli mixture over the ``L`` attribute profiles in which
each item only sees the pattern its G-matrix assigns to a profile:

    z_i ~ Categorical(pi),              pi ~ Dirichlet(delta0)
    x_ij | z_i = l ~ Bernoulli(theta_j[p_j(l)]),
    theta_jp ~ Beta(a0_jp, b0_jp)

The variational posterior factorizes as q(Z) q(theta) q(pi) with categorical,
Beta and Dirichlet factors. ``fit`` runs coordinate ascent on the lower bound
in the order VM -> pi -> VE, starting from uniform responsibilities.

Examinee-wise work (VE step, lower-bound rows) is split into contiguous row
chunks and item-wise work (VM step) into contiguous item chunks; chunks run
on a thread pool. Results do not depend on the number of chunks.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import betaln, digamma, gammaln

from . import _kernels
from .attributes import GMatrix, ProfileSpace, QMatrix, build_gmatrices, enumerate_profiles

logger = logging.getLogger(__name__)

PriorScheme = Literal["noninformative", "weakly_informative"]
PRIOR_SCHEMES: tuple[str, ...] = ("noninformative", "weakly_informative")


class NonFiniteError(FloatingPointError):
    """Raised when an iterate stops being finite."""


# ---------------------------------------------------------------------------
# priors and moments
# ---------------------------------------------------------------------------


@dataclass
class Priors:
    """Dirichlet concentration for pi and Beta hyperparameters per item pattern."""

    delta0: NDArray[np.float64]
    a0: list[NDArray[np.float64]]
    b0: list[NDArray[np.float64]]

    def __post_init__(self):
        self.delta0 = np.asarray(self.delta0, dtype=np.float64).ravel()
        self.a0 = [np.asarray(a, dtype=np.float64).ravel() for a in self.a0]
        self.b0 = [np.asarray(b, dtype=np.float64).ravel() for b in self.b0]
        if len(self.a0) != len(self.b0):
            raise ValueError("a0 and b0 must cover the same items")
        if np.any(self.delta0 <= 0):
            raise ValueError("Dirichlet concentrations must be positive")
        for j, (a, b) in enumerate(zip(self.a0, self.b0)):
            if a.shape != b.shape:
                raise ValueError(f"item {j}: a0 and b0 differ in length")
            if np.any(a <= 0) or np.any(b <= 0):
                raise ValueError(f"item {j}: Beta hyperparameters must be positive")

    def check_against(self, n_profiles: int, gmatrices: Sequence[GMatrix]) -> None:
        if self.delta0.size != n_profiles:
            raise ValueError(f"delta0 has {self.delta0.size} entries, expected {n_profiles}")
        if len(self.a0) != len(gmatrices):
            raise ValueError(f"priors cover {len(self.a0)} items, expected {len(gmatrices)}")
        for g, a in zip(gmatrices, self.a0):
            if a.size != g.n_patterns:
                raise ValueError(f"item {g.item}: {a.size} prior entries for {g.n_patterns} patterns")


def default_priors(space: ProfileSpace | int, gmatrices: Sequence[GMatrix],
                   scheme: PriorScheme = "weakly_informative") -> Priors:
    """Standard prior settings.

    ``noninformative`` puts Beta(1, 1) on every pattern. ``weakly_informative``
    encodes monotonicity softly: Beta(1, 2) (mean 1/3) on the pattern with no
    relevant attribute mastered, Beta(2, 1) (mean 2/3) on the full-mastery
    pattern, Beta(1, 1) elsewhere. Both use ``delta0 = 1``.
    """
    if scheme not in PRIOR_SCHEMES:
        raise ValueError(f"scheme must be one of {PRIOR_SCHEMES}, got {scheme!r}")
    n_profiles = space if isinstance(space, (int, np.integer)) else space.n_profiles
    a0, b0 = [], []
    for g in gmatrices:
        a = np.ones(g.n_patterns)
        b = np.ones(g.n_patterns)
        if scheme == "weakly_informative":
            # patterns are sorted, so row 0 is all-zero and the last row is top mastery
            b[0] = 2.0
            a[-1] = 2.0
        a0.append(a)
        b0.append(b)
    return Priors(np.ones(int(n_profiles)), a0, b0)


def expected_log_beta(a, b) -> tuple[NDArray, NDArray]:
    """``(E[log t], E[log(1-t)])`` for ``t ~ Beta(a, b)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("Beta parameters must be positive")
    total = digamma(a + b)
    return digamma(a) - total, digamma(b) - total


def expected_log_dirichlet(delta) -> NDArray:
    """``E[log pi_l]`` for ``pi ~ Dirichlet(delta)``."""
    delta = np.asarray(delta, dtype=np.float64)
    return digamma(delta) - digamma(delta.sum())


def posterior_sd_beta(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s = a + b
    return np.sqrt(a * b / (s * s * (s + 1.0)))


def posterior_sd_dirichlet(delta) -> NDArray:
    """Marginal standard deviations of a Dirichlet distribution."""
    delta = np.asarray(delta, dtype=np.float64)
    s = delta.sum()
    mean = delta / s
    return np.sqrt(mean * (1.0 - mean) / (s + 1.0))


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------


@dataclass
class VariationalState:
    r: NDArray[np.float64]
    delta_star: NDArray[np.float64]
    a_star: list[NDArray[np.float64]]
    b_star: list[NDArray[np.float64]]
    vlb_trace: list[float] = field(default_factory=list)

    @classmethod
    def from_priors(cls, priors: Priors, n_obs: int) -> "VariationalState":
        n_profiles = priors.delta0.size
        return cls(
            r=np.full((n_obs, n_profiles), 1.0 / n_profiles),
            delta_star=priors.delta0.copy(),
            a_star=[a.copy() for a in priors.a0],
            b_star=[b.copy() for b in priors.b0],
        )


@dataclass
class FitConfig:
    """Stopping rule, parallelism and initialization for ``fit``.

    ``init`` is ``"uniform"`` (every examinee starts at 1/L) or ``"dirichlet"``
    (rows drawn from a flat Dirichlet with ``seed``).
    """

    tol: float = 1e-4
    max_iter: int = 2000
    cores: int = 8
    init: str = "uniform"
    seed: int | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.cores < 1:
            raise ValueError("cores must be >= 1")
        if self.init not in ("uniform", "dirichlet"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "dirichlet" and self.seed is None:
            raise ValueError("dirichlet init needs a seed")


@dataclass
class FitReport:
    state: VariationalState
    converged: bool
    iterations: int
    eap_theta: list[NDArray[np.float64]]
    sd_theta: list[NDArray[np.float64]]
    eap_pi: NDArray[np.float64]
    sd_pi: NDArray[np.float64]
    map_profiles: NDArray[np.int64]
    wall_time: float
    space: ProfileSpace = field(repr=False)
    gmatrices: list[GMatrix] = field(repr=False)

    @property
    def vlb(self) -> float:
        return self.state.vlb_trace[-1]

    @property
    def map_attribute_profiles(self) -> NDArray[np.int64]:
        """MAP profiles as ``(N, K)`` level vectors."""
        return self.space.profiles[self.map_profiles]


# ---------------------------------------------------------------------------
# chunked execution
# ---------------------------------------------------------------------------


def chunk_bounds(n: int, chunks: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into ``chunks`` contiguous, nearly equal pieces."""
    chunks = max(1, min(int(chunks), max(n, 1)))
    edges = [n * c // chunks for c in range(chunks + 1)]
    return [(edges[c], edges[c + 1]) for c in range(chunks) if edges[c + 1] > edges[c]]


def _run_chunks(fn: Callable[[int, int], None], n: int, chunks: int,
                executor: ThreadPoolExecutor | None) -> None:
    bounds = chunk_bounds(n, chunks)
    if executor is None or len(bounds) <= 1:
        for start, stop in bounds:
            fn(start, stop)
        return
    futures = [executor.submit(fn, start, stop) for start, stop in bounds]
    for fut in futures:
        fut.result()


def _with_executor(chunks: int, executor, body):
    if executor is not None or chunks <= 1:
        return body(executor)
    with ThreadPoolExecutor(max_workers=chunks) as pool:
        return body(pool)


# ---------------------------------------------------------------------------
# packing between ragged per-item arrays and padded kernel arrays
# ---------------------------------------------------------------------------


def _as_responses(X, n_items: int | None = None) -> NDArray[np.uint8]:
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"responses must be a 2-D array, got shape {X.shape}")
    if n_items is not None and X.shape[1] != n_items:
        raise ValueError(f"responses have {X.shape[1]} items, Q-matrix has {n_items}")
    if X.size and not np.all((X == 0) | (X == 1)):
        raise ValueError("responses must be binary (0/1) with no missing entries")
    return np.ascontiguousarray(X, dtype=np.uint8)


def _lookup(gmatrices: Sequence[GMatrix], n_profiles: int) -> NDArray[np.int64]:
    if not gmatrices:
        return np.zeros((0, n_profiles), dtype=np.int64)
    return np.ascontiguousarray(np.stack([g.lookup for g in gmatrices]), dtype=np.int64)


def _pad(blocks: Sequence[NDArray], fill: float = 1.0) -> NDArray[np.float64]:
    width = max((b.size for b in blocks), default=1)
    out = np.full((len(blocks), width), fill)
    for j, b in enumerate(blocks):
        out[j, : b.size] = b
    return out


def _unpad(padded: NDArray, gmatrices: Sequence[GMatrix]) -> list[NDArray[np.float64]]:
    return [padded[j, : g.n_patterns].copy() for j, g in enumerate(gmatrices)]


def _tables(gmatrices, n_profiles, a_star, b_star):
    elog_t, elog_f = expected_log_beta(_pad(a_star), _pad(b_star))
    return _kernels.item_tables(_lookup(gmatrices, n_profiles), elog_t, elog_f)


# ---------------------------------------------------------------------------
# update steps
# ---------------------------------------------------------------------------


def _loglik(X, tables, n_profiles, chunks, executor):
    out = np.empty((X.shape[0], n_profiles))
    _run_chunks(lambda s, e: _kernels.loglik_rows(X, tables, s, e, out), X.shape[0], chunks, executor)
    return out


def _ve(X, gmatrices, state, chunks, executor):
    n_profiles = state.delta_star.size
    tables = _tables(gmatrices, n_profiles, state.a_star, state.b_star)
    elog_pi = expected_log_dirichlet(state.delta_star)
    loglik = np.empty((X.shape[0], n_profiles))
    r = np.empty((X.shape[0], n_profiles))

    def work(start, stop):
        _kernels.loglik_rows(X, tables, start, stop, loglik)
        _kernels.responsibilities_rows(loglik, elog_pi, start, stop, r)

    _run_chunks(work, X.shape[0], chunks, executor)
    return r, loglik


def ve_step(X, gmatrices: Sequence[GMatrix], state: VariationalState, priors: Priors,
            chunks: int = 1, executor: ThreadPoolExecutor | None = None) -> NDArray[np.float64]:
    """Update the responsibilities given the current q(theta) and q(pi).

    ``log rho_il = sum_j E[log p(x_ij | pattern of l)] + E[log pi_l]``,
    normalized per examinee with log-sum-exp.
    """
    priors.check_against(state.delta_star.size, gmatrices)
    X = _as_responses(X, len(gmatrices))
    return _with_executor(chunks, executor, lambda ex: _ve(X, gmatrices, state, chunks, ex)[0])


def update_pi(r, priors: Priors) -> NDArray[np.float64]:
    """Dirichlet update: expected class counts plus prior concentration."""
    r = np.asarray(r, dtype=np.float64)
    return r.sum(axis=0) + priors.delta0


def _vm(X, gmatrices, r, priors, chunks, executor):
    n_items = len(gmatrices)
    n_profiles = r.shape[1]
    width = max((g.n_patterns for g in gmatrices), default=1)
    succ = np.zeros((n_items, width))
    fail = np.zeros((n_items, width))
    lookup = _lookup(gmatrices, n_profiles)
    r = np.ascontiguousarray(r, dtype=np.float64)
    _run_chunks(lambda s, e: _kernels.bucket_counts_items(X, lookup, r, s, e, succ, fail),
                n_items, chunks, executor)
    a_star = [succ[j, : g.n_patterns] + priors.a0[j] for j, g in enumerate(gmatrices)]
    b_star = [fail[j, : g.n_patterns] + priors.b0[j] for j, g in enumerate(gmatrices)]
    return a_star, b_star


def vm_step(X, gmatrices: Sequence[GMatrix], r, priors: Priors, chunks: int = 1,
            executor: ThreadPoolExecutor | None = None):
    """Beta updates ``a* = a0 + soft successes``, ``b* = b0 + soft failures``.

    Returns per-item lists ``(a_star, b_star)``.
    """
    r = np.asarray(r, dtype=np.float64)
    priors.check_against(r.shape[1], gmatrices)
    X = _as_responses(X, len(gmatrices))
    if X.shape[0] != r.shape[0]:
        raise ValueError("responses and responsibilities disagree on N")
    return _with_executor(chunks, executor, lambda ex: _vm(X, gmatrices, r, priors, chunks, ex))


# ---------------------------------------------------------------------------
# lower bound
# ---------------------------------------------------------------------------


def _log_dirichlet_norm(delta):
    return gammaln(delta.sum()) - gammaln(delta).sum()


def vlb_terms(X, gmatrices: Sequence[GMatrix], state: VariationalState, priors: Priors,
              loglik: NDArray | None = None, chunks: int = 1,
              executor: ThreadPoolExecutor | None = None) -> dict[str, float]:
    """The seven expectations that make up the lower bound.

    Keys: ``loglik`` E[log p(X|Z,theta)], ``z_prior`` E[log p(Z|pi)],
    ``pi_prior`` E[log p(pi)], ``theta_prior`` E[log p(theta)],
    ``z_entropy`` E[log q(Z)], ``theta_q`` E[log q(theta)], ``pi_q`` E[log q(pi)].
    """
    X = _as_responses(X, len(gmatrices))
    r = np.ascontiguousarray(state.r, dtype=np.float64)
    n_obs, n_profiles = r.shape
    elog_pi = expected_log_dirichlet(state.delta_star)

    def body(ex):
        ll = loglik
        if ll is None:
            ll = _loglik(X, _tables(gmatrices, n_profiles, state.a_star, state.b_star),
                         n_profiles, chunks, ex)
        data = np.empty(n_obs)
        zpi = np.empty(n_obs)
        ent = np.empty(n_obs)
        _run_chunks(lambda s, e: _kernels.vlb_row_terms(ll, r, elog_pi, s, e, data, zpi, ent),
                    n_obs, chunks, ex)
        return data, zpi, ent

    data, zpi, ent = _with_executor(chunks, executor, body)

    a0 = np.concatenate(priors.a0) if priors.a0 else np.zeros(0)
    b0 = np.concatenate(priors.b0) if priors.b0 else np.zeros(0)
    a1 = np.concatenate(state.a_star) if state.a_star else np.zeros(0)
    b1 = np.concatenate(state.b_star) if state.b_star else np.zeros(0)
    elog_t, elog_f = expected_log_beta(a1, b1)
    d0, d1 = priors.delta0, state.delta_star

    return {
        "loglik": float(np.sum(data)),
        "z_prior": float(np.sum(zpi)),
        "pi_prior": float(_log_dirichlet_norm(d0) + np.sum((d0 - 1.0) * elog_pi)),
        "theta_prior": float(np.sum(-betaln(a0, b0) + (a0 - 1.0) * elog_t + (b0 - 1.0) * elog_f)),
        "z_entropy": float(np.sum(ent)),
        "theta_q": float(np.sum(-betaln(a1, b1) + (a1 - 1.0) * elog_t + (b1 - 1.0) * elog_f)),
        "pi_q": float(_log_dirichlet_norm(d1) + np.sum((d1 - 1.0) * elog_pi)),
    }


def compute_vlb(X, gmatrices: Sequence[GMatrix], state: VariationalState, priors: Priors,
                loglik: NDArray | None = None, chunks: int = 1,
                executor: ThreadPoolExecutor | None = None) -> float:
    """Variational lower bound on ``log p(X)`` for the current factors."""
    t = vlb_terms(X, gmatrices, state, priors, loglik=loglik, chunks=chunks, executor=executor)
    return (t["loglik"] + t["z_prior"] + t["pi_prior"] + t["theta_prior"]
            - t["z_entropy"] - t["theta_q"] - t["pi_q"])


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _initial_r(n_obs: int, n_profiles: int, config: FitConfig) -> NDArray[np.float64]:
    if config.init == "uniform":
        return np.full((n_obs, n_profiles), 1.0 / n_profiles)
    rng = np.random.default_rng(config.seed)
    return rng.dirichlet(np.ones(n_profiles), size=n_obs)


def _check_finite(iteration: int, vlb: float, state: VariationalState) -> None:
    if np.isfinite(vlb) and np.all(np.isfinite(state.r)) and np.all(np.isfinite(state.delta_star)):
        return
    raise NonFiniteError(
        f"non-finite iterate at iteration {iteration}: vlb={vlb}, "
        f"r finite={bool(np.all(np.isfinite(state.r)))}, "
        f"delta finite={bool(np.all(np.isfinite(state.delta_star)))}"
    )


def summarize(state: VariationalState, space: ProfileSpace, gmatrices: list[GMatrix],
              converged: bool, iterations: int, wall_time: float) -> FitReport:
    eap_theta = [a / (a + b) for a, b in zip(state.a_star, state.b_star)]
    sd_theta = [posterior_sd_beta(a, b) for a, b in zip(state.a_star, state.b_star)]
    eap_pi = state.delta_star / state.delta_star.sum()
    if state.r.shape[0]:
        map_profiles = np.argmax(state.r, axis=1).astype(np.int64)
    else:
        map_profiles = np.zeros(0, dtype=np.int64)
    return FitReport(
        state=state,
        converged=converged,
        iterations=iterations,
        eap_theta=eap_theta,
        sd_theta=sd_theta,
        eap_pi=eap_pi,
        sd_pi=posterior_sd_dirichlet(state.delta_star),
        map_profiles=map_profiles,
        wall_time=wall_time,
        space=space,
        gmatrices=gmatrices,
    )


def fit(X, qmatrix: QMatrix, flavor: str = "collapsed", priors: Priors | None = None,
        config: FitConfig | None = None, prior_scheme: PriorScheme = "weakly_informative",
        callback: Callable[[int, float], None] | None = None) -> FitReport:
    """Fit the model by coordinate ascent on the variational lower bound.

    Parameters
    ----------
    X : (N, J) array of 0/1 responses
    qmatrix : QMatrix
    flavor : {"collapsed", "reduced"}
        Which G-matrices to build.
    priors : Priors, optional
        Defaults to ``default_priors(..., prior_scheme)``.
    config : FitConfig, optional
    callback : callable, optional
        Called as ``callback(iteration, vlb)`` after every iteration.

    Returns
    -------
    FitReport
        ``converged`` is False when ``max_iter`` was reached first.
    """
    config = config or FitConfig()
    t0 = time.perf_counter()
    X = _as_responses(X, qmatrix.n_items)
    space = enumerate_profiles(qmatrix.levels)
    gmatrices = build_gmatrices(qmatrix, space, flavor)
    if priors is None:
        priors = default_priors(space, gmatrices, prior_scheme)
    priors.check_against(space.n_profiles, gmatrices)

    state = VariationalState.from_priors(priors, X.shape[0])
    state.r = _initial_r(X.shape[0], space.n_profiles, config)
    converged = False
    iteration = 0
    chunks = config.cores

    def run(executor):
        nonlocal converged, iteration
        previous = None
        for iteration in range(1, config.max_iter + 1):
            state.a_star, state.b_star = _vm(X, gmatrices, state.r, priors, chunks, executor)
            state.delta_star = update_pi(state.r, priors)
            state.r, loglik = _ve(X, gmatrices, state, chunks, executor)
            vlb = compute_vlb(X, gmatrices, state, priors, loglik=loglik, chunks=chunks,
                              executor=executor)
            _check_finite(iteration, vlb, state)
            state.vlb_trace.append(vlb)
            if callback is not None:
                callback(iteration, vlb)
            if previous is not None and abs(vlb - previous) < config.tol:
                converged = True
                break
            previous = vlb

    _with_executor(chunks, None, run)
    wall = time.perf_counter() - t0
    logger.info("fit finished: %d iterations, converged=%s, vlb=%.6f, %.2fs",
                iteration, converged, state.vlb_trace[-1] if state.vlb_trace else float("nan"), wall)
    return summarize(state, space, gmatrices, converged, iteration, wall)
