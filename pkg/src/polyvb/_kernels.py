"""Compiled inner loops.

All kernels release the GIL so that a thread pool gives real parallelism.
Every floating-point reduction runs in a fixed order that does not depend on
how rows or items are split between workers, which is what makes the
parallel results bit-identical to the serial ones.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def item_tables(lookup, log_success, log_failure):
    """Gather per-pattern log terms onto profiles: ``out[j, x, l]``."""
    n_items, n_profiles = lookup.shape
    out = np.empty((n_items, 2, n_profiles))
    for j in range(n_items):
        for l in range(n_profiles):
            p = lookup[j, l]
            out[j, 0, l] = log_failure[j, p]
            out[j, 1, l] = log_success[j, p]
    return out


@njit(nogil=True, cache=True)
def loglik_rows(X, tables, start, stop, out):
    """``out[i, l] = sum_j tables[j, X[i, j], l]`` for rows ``start:stop``."""
    n_items = X.shape[1]
    n_profiles = out.shape[1]
    for i in range(start, stop):
        for l in range(n_profiles):
            out[i, l] = 0.0
        for j in range(n_items):
            row = tables[j, X[i, j]]
            for l in range(n_profiles):
                out[i, l] += row[l]


@njit(nogil=True, cache=True)
def responsibilities_rows(loglik, log_pi, start, stop, r):
    """Softmax of ``loglik + log_pi`` per row via log-sum-exp."""
    n_profiles = loglik.shape[1]
    buf = np.empty(n_profiles)
    for i in range(start, stop):
        top = -np.inf
        for l in range(n_profiles):
            buf[l] = loglik[i, l] + log_pi[l]
            if buf[l] > top:
                top = buf[l]
        total = 0.0
        for l in range(n_profiles):
            buf[l] = np.exp(buf[l] - top)
            total += buf[l]
        for l in range(n_profiles):
            r[i, l] = buf[l] / total


@njit(nogil=True, cache=True)
def bucket_counts_items(X, lookup, r, j_start, j_stop, succ, fail):
    """Soft success/failure counts per (item, pattern) for items ``j_start:j_stop``.

    ``succ[j, p] = sum_i sum_{l: lookup[j,l]=p} r[i, l] x[i, j]``; sums over
    examinees run in index order, then profiles are folded into patterns in
    index order.
    """
    n_obs, n_profiles = r.shape
    s1 = np.empty(n_profiles)
    s0 = np.empty(n_profiles)
    for j in range(j_start, j_stop):
        for l in range(n_profiles):
            s1[l] = 0.0
            s0[l] = 0.0
        for i in range(n_obs):
            if X[i, j]:
                for l in range(n_profiles):
                    s1[l] += r[i, l]
            else:
                for l in range(n_profiles):
                    s0[l] += r[i, l]
        for p in range(succ.shape[1]):
            succ[j, p] = 0.0
            fail[j, p] = 0.0
        for l in range(n_profiles):
            p = lookup[j, l]
            succ[j, p] += s1[l]
            fail[j, p] += s0[l]


@njit(nogil=True, cache=True)
def vlb_row_terms(loglik, r, log_pi, start, stop, data_term, pi_term, entropy_term):
    """Per-examinee pieces of the lower bound.

    ``data_term[i] = sum_l r_il loglik_il``, ``pi_term[i] = sum_l r_il E[log pi_l]``,
    ``entropy_term[i] = sum_l r_il log r_il`` with ``0 log 0 = 0``.
    """
    n_profiles = r.shape[1]
    for i in range(start, stop):
        d = 0.0
        p = 0.0
        h = 0.0
        for l in range(n_profiles):
            w = r[i, l]
            if w > 0.0:
                d += w * loglik[i, l]
                p += w * log_pi[l]
                h += w * np.log(w)
        data_term[i] = d
        pi_term[i] = p
        entropy_term[i] = h


@njit(nogil=True, cache=True)
def sample_classes(loglik, log_pi, u, z):
    """Draw ``z_i`` from the normalized ``exp(loglik_i + log_pi)`` by inversion."""
    n_obs, n_profiles = loglik.shape
    buf = np.empty(n_profiles)
    for i in range(n_obs):
        top = -np.inf
        for l in range(n_profiles):
            buf[l] = loglik[i, l] + log_pi[l]
            if buf[l] > top:
                top = buf[l]
        total = 0.0
        for l in range(n_profiles):
            buf[l] = np.exp(buf[l] - top)
            total += buf[l]
        target = u[i] * total
        acc = 0.0
        chosen = n_profiles - 1
        for l in range(n_profiles):
            acc += buf[l]
            if acc > target:
                chosen = l
                break
        z[i] = chosen


@njit(nogil=True, cache=True)
def hard_bucket_counts(X, lookup, z, succ, fail):
    """Success/failure counts per (item, pattern) given hard class labels."""
    n_obs, n_items = X.shape
    succ[:, :] = 0.0
    fail[:, :] = 0.0
    for i in range(n_obs):
        zi = z[i]
        for j in range(n_items):
            p = lookup[j, zi]
            if X[i, j]:
                succ[j, p] += 1.0
            else:
                fail[j, p] += 1.0
