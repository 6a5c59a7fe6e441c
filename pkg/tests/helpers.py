"""Independent oracles used to freeze expected values in the tests.

Everything here deliberately avoids the library's own computation paths:
likelihoods come from exhaustive path enumeration, integrals from adaptive
quadrature, AUC from midrank Mann-Whitney, gradients from central finite
differences.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate
from scipy.stats import rankdata


def brute_force_loglik(delta, tpm, dens) -> float:
    """Sum of path probabilities over every state sequence (exact, fsum)."""
    T, n = dens.shape
    total = []
    for path in itertools.product(range(n), repeat=T):
        p = delta[path[0]] * dens[0, path[0]]
        for t in range(1, T):
            p *= tpm[path[t - 1], path[t]] * dens[t, path[t]]
        total.append(p)
    return math.log(math.fsum(total))


def brute_force_posteriors(delta, tpm, dens) -> np.ndarray:
    """Pr(S_t = j | x) by enumerating all paths."""
    T, n = dens.shape
    post = np.zeros((T, n))
    norm = 0.0
    for path in itertools.product(range(n), repeat=T):
        p = delta[path[0]] * dens[0, path[0]]
        for t in range(1, T):
            p *= tpm[path[t - 1], path[t]] * dens[t, path[t]]
        norm += p
        for t, s in enumerate(path):
            post[t, s] += p
    return post / norm


def brute_force_viterbi(delta, tpm, dens) -> np.ndarray:
    """Most probable path by enumeration; ties resolve to the first
    (lexicographically smallest) path, matching the lower-index rule."""
    T, n = dens.shape
    best_p, best_path = -1.0, None
    for path in itertools.product(range(n), repeat=T):
        p = delta[path[0]] * dens[0, path[0]]
        for t in range(1, T):
            p *= tpm[path[t - 1], path[t]] * dens[t, path[t]]
        if p > best_p:
            best_p, best_path = p, path
    return np.asarray(best_path)


def quad_integral(fn, lo, hi, **kw) -> float:
    """Adaptive quadrature, independent of the Gauss-Legendre construction."""
    val, _ = integrate.quad(fn, lo, hi, limit=400, **kw)
    return val


def mann_whitney_auc(scores, truth) -> float:
    """U / (n1 n0) with midranks: P(score_pos > score_neg) + 0.5 P(equal)."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    ranks = rankdata(scores)
    n1 = truth.sum()
    n0 = truth.size - n1
    u = ranks[truth].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def central_fd_gradient(fn, theta, step=1e-6) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (fn(up) - fn(dn)) / (2 * step)
    return g


def random_hmm_quantities(rng, n_states, T):
    """Random (delta, tpm, density matrix) for oracle comparisons."""
    delta = rng.dirichlet(np.ones(n_states))
    tpm = rng.dirichlet(np.ones(n_states), size=n_states)
    dens = rng.uniform(0.05, 1.5, size=(T, n_states))
    return delta, tpm, dens
