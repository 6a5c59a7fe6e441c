"""Core hidden Markov model computations.

Transition probabilities use a row-wise multinomial-logit parameterisation
with the diagonal as reference category.  The log-likelihood uses the scaled
forward recursion (per-step sum normalisation with accumulated log scale
factors); decoding uses log-space forward-backward and max-product
recursions.  States are 0-based throughout the API; file formats add one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .emissions import ParametricEmission, SplineEmission, density_matrix


class DataOutsideSupportError(ValueError):
    """An observation had zero density under every state."""


def _logits_to_tpm(eta: np.ndarray) -> np.ndarray:
    n = eta.shape[0]
    logits = np.zeros((n, n))
    if n > 1:
        logits[~np.eye(n, dtype=bool)] = np.asarray(eta, dtype=float).ravel()
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def stationary_distribution(tpm: np.ndarray) -> np.ndarray:
    """Solve d (tpm - I) = 0 with sum(d) = 1 by replacing one equation.

    Falls back to the uniform distribution with a warning when the chain is
    reducible (singular system).
    """
    tpm = np.asarray(tpm, dtype=float)
    n = tpm.shape[0]
    M = tpm.T - np.eye(n)
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        delta = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("transition matrix is reducible; using uniform initial distribution")
        return np.full(n, 1.0 / n)
    if not np.all(np.isfinite(delta)) or delta.min() < -1e-9:
        warnings.warn("stationary solve ill-conditioned; using uniform initial distribution")
        return np.full(n, 1.0 / n)
    delta = np.clip(delta, 0.0, None)
    return delta / delta.sum()


@dataclass(frozen=True)
class TransitionModel:
    """Unconstrained transition parameters plus the initial-distribution rule.

    ``delta_mode`` is either the string "stationary" (initial distribution
    solved from the transition matrix) or a fixed probability vector.
    """

    eta: np.ndarray  # (n_states, n_states - 1)
    delta_mode: str | np.ndarray = "stationary"

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim != 2 or eta.shape[1] != eta.shape[0] - 1:
            raise ValueError(f"eta must be (n, n-1), got {eta.shape}")
        object.__setattr__(self, "eta", eta)
        if not isinstance(self.delta_mode, str):
            d = np.asarray(self.delta_mode, dtype=float)
            if d.shape != (eta.shape[0],) or d.min() < 0 or not np.isclose(d.sum(), 1.0):
                raise ValueError("fixed delta must be a probability vector of length n_states")
            object.__setattr__(self, "delta_mode", d)
        elif self.delta_mode != "stationary":
            raise ValueError(f"unknown delta_mode {self.delta_mode!r}")

    @property
    def n_states(self) -> int:
        return self.eta.shape[0]

    @property
    def tpm(self) -> np.ndarray:
        return _logits_to_tpm(self.eta)

    @property
    def delta(self) -> np.ndarray:
        if isinstance(self.delta_mode, str):
            return stationary_distribution(self.tpm)
        return np.asarray(self.delta_mode, dtype=float)

    @classmethod
    def from_tpm(cls, tpm: np.ndarray, delta_mode="stationary") -> "TransitionModel":
        tpm = np.asarray(tpm, dtype=float)
        n = tpm.shape[0]
        if tpm.shape != (n, n) or not np.allclose(tpm.sum(axis=1), 1.0):
            raise ValueError("tpm must be square and row-stochastic")
        if np.any(tpm.diagonal() <= 0):
            raise ValueError("diagonal entries must be positive for the logit parameterisation")
        with np.errstate(divide="ignore"):
            logits = np.log(tpm) - np.log(tpm.diagonal())[:, None]
        eta = logits[~np.eye(n, dtype=bool)].reshape(n, n - 1)
        return cls(eta=eta, delta_mode=delta_mode)


@dataclass(frozen=True)
class HmmModel:
    transition: TransitionModel
    emission: SplineEmission | ParametricEmission

    def __post_init__(self):
        if self.transition.n_states != self.emission.n_states:
            raise ValueError("transition and emission disagree on the number of states")

    @property
    def n_states(self) -> int:
        return self.transition.n_states


def log_likelihood(model: HmmModel, x: np.ndarray) -> float:
    """Scaled-forward log-likelihood; -inf (with a warning naming the index)
    when some observation has zero density under every state."""
    dens = density_matrix(model.emission, x)
    delta = model.transition.delta
    tpm = model.transition.tpm
    a = delta * dens[0]
    c = a.sum()
    if not np.isfinite(c) or c <= 0.0:
        warnings.warn(f"observation at t=0 outside the support of every state")
        return -np.inf
    ll = np.log(c)
    a /= c
    for t in range(1, len(dens)):
        a = (a @ tpm) * dens[t]
        c = a.sum()
        if not np.isfinite(c) or c <= 0.0:
            warnings.warn(f"observation at t={t} outside the support of every state")
            return -np.inf
        ll += np.log(c)
        a /= c
    return float(ll)


def _log_quantities(model: HmmModel, x: np.ndarray):
    dens = density_matrix(model.emission, x)
    zero_rows = np.flatnonzero(dens.max(axis=1) <= 0.0)
    if zero_rows.size:
        raise DataOutsideSupportError(
            f"observation at t={zero_rows[0]} outside the support of every state"
        )
    with np.errstate(divide="ignore"):
        log_dens = np.log(dens)
        log_tpm = np.log(model.transition.tpm)
        log_delta = np.log(model.transition.delta)
    return log_dens, log_tpm, log_delta


def local_state_probs(model: HmmModel, x: np.ndarray) -> np.ndarray:
    """Posterior state probabilities Pr(S_t = j | x_1..T), rows summing to 1."""
    log_dens, log_tpm, log_delta = _log_quantities(model, x)
    T, n = log_dens.shape
    la = np.empty((T, n))
    la[0] = log_delta + log_dens[0]
    for t in range(1, T):
        la[t] = log_dens[t] + logsumexp(la[t - 1][:, None] + log_tpm, axis=0)
    lb = np.zeros((T, n))
    for t in range(T - 2, -1, -1):
        lb[t] = logsumexp(log_tpm + (log_dens[t + 1] + lb[t + 1])[None, :], axis=1)
    log_post = la + lb
    log_post -= logsumexp(log_post, axis=1, keepdims=True)
    return np.exp(log_post)


def viterbi(model: HmmModel, x: np.ndarray) -> np.ndarray:
    """Most probable state path (0-based); ties resolve to the lower index."""
    log_dens, log_tpm, log_delta = _log_quantities(model, x)
    T, n = log_dens.shape
    score = log_delta + log_dens[0]
    back = np.zeros((T, n), dtype=np.intp)
    for t in range(1, T):
        cand = score[:, None] + log_tpm
        back[t] = np.argmax(cand, axis=0)  # first max = lower index
        score = cand[back[t], np.arange(n)] + log_dens[t]
    path = np.empty(T, dtype=np.intp)
    path[-1] = int(np.argmax(score))
    for t in range(T - 2, -1, -1):
        path[t] = back[t + 1][path[t + 1]]
    return path


def log_likelihood_with_grad(model: HmmModel, x: np.ndarray):
    """Log-likelihood and its gradient with respect to the unconstrained
    parameters (eta and spline coefficients or parametric parameters)."""
    from .fit import loglik_with_grad

    return loglik_with_grad(model, x)


def permute_states(model: HmmModel, perm: np.ndarray) -> HmmModel:
    """Relabel states by ``perm`` (new index i takes old state perm[i])."""
    perm = np.asarray(perm, dtype=int)
    tpm = model.transition.tpm[np.ix_(perm, perm)]
    delta_mode = model.transition.delta_mode
    if not isinstance(delta_mode, str):
        delta_mode = np.asarray(delta_mode)[perm]
    transition = TransitionModel.from_tpm(tpm, delta_mode=delta_mode)
    em = model.emission
    if isinstance(em, SplineEmission):
        emission = SplineEmission(basis=em.basis, beta=em.beta[perm])
    else:
        emission = ParametricEmission(
            families=tuple(em.families[i] for i in perm),
            params=tuple(em.params[i] for i in perm),
        )
    return HmmModel(transition=transition, emission=emission)
