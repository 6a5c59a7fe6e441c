"""Unimodality constraints on spline coefficient sequences.

A spline density is unimodal whenever its coefficient sequence on the raw
B-spline basis is unimodal.  The constraint "nondecreasing up to index m,
nonincreasing after" is linear in the rescaled coefficients and is enforced
softly through a softplus penalty so the fit stays smooth and unconstrained
optimisers apply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .splines import SplineBasis


@dataclass(frozen=True)
class UnimodalPenaltySpec:
    """Per-state coefficient-mode indices (None = unconstrained state)."""

    modes: tuple[int | None, ...]
    rho: float = 20.0
    kappa: float = 1e4

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")


def constraint_matrix(n_basis: int, mode: int) -> np.ndarray:
    """(n_basis - 1, n_basis) first-difference matrix with a sign change.

    Rows before ``mode`` (1-based) require nondecreasing coefficients, rows
    from ``mode`` on require nonincreasing ones.  ``mode == 1`` gives a
    monotone decreasing sequence, ``mode == n_basis`` a monotone increasing
    one.
    """
    if not 1 <= mode <= n_basis:
        raise ValueError(f"mode must be in [1, {n_basis}], got {mode}")
    C = np.zeros((n_basis - 1, n_basis))
    rows = np.arange(n_basis - 1)
    increasing = rows < mode - 1
    C[rows, rows] = np.where(increasing, -1.0, 1.0)
    C[rows, rows + 1] = np.where(increasing, 1.0, -1.0)
    return C


def tilde_beta(beta: np.ndarray, basis: SplineBasis) -> np.ndarray:
    """Coefficients rescaled to the raw (unnormalised) B-spline basis.

    Adds the fixed offset log(nu_k / nu_K); on an equidistant basis all nu_k
    coincide and the offset vanishes.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != basis.n_basis:
        raise ValueError("beta length must match the basis size")
    return beta + np.log(basis.nu / basis.nu[-1])


def unimodality_penalty(
    beta: np.ndarray, basis: SplineBasis, mode: int, rho: float
) -> tuple[float, np.ndarray]:
    """Smooth penalty sum_k softplus(-rho z_k)/rho, z = C_m beta_tilde.

    Returns the value and its gradient with respect to ``beta``.  Uses the
    overflow-safe softplus form max(u, 0) + log1p(exp(-|u|)).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    C = constraint_matrix(basis.n_basis, mode)
    z = C @ tilde_beta(beta, basis)
    u = -rho * z
    value = float(np.sum(np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))) / rho)
    grad = -(C.T @ expit(u))
    return value, grad


def unimodality_violation(beta: np.ndarray, basis: SplineBasis, mode: int) -> float:
    """Exact hinge penalty sum_k max(-z_k, 0); zero iff the sequence is unimodal at mode."""
    C = constraint_matrix(basis.n_basis, mode)
    z = C @ tilde_beta(beta, basis)
    return float(np.sum(np.maximum(-z, 0.0)))
