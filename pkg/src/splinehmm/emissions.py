"""State-dependent densities: B-spline mixtures and parametric families.

Spline emissions weight the normalised basis functions with a softmax of
unconstrained coefficients (last coefficient pinned to zero for
identifiability).  Parametric emissions cover the families used for data
generation, comparison fits and initialisation targets: normal, gamma
(mean/sd parameterisation), skew-normal and location-scale Student t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import softmax

from .splines import SplineBasis, eval_basis

PARAMETRIC_FAMILIES = ("normal", "gamma", "skew_normal", "student_t")

# params per family: normal (mean, sd); gamma (mean, sd);
# skew_normal (location xi, scale omega, slant alpha); student_t (mu, sigma, nu)
FAMILY_NPARAMS = {"normal": 2, "gamma": 2, "skew_normal": 3, "student_t": 3}

_DENSITY_FLOOR = 1e-300  # initialisation only, never the likelihood


@dataclass(frozen=True)
class SplineEmission:
    """Per-state spline densities p_i(x) = sum_k softmax(beta_i)_k phi_k(x)."""

    basis: SplineBasis
    beta: np.ndarray  # (n_states, n_basis); last column identically zero

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 2 or beta.shape[1] != self.basis.n_basis:
            raise ValueError(f"beta must be (n_states, {self.basis.n_basis}), got {beta.shape}")
        if not np.all(beta[:, -1] == 0.0):
            raise ValueError("last coefficient of each state must be pinned to zero")
        object.__setattr__(self, "beta", beta)

    @property
    def n_states(self) -> int:
        return self.beta.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Softmax mixture weights, rows positive and summing to one."""
        return softmax(self.beta, axis=1)


@dataclass(frozen=True)
class ParametricEmission:
    """Per-state parametric densities, one family and parameter tuple each."""

    families: tuple[str, ...]
    params: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        families = tuple(self.families)
        params = tuple(tuple(float(v) for v in p) for p in self.params)
        if len(families) != len(params):
            raise ValueError("families and params must have one entry per state")
        for fam, p in zip(families, params):
            if fam not in PARAMETRIC_FAMILIES:
                raise ValueError(f"unknown family {fam!r}")
            if len(p) != FAMILY_NPARAMS[fam]:
                raise ValueError(f"{fam} takes {FAMILY_NPARAMS[fam]} parameters, got {len(p)}")
            _validate_params(fam, p)
        object.__setattr__(self, "families", families)
        object.__setattr__(self, "params", params)

    @property
    def n_states(self) -> int:
        return len(self.families)


def _validate_params(family: str, params: tuple[float, ...]) -> None:
    if family == "normal":
        if params[1] <= 0:
            raise ValueError("normal sd must be positive")
    elif family == "gamma":
        if params[0] <= 0 or params[1] <= 0:
            raise ValueError("gamma mean and sd must be positive")
    elif family == "skew_normal":
        if params[1] <= 0:
            raise ValueError("skew-normal scale must be positive")
    elif family == "student_t":
        if params[1] <= 0 or params[2] <= 0:
            raise ValueError("student-t scale and dof must be positive")


def gamma_shape_scale(mean: float, sd: float) -> tuple[float, float]:
    """Mean/sd parameterisation to (shape, scale)."""
    return (mean / sd) ** 2, sd * sd / mean


def skew_normal_pdf(x: np.ndarray, xi: float, omega: float, alpha: float) -> np.ndarray:
    z = (np.asarray(x, dtype=float) - xi) / omega
    return 2.0 / omega * stats.norm.pdf(z) * stats.norm.cdf(alpha * z)


def parametric_pdf(family: str, params: tuple[float, ...], x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if family == "normal":
        return stats.norm.pdf(x, loc=params[0], scale=params[1])
    if family == "gamma":
        shape, scale = gamma_shape_scale(*params)
        return stats.gamma.pdf(x, shape, scale=scale)
    if family == "skew_normal":
        return skew_normal_pdf(x, *params)
    if family == "student_t":
        mu, sigma, nu = params
        return stats.t.pdf(x, nu, loc=mu, scale=sigma)
    raise ValueError(f"unknown family {family!r}")


def family_moments(family: str, params: tuple[float, ...]) -> tuple[float, float]:
    """(mean, sd) of a parametric family; raises when a moment is undefined."""
    if family == "normal":
        return float(params[0]), float(params[1])
    if family == "gamma":
        return float(params[0]), float(params[1])
    if family == "skew_normal":
        xi, omega, alpha = params
        d = alpha / np.sqrt(1 + alpha * alpha)
        mean = xi + omega * d * np.sqrt(2 / np.pi)
        var = omega * omega * (1 - 2 * d * d / np.pi)
        return float(mean), float(np.sqrt(var))
    if family == "student_t":
        mu, sigma, nu = params
        if nu <= 2:
            raise ValueError("student-t sd undefined for dof <= 2")
        return float(mu), float(sigma * np.sqrt(nu / (nu - 2)))
    raise ValueError(f"unknown family {family!r}")


def _check_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise ValueError(f"non-finite observation at index {bad[0]}")
    return x


def density_matrix(emission, x: np.ndarray) -> np.ndarray:
    """(T, n_states) matrix of state-dependent density values."""
    x = _check_finite(x)
    if isinstance(emission, SplineEmission):
        return eval_basis(emission.basis, x) @ emission.weights.T
    if isinstance(emission, ParametricEmission):
        cols = [parametric_pdf(f, p, x) for f, p in zip(emission.families, emission.params)]
        return np.stack(cols, axis=1)
    raise TypeError(f"unsupported emission type {type(emission)!r}")


def emission_means(emission) -> np.ndarray:
    """Mean of each state's density; used to order states canonically."""
    if isinstance(emission, SplineEmission):
        return emission.weights @ emission.basis.basis_means
    if family := getattr(emission, "families", None):
        means = []
        for fam, p in zip(family, emission.params):
            if fam == "student_t":
                means.append(p[0])  # defined for nu > 1; location regardless
            else:
                means.append(family_moments(fam, p)[0])
        return np.asarray(means)
    raise TypeError(f"unsupported emission type {type(emission)!r}")


def init_from_target(basis: SplineBasis, family: str, mean: float, sd: float) -> np.ndarray:
    """Coefficients matching a target density at the basis means.

    Sets ``beta_k = log p*(x_k) - log p*(x_K)`` where x_k are the basis means,
    so the last coefficient is exactly zero.  The means of the boundary basis
    functions fall outside the data range (the knot grid is extended), where
    a gamma target is identically zero; evaluation points are therefore
    clipped into the interior range, and target values floored at 1e-300
    before taking logs to survive underflow in far tails.
    """
    if sd <= 0:
        raise ValueError("target sd must be positive")
    if family == "gamma" and mean <= 0:
        raise ValueError("gamma target mean must be positive")
    if family not in ("normal", "gamma"):
        raise ValueError(f"initialisation targets support normal or gamma, got {family!r}")
    lo, hi = basis.interior_range
    points = np.clip(basis.basis_means, lo, hi)
    p = parametric_pdf(family, (mean, sd), points)
    logp = np.log(np.maximum(p, _DENSITY_FLOOR))
    return logp - logp[-1]


def _merged_local_maxima(values: np.ndarray) -> int:
    """Count local maxima after collapsing plateaus; boundaries count."""
    keep = np.r_[True, values[1:] != values[:-1]]
    u = values[keep]
    if u.size == 1:
        return 1
    left = np.r_[-np.inf, u[:-1]]
    right = np.r_[u[1:], -np.inf]
    return int(np.count_nonzero((u > left) & (u > right)))


def mode_count(emission: SplineEmission, state: int, grid_size: int = 1000) -> int:
    """Number of local maxima of one state's density on a uniform grid."""
    if grid_size < 100:
        raise ValueError(f"grid_size must be at least 100, got {grid_size}")
    lo, hi = emission.basis.support
    grid = np.linspace(lo, hi, grid_size)
    dens = density_matrix(emission, grid)[:, state]
    return _merged_local_maxima(dens)
