"""Cubic B-spline bases on equidistant knots, normalised to densities.

The basis covers the data range with equidistant knots and is extended by
``degree`` equispaced knots on each side, so every basis function is a full
(translated) bump.  Each function is rescaled by a constant ``nu_k`` so that
it integrates to one and can serve as a mixture component of a probability
density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGREE = 3
_QUAD_NODES = 3  # Gauss-Legendre nodes per knot interval; exact for deg <= 5


@dataclass(frozen=True)
class SplineBasis:
    """Normalised cubic B-spline basis over an equidistant knot grid.

    Attributes
    ----------
    degree : int
        Polynomial degree of the basis (always 3).
    interior_range : tuple of float
        The data range the knots were placed over.  The partition of unity
        holds exactly on this interval.
    n_basis : int
        Number of basis functions.
    knots : ndarray
        Full extended knot vector, ``n_basis + degree + 1`` entries.
    nu : ndarray
        Normalisation constants; ``nu[k] = 1 / integral(B_k)``.
    basis_means : ndarray
        Mean of each normalised basis function, used to place initial
        coefficients against a target density.
    """

    degree: int
    interior_range: tuple[float, float]
    n_basis: int
    knots: np.ndarray
    nu: np.ndarray
    basis_means: np.ndarray

    @property
    def support(self) -> tuple[float, float]:
        """Full support of the basis (extended knot span)."""
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def spacing(self) -> float:
        return float(self.knots[1] - self.knots[0])


@dataclass(frozen=True)
class PenaltyMatrix:
    """Gram matrix of the second-difference operator with its known rank."""

    S: np.ndarray
    rank: int


def bspline_design(knots: np.ndarray, degree: int, x: np.ndarray) -> np.ndarray:
    """Raw B-spline design matrix B_k(x) over the full knot span.

    Rows for points outside ``[knots[0], knots[-1]]`` are zero.  Each row has
    at most ``degree + 1`` nonzero entries.  Implemented with the iterative
    Cox-de Boor scheme on an equidistantly continued knot grid so that the
    extension intervals (outside the interior range) evaluate correctly.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n_knots = knots.size
    n_basis = n_knots - degree - 1
    out = np.zeros((x.size, n_basis))

    inside = (x >= knots[0]) & (x <= knots[-1])
    if not inside.any():
        return out
    xs = x[inside]

    # interval index: knots[iv] <= x < knots[iv + 1]; right-closed at the end
    iv = np.searchsorted(knots, xs, side="right") - 1
    iv = np.minimum(iv, n_knots - 2)

    # continue the equidistant grid so every knot window the recursion
    # touches is well defined; padded columns are discarded below
    h = knots[1] - knots[0]
    padded = np.concatenate(
        [knots[0] + h * np.arange(-degree, 0), knots, knots[-1] + h * np.arange(1, degree + 1)]
    )
    ivp = iv + degree

    vals = np.zeros((xs.size, degree + 1))
    vals[:, 0] = 1.0
    left = np.empty((xs.size, degree + 1))
    right = np.empty((xs.size, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = xs - padded[ivp + 1 - j]
        right[:, j] = padded[ivp + j] - xs
        saved = np.zeros(xs.size)
        for r in range(j):
            term = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * term
            saved = left[:, j - r] * term
        vals[:, j] = saved

    # vals[:, r] is B_{iv - degree + r}; scatter the in-range columns
    rows = np.repeat(np.flatnonzero(inside), degree + 1)
    cols = (iv[:, None] - degree + np.arange(degree + 1)[None, :]).ravel()
    flat = vals.ravel()
    ok = (cols >= 0) & (cols < n_basis)
    out[rows[ok], cols[ok]] = flat[ok]
    return out


def _quadrature_grid(knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on every knot interval (exact for cubics)."""
    z, w = np.polynomial.legendre.leggauss(_QUAD_NODES)
    mid = 0.5 * (knots[:-1] + knots[1:])
    half = 0.5 * np.diff(knots)
    nodes = (mid[:, None] + half[:, None] * z[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def make_basis(interior_range: tuple[float, float], n_basis: int) -> SplineBasis:
    """Build a normalised cubic B-spline basis over ``interior_range``.

    ``n_basis - degree + 1`` equidistant knots span the range and the grid is
    continued by ``degree`` equispaced knots on each side.  Normalisation
    constants and basis means come from per-interval Gauss-Legendre
    quadrature, which is exact for the piecewise-polynomial integrands.
    """
    lo, hi = float(interior_range[0]), float(interior_range[1])
    if not np.isfinite([lo, hi]).all() or not lo < hi:
        raise ValueError(f"interior_range must be finite with lo < hi, got ({lo}, {hi})")
    if n_basis < 4:
        raise ValueError(f"need at least 4 basis functions, got {n_basis}")

    n_inner = n_basis - DEGREE + 1
    h = (hi - lo) / (n_inner - 1)
    inner = np.linspace(lo, hi, n_inner)
    knots = np.concatenate([lo + h * np.arange(-DEGREE, 0), inner, hi + h * np.arange(1, DEGREE + 1)])

    nodes, weights = _quadrature_grid(knots)
    B = bspline_design(knots, DEGREE, nodes)
    integrals = weights @ B
    nu = 1.0 / integrals
    means = ((weights * nodes) @ B) * nu
    return SplineBasis(
        degree=DEGREE,
        interior_range=(lo, hi),
        n_basis=n_basis,
        knots=knots,
        nu=nu,
        basis_means=means,
    )


def eval_basis(basis: SplineBasis, x: np.ndarray) -> np.ndarray:
    """Matrix of normalised basis values, entry (t, k) = nu_k * B_k(x_t).

    Points outside the knot span yield zero rows; no error is raised.
    """
    return bspline_design(basis.knots, basis.degree, x) * basis.nu[None, :]


def second_diff_penalty(n_basis: int) -> PenaltyMatrix:
    """Second-difference penalty S = D2' D2 with rank ``n_basis - 2``.

    The quadratic form ``b @ S @ b`` vanishes exactly for affine coefficient
    sequences and measures squared curvature otherwise.
    """
    if n_basis < 3:
        raise ValueError(f"second differences need at least 3 coefficients, got {n_basis}")
    D2 = np.diff(np.eye(n_basis), n=2, axis=0)
    return PenaltyMatrix(S=D2.T @ D2, rank=n_basis - 2)
