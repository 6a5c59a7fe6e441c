import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from splinehmm.splines import bspline_design, eval_basis, make_basis, second_diff_penalty

from helpers import quad_integral


def test_make_basis_minimal_single_interval():
    b = make_basis((0.0, 1.0), 4)
    # one interior interval extended by the degree on each side
    assert b.knots.size == 4 + 3 + 1
    total = bspline_design(b.knots, b.degree, np.array([0.5])).sum()
    assert total == pytest.approx(1.0, abs=1e-12)


def test_equidistant_spacing_and_nu():
    b = make_basis((0.0, 10.0), 14)
    assert b.spacing == pytest.approx(10.0 / 11.0, rel=1e-12)
    # every basis function is a full bump on an equidistant grid
    assert np.allclose(b.nu, 11.0 / 10.0, rtol=1e-10)


def test_nu_against_quadrature_oracle():
    b = make_basis((0.0, 10.0), 14)
    for k in [0, 1, 6, 12, 13]:
        integral = quad_integral(
            lambda t, k=k: bspline_design(b.knots, b.degree, np.array([t]))[0, k],
            b.knots[k], b.knots[k + b.degree + 1],
        )
        assert b.nu[k] == pytest.approx(1.0 / integral, rel=1e-10)


def test_k40_normalized_functions_integrate_to_one():
    b = make_basis((0.0, 1.0), 40)
    for k in range(0, 40, 7):
        val = quad_integral(
            lambda t, k=k: eval_basis(b, np.array([t]))[0, k],
            b.knots[k], b.knots[k + b.degree + 1],
        )
        assert abs(val - 1.0) < 1e-10


def test_invalid_arguments():
    with pytest.raises(ValueError):
        make_basis((1.0, 1.0), 10)
    with pytest.raises(ValueError):
        make_basis((0.0, 1.0), 3)
    with pytest.raises(ValueError):
        make_basis((0.0, np.inf), 10)


def test_partition_of_unity_dense():
    b = make_basis((-2.0, 7.0), 23)
    x = np.linspace(-2.0, 7.0, 1000)
    sums = bspline_design(b.knots, b.degree, x).sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12


def test_eval_basis_matches_scipy_oracle_on_full_support():
    b = make_basis((0.0, 3.0), 9)
    x = np.linspace(b.knots[0], b.knots[-1], 257)
    ours = bspline_design(b.knots, b.degree, x)
    for k in range(b.n_basis):
        ref = BSpline.basis_element(b.knots[k:k + b.degree + 2], extrapolate=False)(x)
        assert np.allclose(ours[:, k], np.nan_to_num(ref), atol=1e-13)


def test_eval_outside_support_is_zero_not_error():
    b = make_basis((0.0, 1.0), 10)
    rows = eval_basis(b, np.array([-50.0, 99.0]))
    assert np.all(rows == 0.0)


def test_local_support_four_nonzeros():
    b = make_basis((0.0, 1.0), 10)
    row = eval_basis(b, np.array([0.5]))
    assert np.count_nonzero(row) == 4


def test_boundary_rows_sum_to_one_after_unnormalising():
    b = make_basis((0.0, 1.0), 12)
    phi = eval_basis(b, np.array([0.0, 1.0, 0.37]))
    raw = phi / b.nu[None, :]
    assert np.allclose(raw.sum(axis=1), 1.0, atol=1e-12)


def test_basis_means_strictly_increasing():
    b = make_basis((0.0, 30.0), 30)
    assert np.all(np.diff(b.basis_means) > 0)


def test_basis_means_match_quadrature_oracle():
    b = make_basis((-1.0, 2.0), 8)
    for k in [0, 3, 7]:
        val = quad_integral(
            lambda t, k=k: t * eval_basis(b, np.array([t]))[0, k],
            b.knots[k], b.knots[k + b.degree + 1],
        )
        assert b.basis_means[k] == pytest.approx(val, rel=1e-10)


def test_second_diff_penalty_k4_matrix():
    P = second_diff_penalty(4)
    D2 = np.array([[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]])
    assert np.array_equal(P.S, D2.T @ D2)
    assert P.rank == 2
    assert np.linalg.matrix_rank(P.S) == 2


def test_second_diff_penalty_examples():
    S5 = second_diff_penalty(5).S
    affine = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert affine @ S5 @ affine == 0.0
    S3 = second_diff_penalty(3).S
    bump = np.array([0.0, 1.0, 0.0])
    assert bump @ S3 @ bump == pytest.approx(4.0)
    with pytest.raises(ValueError):
        second_diff_penalty(2)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-1, 1), k=st.integers(4, 25))
def test_penalty_null_space_affine(a, b, k):
    beta = a + b * np.arange(k)
    S = second_diff_penalty(k).S
    assert abs(beta @ S @ beta) < 1e-20 * max(1.0, np.max(np.abs(beta)) ** 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 6))
def test_penalty_positive_for_curved_sequences(pos):
    k = 9
    beta = np.linspace(0.0, 1.0, k)
    beta[pos + 1] += 0.5  # introduce a nonzero second difference
    S = second_diff_penalty(k).S
    assert beta @ S @ beta > 0


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-1.999, 6.999))
def test_partition_of_unity_property(x):
    b = make_basis((-2.0, 7.0), 15)
    total = bspline_design(b.knots, b.degree, np.array([x])).sum()
    assert total == pytest.approx(1.0, abs=1e-12)
