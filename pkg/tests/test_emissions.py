import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from splinehmm.emissions import (
    ParametricEmission,
    SplineEmission,
    density_matrix,
    emission_means,
    family_moments,
    gamma_shape_scale,
    init_from_target,
    mode_count,
    skew_normal_pdf,
)
from splinehmm.splines import eval_basis, make_basis

from helpers import quad_integral


@pytest.fixture
def basis10():
    return make_basis((0.0, 1.0), 10)


def test_uniform_softmax_density(basis10):
    em = SplineEmission(basis=basis10, beta=np.zeros((1, 10)))
    x = np.array([0.1, 0.5, 0.83])
    expect = eval_basis(basis10, x).sum(axis=1) / 10.0
    assert np.allclose(density_matrix(em, x)[:, 0], expect, atol=1e-14)


def test_standard_normal_at_zero():
    em = ParametricEmission(families=("normal",), params=((0.0, 1.0),))
    val = density_matrix(em, np.array([0.0]))[0, 0]
    assert val == pytest.approx(1.0 / np.sqrt(2 * np.pi), rel=1e-12)


def test_skew_normal_matches_scipy_oracle():
    x = np.linspace(-2, 4, 101)
    ours = skew_normal_pdf(x, 0.0, 1.0, 6.0)
    ref = stats.skewnorm.pdf(x, 6.0)
    assert np.allclose(ours, ref, rtol=1e-10)
    # and the closed form used as the written-out oracle
    assert np.allclose(ours, 2 * stats.norm.pdf(x) * stats.norm.cdf(6 * x), rtol=1e-12)


def test_student_t_and_gamma_columns():
    em = ParametricEmission(
        families=("student_t", "gamma"), params=((3.0, 1.0, 3.0), (15.0, 4.0))
    )
    x = np.array([0.5, 3.0, 20.0])
    dens = density_matrix(em, x)
    assert np.allclose(dens[:, 0], stats.t.pdf(x, 3, loc=3.0, scale=1.0))
    shape, scale = gamma_shape_scale(15.0, 4.0)
    assert shape == pytest.approx(14.0625)
    assert np.allclose(dens[:, 1], stats.gamma.pdf(x, shape, scale=scale))


def test_non_finite_observation_rejected(basis10):
    em = SplineEmission(basis=basis10, beta=np.zeros((1, 10)))
    with pytest.raises(ValueError, match="index 2"):
        density_matrix(em, np.array([0.1, 0.2, np.nan, 0.4]))


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        ParametricEmission(families=("normal",), params=((0.0, -1.0),))
    with pytest.raises(ValueError):
        ParametricEmission(families=("student_t",), params=((0.0, 1.0, -3.0),))
    with pytest.raises(ValueError):
        ParametricEmission(families=("no_such",), params=((0.0, 1.0),))


def test_spline_density_integrates_to_one(rng, basis10):
    beta = np.hstack([rng.normal(0, 1.5, size=(3, 9)), np.zeros((3, 1))])
    em = SplineEmission(basis=basis10, beta=beta)
    lo, hi = basis10.support
    for i in range(3):
        total = quad_integral(lambda t, i=i: density_matrix(em, np.array([t]))[0, i], lo, hi)
        assert total == pytest.approx(1.0, abs=1e-8)


def test_density_nonnegative_finite(rng, basis10):
    beta = np.hstack([rng.normal(0, 3, size=(2, 9)), np.zeros((2, 1))])
    em = SplineEmission(basis=basis10, beta=beta)
    dens = density_matrix(em, np.linspace(-1, 2, 400))
    assert np.all(dens >= 0) and np.all(np.isfinite(dens))


def test_beta_last_column_must_be_zero(basis10):
    bad = np.ones((2, 10))
    with pytest.raises(ValueError):
        SplineEmission(basis=basis10, beta=bad)


def test_init_from_target_normal_symmetry():
    basis = make_basis((-3.0, 3.0), 12)
    beta = init_from_target(basis, "normal", 0.0, 1.0)
    assert beta[-1] == 0.0
    # symmetric basis around the target mean: symmetric coefficients
    centered = beta - beta[-1]
    assert np.allclose(centered, centered[::-1], atol=1e-9)
    diffs = np.diff(np.log(np.exp(beta)))  # strictly unimodal log sequence
    assert np.argmax(beta) in (5, 6)


def test_init_from_target_gamma_peak_near_mode():
    basis = make_basis((0.0, 30.0), 30)
    beta = init_from_target(basis, "gamma", 15.0, 4.0)
    assert beta[-1] == 0.0
    shape, scale = gamma_shape_scale(15.0, 4.0)
    true_mode = (shape - 1.0) * scale
    assert true_mode == pytest.approx(13.9333, abs=1e-3)
    peak_mean = basis.basis_means[np.argmax(beta)]
    closest = basis.basis_means[np.argmin(np.abs(basis.basis_means - true_mode))]
    assert peak_mean == pytest.approx(closest)


def test_init_from_target_constant_target_is_zero(basis10, monkeypatch):
    import splinehmm.emissions as em_mod

    monkeypatch.setattr(
        em_mod, "parametric_pdf", lambda fam, p, x: np.full(np.asarray(x).shape, 0.37)
    )
    beta = em_mod.init_from_target(basis10, "normal", 0.0, 1.0)
    assert np.allclose(beta, 0.0)


def test_init_from_target_floors_underflow():
    basis = make_basis((0.0, 400.0), 12)
    beta = init_from_target(basis, "normal", 0.0, 1.0)  # pdf underflows far out
    assert np.all(np.isfinite(beta))
    assert beta[-1] == 0.0


def test_init_from_target_validation(basis10):
    with pytest.raises(ValueError):
        init_from_target(basis10, "normal", 0.0, -1.0)
    with pytest.raises(ValueError):
        init_from_target(basis10, "gamma", -3.0, 1.0)
    with pytest.raises(ValueError):
        init_from_target(basis10, "student_t", 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(shift=st.floats(-40, 40))
def test_softmax_shift_invariance(shift):
    basis = make_basis((0.0, 1.0), 8)
    rng = np.random.default_rng(5)
    raw = rng.normal(0, 2, size=8)
    x = np.linspace(-0.2, 1.2, 64)

    def dens(beta_row):
        em = SplineEmission(basis=basis, beta=np.r_[beta_row - beta_row[-1]][None, :])
        return density_matrix(em, x)[:, 0]

    assert np.allclose(dens(raw), dens(raw + shift), atol=1e-12)


def test_mode_count_single_bump(basis10):
    beta = np.full(10, -8.0)
    beta[4] = 0.0
    beta -= beta[-1]
    em = SplineEmission(basis=basis10, beta=beta[None, :])
    assert mode_count(em, 0) == 1


def test_mode_count_two_separated_bumps():
    basis = make_basis((0.0, 1.0), 30)
    beta = np.full(30, -9.0)
    beta[2] = 0.0
    beta[26] = 0.0
    beta -= beta[-1]
    em = SplineEmission(basis=basis, beta=beta[None, :])
    assert mode_count(em, 0) == 2


def test_mode_count_monotone_coefficients(basis10):
    beta = -1.2 * np.arange(10.0)
    beta -= beta[-1]
    em = SplineEmission(basis=basis10, beta=beta[None, :])
    assert mode_count(em, 0) == 1


def test_mode_count_grid_validation(basis10):
    em = SplineEmission(basis=basis10, beta=np.zeros((1, 10)))
    with pytest.raises(ValueError):
        mode_count(em, 0, grid_size=50)


def test_family_moments_and_means():
    mean, sd = family_moments("skew_normal", (0.0, 1.0, 6.0))
    assert mean == pytest.approx(0.7870284826954251, rel=1e-12)
    assert sd == pytest.approx(0.6169166616538551, rel=1e-12)
    mean, sd = family_moments("student_t", (3.0, 1.0, 3.0))
    assert (mean, sd) == (3.0, pytest.approx(np.sqrt(3.0)))
    with pytest.raises(ValueError):
        family_moments("student_t", (0.0, 1.0, 2.0))
    em = ParametricEmission(
        families=("normal", "gamma"), params=((1.0, 2.0), (15.0, 4.0))
    )
    assert np.allclose(emission_means(em), [1.0, 15.0])
