import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsgeo.kernels import (CovarianceSpec, Form, InputPoint, MaternKernel, PointSet, SchemaError,
                           covariance_matrix, cross_covariance, matern_correlation,
                           matern_correlation_bessel, matern_dlogphi, pair_covariance,
                           spatial_distance)

from conftest import FORMS, random_points, random_spec
from oracles import dense_cov, matern_bessel, pair_cov, spec_args

KAPPAS = (0.5, 1.5, 2.5)


def spec2(form, sigma2=0.5, kappa=1.5):
    cov = () if form == "stationary" else (("e", MaternKernel(0.2, kappa)), ("t", MaternKernel(0.1, kappa)))
    return CovarianceSpec(form, MaternKernel(0.3, kappa), cov, sigma2)


# -- Matern values -------------------------------------------------------------

def test_zero_distance_is_one():
    for k in (0.5, 1.5, 2.5, 0.8, 3.7):
        assert matern_correlation(0.0, MaternKernel(0.7, k)) == 1.0


def test_kappa_15_at_phi():
    expected = (1 + math.sqrt(3)) * math.exp(-math.sqrt(3))
    assert matern_correlation(0.4, MaternKernel(0.4, 1.5)) == pytest.approx(expected, abs=1e-14)
    assert math.floor(expected * 1e5) / 1e5 == 0.48335


def test_kappa_05_at_phi_matches_bessel_oracle():
    # At kappa = 1/2 the sqrt(2 kappa) factor is 1, so rho(phi) = exp(-1).
    val = matern_correlation(2.0, MaternKernel(2.0, 0.5))
    assert val == pytest.approx(float(matern_bessel(2.0, 2.0, 0.5)), abs=1e-12)
    assert round(val, 5) == 0.36788


@pytest.mark.parametrize("kappa", KAPPAS)
def test_closed_form_matches_scipy_bessel(kappa):
    rng = np.random.default_rng(7)
    u = rng.uniform(0, 5, 500)
    phi = rng.uniform(0.05, 3, 500)
    got = np.array([matern_correlation(ui, MaternKernel(pi, kappa)) for ui, pi in zip(u, phi)])
    want = matern_bessel(u, phi, kappa)
    assert np.max(np.abs(got - want)) < 1e-10


def test_general_kappa_uses_bessel_and_is_continuous_at_zero():
    k = MaternKernel(0.5, 0.9)
    assert matern_correlation(0.0, k) == 1.0
    assert matern_correlation(1e-9, k) == pytest.approx(1.0, abs=1e-6)
    u = np.linspace(0.01, 3, 50)
    np.testing.assert_allclose(matern_correlation(u, k), matern_bessel(u, 0.5, 0.9), atol=1e-12)
    np.testing.assert_allclose(matern_correlation_bessel(u, MaternKernel(0.5, 1.5)),
                               matern_correlation(u, MaternKernel(0.5, 1.5)), atol=1e-10)


@pytest.mark.parametrize("kappa", KAPPAS + (0.8, 3.3))
def test_dlogphi_matches_finite_difference(kappa):
    u = np.linspace(0.0, 2.0, 21)
    phi, h = 0.6, 1e-6
    fd = (matern_bessel(u, phi * math.exp(h), kappa) - matern_bessel(u, phi * math.exp(-h), kappa)) / (2 * h)
    np.testing.assert_allclose(matern_dlogphi(u, MaternKernel(phi, kappa)), fd, atol=1e-7)


def test_bad_distance_and_kernel():
    with pytest.raises(ValueError):
        matern_correlation(float("nan"), MaternKernel(1.0))
    with pytest.raises(ValueError):
        matern_correlation(float("inf"), MaternKernel(1.0))
    with pytest.raises(ValueError):
        MaternKernel(0.0)
    with pytest.raises(ValueError):
        MaternKernel(1.0, -1.0)


@settings(max_examples=200, deadline=None)
@given(u1=st.floats(0, 50), u2=st.floats(0, 50), phi=st.floats(1e-3, 1e3),
       kappa=st.sampled_from(KAPPAS + (0.7, 4.0)))
def test_correlation_non_increasing_and_bounded(u1, u2, phi, kappa):
    k = MaternKernel(phi, kappa)
    lo, hi = sorted((u1, u2))
    r_lo, r_hi = float(matern_correlation(lo, k)), float(matern_correlation(hi, k))
    assert 0.0 <= r_hi <= r_lo + 1e-14 <= 1.0 + 1e-14


# -- pair covariance -----------------------------------------------------------

@pytest.mark.parametrize("form,expected", [("product", 0.5), ("partial_sum", 1.0), ("full_sum", 1.5),
                                           ("stationary", 0.5)])
def test_identical_inputs_marginal_variance(form, expected):
    a = InputPoint((0.3, 0.4), {"e": 0.1, "t": -0.2})
    spec = spec2(form)
    assert pair_covariance(a, a, spec) == pytest.approx(expected, abs=1e-15)
    assert spec.marginal_variance == pytest.approx(expected)


def test_missing_covariate_raises_schema_error():
    a = InputPoint((0, 0), {"e": 0.1})
    with pytest.raises(SchemaError, match="t"):
        pair_covariance(a, a, spec2("product"))
    with pytest.raises(SchemaError):
        cross_covariance([a], [a], spec2("product"))


@pytest.mark.parametrize("form", FORMS)
def test_pair_covariance_matches_formula(form):
    rng = np.random.default_rng(3)
    spec = random_spec(rng, form)
    for _ in range(20):
        x1, x2 = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
        e1, e2 = rng.uniform(-1, 1, spec.p), rng.uniform(-1, 1, spec.p)
        a = InputPoint(x1, dict(zip(spec.covariate_names, e1)))
        b = InputPoint(x2, dict(zip(spec.covariate_names, e2)))
        assert pair_covariance(a, b, spec) == pytest.approx(pair_cov(x1, e1, x2, e2, *spec_args(spec)),
                                                            abs=1e-12)


def test_single_covariate_product_is_separable_model():
    spec = CovarianceSpec("product", MaternKernel(0.4, 1.5), (("e", MaternKernel(0.25, 1.5)),), 0.7)
    a = InputPoint((0.1, 0.2), {"e": 0.5})
    b = InputPoint((0.4, 0.6), {"e": -0.1})
    rho = lambda u, phi: (1 + math.sqrt(3) * u / phi) * math.exp(-math.sqrt(3) * u / phi)  # noqa: E731
    hand = 0.7 * rho(0.5, 0.4) * rho(0.6, 0.25)
    assert pair_covariance(a, b, spec) == pytest.approx(hand, rel=1e-13)


@pytest.mark.parametrize("form", ("product", "partial_sum", "full_sum"))
def test_permuting_kernels_leaves_covariance_unchanged(form):
    k1, k2, k3 = MaternKernel(0.2, 0.5), MaternKernel(0.5, 2.5), MaternKernel(0.9, 1.5)
    s = MaternKernel(0.3)
    a = InputPoint((0.1, 0.9), {"x": 0.3, "y": -0.5, "z": 0.9})
    b = InputPoint((0.7, 0.2), {"x": -0.2, "y": 0.4, "z": 0.1})
    one = CovarianceSpec(form, s, (("x", k1), ("y", k2), ("z", k3)), 0.8)
    two = CovarianceSpec(form, s, (("z", k3), ("x", k1), ("y", k2)), 0.8)
    assert pair_covariance(a, b, one) == pytest.approx(pair_covariance(a, b, two), rel=1e-14)


def test_spec_validation():
    with pytest.raises(ValueError):
        CovarianceSpec("stationary", MaternKernel(1.0), (("e", MaternKernel(1.0)),))
    for form in ("product", "partial_sum", "full_sum"):
        with pytest.raises(ValueError):
            CovarianceSpec(form, MaternKernel(1.0), ())
    with pytest.raises(ValueError):
        Form.parse("banana")
    assert Form.parse("model2") is Form.PARTIAL_SUM


# -- covariance matrices -------------------------------------------------------

def test_n1_stationary_with_nugget():
    spec = CovarianceSpec("stationary", MaternKernel(0.3), (), 0.5)
    m = covariance_matrix([InputPoint((0.2, 0.2), {})], spec, tau2=0.1)
    np.testing.assert_allclose(m, [[0.6]], atol=1e-15)


def test_duplicate_inputs_fully_correlated():
    spec = spec2("product", sigma2=1.0)
    a = InputPoint((0.5, 0.5), {"e": 0.1, "t": 0.2})
    np.testing.assert_allclose(covariance_matrix([a, a], spec, 0.0), np.ones((2, 2)), atol=1e-15)


@pytest.mark.parametrize("form", FORMS)
def test_matrix_symmetric_psd_and_matches_loop(form):
    rng = np.random.default_rng(11)
    spec = random_spec(rng, form)
    pts = random_points(rng, 20, spec.covariate_names)
    m = covariance_matrix(pts, spec, 0.05)
    assert np.array_equal(m, m.T)
    assert np.linalg.eigvalsh(m).min() >= -1e-8
    want = dense_cov(pts.coords, pts.covariates, pts.coords, pts.covariates, spec, 0.05, same=True)
    np.testing.assert_allclose(m, want, atol=1e-12)


@pytest.mark.parametrize("form", FORMS)
def test_cross_covariance_consistency(form):
    rng = np.random.default_rng(5)
    spec = random_spec(rng, form)
    src = random_points(rng, 8, spec.covariate_names)
    tgt = random_points(rng, 3, spec.covariate_names)
    np.testing.assert_allclose(cross_covariance(src, src, spec), covariance_matrix(src, spec, 0.0),
                               atol=1e-15)
    want = dense_cov(tgt.coords, tgt.covariates, src.coords, src.covariates, spec)
    np.testing.assert_allclose(cross_covariance(tgt, src, spec), want, atol=1e-12)
    # list-of-points input gives the same answer as a PointSet
    np.testing.assert_allclose(cross_covariance(tgt.to_points(), src.to_points(), spec),
                               cross_covariance(tgt, src, spec), atol=0)


def test_single_target_equal_to_source_product():
    spec = spec2("product", sigma2=0.5)
    a = InputPoint((0.2, 0.3), {"e": 0.4, "t": -0.4})
    b = InputPoint((0.9, 0.1), {"e": 0.0, "t": 0.3})
    assert cross_covariance([a], [b, a], spec)[0, 1] == pytest.approx(0.5, abs=1e-15)


def test_near_duplicate_points_clamped():
    spec = CovarianceSpec("stationary", MaternKernel(0.3, 0.9), (), 1.0)
    pts = PointSet(np.array([[0.5, 0.5], [0.5, 0.5 + 1e-17]]), np.zeros((2, 0)), ())
    m = covariance_matrix(pts, spec, 0.0)
    assert np.all(np.isfinite(m))
    np.testing.assert_allclose(m, np.ones((2, 2)), atol=1e-15)


def test_great_circle_distance():
    # a quarter of the equator
    d = spatial_distance(np.array([[0.0, 0.0]]), np.array([[90.0, 0.0]]), "great_circle")
    assert d[0, 0] == pytest.approx(math.pi / 2 * 6371.0088, rel=1e-12)
    with pytest.raises(ValueError):
        spatial_distance(np.zeros((1, 2)), np.zeros((1, 2)), "manhattan")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), form=st.sampled_from(FORMS), n=st.integers(1, 40),
       p=st.integers(1, 3))
def test_psd_property(seed, form, n, p):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, form, p=p)
    pts = random_points(rng, n, spec.covariate_names)
    m = covariance_matrix(pts, spec, 0.0)
    assert np.array_equal(m, m.T)
    assert np.linalg.eigvalsh(m).min() >= -1e-8 * max(1.0, spec.marginal_variance)
