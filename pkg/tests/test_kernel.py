import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from fastmuygps.errors import DomainError
from fastmuygps.kernel import (
    KernelKind,
    KernelParams,
    cov_matrix,
    kernel_from_distances,
    matern_value,
    neighborhood_distances,
    neighborhood_kernel,
    pairwise_distances,
    rbf_value,
)


def matern_direct(d, sigma, rho, nu, tau):
    """Textbook Matérn via scipy's K_nu, no shortcuts."""
    if d == 0:
        return sigma**2 * (1.0 + tau**2)
    x = math.sqrt(2 * nu) * d / rho
    return sigma**2 * (2 ** (1 - nu) / math.gamma(nu)) * x**nu * special.kv(nu, x)


# ---------------------------------------------------------------- spot values


def test_matern_zero_distance_is_one():
    assert matern_value(0.0, KernelParams(sigma=1, rho=1, nu=0.5, tau=0)) == 1.0


def test_matern_half_is_exponential_at_one():
    assert matern_value(1.0, KernelParams(nu=0.5)) == pytest.approx(0.3678794, abs=1e-7)


def test_matern_zero_distance_with_nugget():
    assert matern_value(0.0, KernelParams(sigma=2, rho=3, nu=1.5, tau=0.5)) == 5.0


def test_rbf_spot_values():
    p = KernelParams(sigma=1, rho=1, tau=0)
    assert rbf_value(0.0, p) == 1.0
    assert rbf_value(math.sqrt(2.0), p) == pytest.approx(math.exp(-1), rel=1e-15)
    q = KernelParams(rho=43.27)
    assert rbf_value(1.0, q) == pytest.approx(math.exp(-1 / (2 * 43.27**2)), rel=1e-15)


def test_single_point_cov_matrix():
    K = cov_matrix([[0.3, -1.0]], [[0.3, -1.0]], KernelKind.MATERN, KernelParams())
    np.testing.assert_array_equal(K, [[1.0]])


def test_collinear_exponential_entries():
    X = np.array([[0.0], [1.0], [2.0]])
    K = cov_matrix(X, X, "matern", KernelParams(sigma=1, rho=1, nu=0.5))
    i, j = np.indices((3, 3))
    np.testing.assert_allclose(K, np.exp(-np.abs(i - j)), rtol=1e-15)


@pytest.mark.parametrize("nu", [0.3, 0.5, 0.75, 1.5, 2.0, 2.5, 3.7, 10.0])
@pytest.mark.parametrize("d", [1e-3, 0.1, 0.7, 2.0, 9.0])
def test_matern_matches_direct_bessel(nu, d):
    p = KernelParams(sigma=1.3, rho=0.8, nu=nu)
    assert matern_value(d, p) == pytest.approx(matern_direct(d, 1.3, 0.8, nu, 0.0), rel=1e-10)


def test_matern_tiny_distance_large_nu_is_finite():
    p = KernelParams(nu=40.0)
    v = matern_value(np.array([0.0, 1e-300, 1e-12, 1e-4]), p)
    assert np.all(np.isfinite(v))
    assert np.all(v <= 1.0) and v[1] == pytest.approx(1.0)


def test_scalar_in_scalar_out():
    assert isinstance(matern_value(0.5, KernelParams()), float)
    assert isinstance(rbf_value(0.5, KernelParams()), float)
    assert matern_value(np.array([0.5, 1.0]), KernelParams()).shape == (2,)


# ---------------------------------------------------------------- errors


@pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf])
def test_bad_distance_rejected(bad):
    with pytest.raises(DomainError):
        matern_value(bad, KernelParams())
    with pytest.raises(DomainError):
        rbf_value(bad, KernelParams())


@pytest.mark.parametrize(
    "fields", [dict(sigma=0), dict(rho=-1), dict(nu=0), dict(tau=-0.1), dict(rho=math.nan)]
)
def test_invalid_params_rejected(fields):
    with pytest.raises(DomainError):
        KernelParams(**fields)


def test_params_are_immutable():
    p = KernelParams()
    with pytest.raises(AttributeError):
        p.rho = 2.0
    assert p.replace(rho=2.0).rho == 2.0 and p.rho == 1.0


def test_dimension_mismatch_rejected():
    with pytest.raises(DomainError):
        cov_matrix(np.zeros((2, 3)), np.zeros((2, 2)), "rbf", KernelParams())


def test_unknown_kind_rejected():
    with pytest.raises(DomainError):
        KernelKind.parse("cauchy")


# ---------------------------------------------------------------- identities


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, 0.8, 4.0])
def test_matern_non_increasing(nu):
    p = KernelParams(rho=1.7, nu=nu)
    d = np.linspace(0, 10 * p.rho, 1000)
    assert np.all(np.diff(matern_value(d, p)) <= 0)


def test_half_matern_equals_exponential():
    p = KernelParams(sigma=2.5, rho=0.6, nu=0.5)
    d = np.linspace(0, 10 * p.rho, 1001)[1:]
    np.testing.assert_allclose(matern_value(d, p), p.sigma**2 * np.exp(-d / p.rho), rtol=1e-12)


def test_large_nu_approaches_rbf():
    p = KernelParams(rho=1.3, nu=50.0)
    d = np.linspace(0, 2 * p.rho, 401)
    np.testing.assert_allclose(matern_value(d, p), rbf_value(d, p), rtol=1e-2)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    d = rng.uniform(0, 5, size=50)
    d[3] = 0.0
    for kind, fn in [(KernelKind.MATERN, matern_value), (KernelKind.RBF, rbf_value)]:
        p = KernelParams(sigma=1.7, rho=0.9, nu=1.5, tau=0.2)
        np.testing.assert_allclose(kernel_from_distances(d, kind, p), fn(d, p), rtol=1e-14)


def test_neighborhood_distances_match_pairwise():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 4))
    S = np.array([rng.permutation(30)[:6] for _ in range(5)])
    D = neighborhood_distances(X, S)
    for r in range(5):
        np.testing.assert_allclose(D[r], pairwise_distances(X[S[r]], X[S[r]]), rtol=1e-14)


@pytest.mark.parametrize("kind,nu", [(KernelKind.RBF, 0.5), (KernelKind.MATERN, 0.5),
                                     (KernelKind.MATERN, 1.5), (KernelKind.MATERN, 2.5),
                                     (KernelKind.MATERN, 1.2)])
def test_neighborhood_kernel_matches_cov_matrix(kind, nu):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    X[5] = X[9]  # duplicate coordinates pick up the nugget off the diagonal too
    S = np.array([rng.permutation(40)[:8] for _ in range(6)])
    S[0, :2] = [5, 9]
    p = KernelParams(sigma=1.4, rho=0.8, nu=nu, tau=0.3)
    K = neighborhood_kernel(X, S, kind, p)
    for r in range(6):
        np.testing.assert_allclose(K[r], cov_matrix(X[S[r]], X[S[r]], kind, p), rtol=1e-13)
        np.testing.assert_array_equal(K[r], K[r].T)


# ---------------------------------------------------------------- properties

params_st = st.builds(
    KernelParams,
    sigma=st.floats(0.1, 10),
    rho=st.floats(0.05, 20),
    nu=st.sampled_from([0.5, 1.5, 2.5, 0.7, 3.3]),
    tau=st.floats(1e-6, 1.0),
)


@settings(max_examples=40, deadline=None)
@given(
    params=params_st,
    kind=st.sampled_from(list(KernelKind)),
    n=st.integers(1, 60),
    seed=st.integers(0, 2**31),
)
def test_cov_matrix_symmetric_and_factorizable(params, kind, n, seed):
    X = np.random.default_rng(seed).uniform(-2, 2, size=(n, 3))
    K = cov_matrix(X, X, kind, params)
    np.testing.assert_array_equal(K, K.T)
    np.linalg.cholesky(K)


@settings(max_examples=40, deadline=None)
@given(params=params_st, kind=st.sampled_from(list(KernelKind)), seed=st.integers(0, 2**31))
def test_cross_covariance_transpose(params, kind, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(7, 2)), rng.normal(size=(5, 2))
    np.testing.assert_allclose(
        cov_matrix(A, B, kind, params), cov_matrix(B, A, kind, params).T, rtol=1e-14, atol=0
    )


@settings(max_examples=50, deadline=None)
@given(params=params_st)
def test_zero_distance_value(params):
    expected = params.sigma**2 * (1 + params.tau**2)
    assert matern_value(0.0, params) == expected
    assert rbf_value(0.0, params) == expected


def test_cholesky_succeeds_at_500_points_small_nugget():
    X = np.random.default_rng(5).uniform(size=(500, 2))
    for kind in KernelKind:
        np.linalg.cholesky(cov_matrix(X, X, kind, KernelParams(rho=0.3, nu=2.5, tau=1e-6)))
