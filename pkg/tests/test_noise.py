import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mmlq.noise import (
    Gaussian,
    GaussianMixture,
    Laplace,
    PointMass,
    Uniform,
    distribution_from_dict,
    point_mass_at_zero,
)

FAMILIES = [
    PointMass([[-1.0], [3.0]], [0.75, 0.25]),
    Gaussian([[2.0, 0.3], [0.3, 0.5]]),
    Uniform([1.0, 2.0]),
    Laplace([0.5]),
    GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[0.2], [0.2]]),
]


@pytest.mark.parametrize("dist", FAMILIES, ids=lambda d: d.family)
def test_dict_roundtrip(dist):
    back = distribution_from_dict(dist.to_dict())
    assert type(back) is type(dist)
    assert back.to_dict() == dist.to_dict()


@pytest.mark.parametrize("dist", FAMILIES, ids=lambda d: d.family)
def test_sample_moments_match_declared(dist):
    # Monte Carlo mean within 5 standard errors of the declared (zero or mixture) mean.
    rng = np.random.default_rng(7)
    u = rng.random((200_000, dist.n_uniforms))
    x = dist.transform(u)
    assert x.shape == (200_000, dist.dim)
    se = np.sqrt(np.diag(dist.cov()) / x.shape[0])
    assert np.all(np.abs(x.mean(0) - dist.mean()) < 5 * se + 1e-12)
    np.testing.assert_allclose(np.cov(x.T, bias=True).reshape(dist.dim, dist.dim) + np.outer(x.mean(0), x.mean(0)), dist.cov(), rtol=0.03, atol=0.01)


def test_gaussian_logpdf_matches_scipy():
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    x = np.random.default_rng(1).standard_normal((50, 2))
    np.testing.assert_allclose(Gaussian(cov).logpdf(x), stats.multivariate_normal(np.zeros(2), cov).logpdf(x), rtol=1e-12)


def test_scalar_gaussian_logpdf_matches_scipy():
    x = np.linspace(-4, 4, 17)[:, None]
    np.testing.assert_allclose(Gaussian([[0.8]]).logpdf(x), stats.norm(0, np.sqrt(0.8)).logpdf(x[:, 0]), rtol=1e-12)


def test_laplace_and_uniform_logpdf_match_scipy():
    x = np.linspace(-3, 3, 13)[:, None]
    np.testing.assert_allclose(Laplace([0.5]).logpdf(x), stats.laplace(0, 0.5).logpdf(x[:, 0]), rtol=1e-12)
    inside = np.abs(x[:, 0]) <= 1.0
    lp = Uniform([1.0]).logpdf(x)
    np.testing.assert_allclose(lp[inside], np.log(0.5))
    assert np.all(np.isneginf(lp[~inside]))


def test_mixture_logpdf_matches_direct_sum():
    m = GaussianMixture([0.3, 0.7], [[-1.0], [2.0]], [[0.5], [1.5]])
    x = np.linspace(-3, 4, 9)
    direct = 0.3 * stats.norm(-1, np.sqrt(0.5)).pdf(x) + 0.7 * stats.norm(2, np.sqrt(1.5)).pdf(x)
    np.testing.assert_allclose(np.exp(m.logpdf(x[:, None])), direct, rtol=1e-12)


def test_point_mass_transform_hits_atoms_with_right_frequencies():
    d = PointMass([[-1.0], [3.0]], [0.75, 0.25])
    u = (np.arange(1000) + 0.5)[:, None] / 1000
    x = d.transform(u)
    assert set(np.unique(x)) == {-1.0, 3.0}
    assert np.mean(x == 3.0) == 0.25


def test_point_mass_log_pmf():
    d = PointMass([[-1.0], [3.0]], [0.75, 0.25])
    lp = d.log_pmf(np.array([[-1.0], [3.0], [0.0]]))
    np.testing.assert_allclose(lp[:2], np.log([0.75, 0.25]))
    assert np.isneginf(lp[2])


def test_point_mass_at_zero():
    d = point_mass_at_zero(2)
    assert d.dim == 2
    np.testing.assert_array_equal(d.cov(), np.zeros((2, 2)))


@pytest.mark.parametrize(
    "bad",
    [
        {"family": "cauchy", "scale": [1.0]},
        {"family": "gaussian"},
        {"family": "gaussian", "cov": [[1.0]], "mean": [0.0]},
        {"atoms": [[0.0]]},
    ],
)
def test_bad_distribution_dicts_raise(bad):
    with pytest.raises(ValueError):
        distribution_from_dict(bad)


def test_point_mass_probabilities_must_sum_to_one():
    with pytest.raises(ValueError):
        PointMass([[0.0], [1.0]], [0.5, 0.6])


@given(st.floats(0.05, 5.0), st.floats(1e-6, 1 - 1e-6))
def test_laplace_transform_inverts_cdf(scale, u):
    x = Laplace([scale]).transform(np.array([[u]]))[0, 0]
    assert stats.laplace(0, scale).cdf(x) == pytest.approx(u, abs=1e-9)
