import numpy as np
import pytest

from dynirt.kernel import (
    FALLBACK_VARIANCE,
    KernelParams,
    SingularCovarianceError,
    build_cov,
    check_positive_definite,
    predictive,
    predictive_marginals,
    rbf,
    site_posterior,
)

from oracles import joint_conditioning, rbf_matrix


def test_rbf_values():
    assert rbf(0.0, KernelParams(h=0.3, S=1.0, epsilon=0.0)) == 1.0
    assert rbf(0.3, KernelParams(h=0.3, S=1.0, epsilon=0.0)) == pytest.approx(np.exp(-0.5), abs=1e-12)
    assert rbf(0.0, KernelParams(h=0.19, S=0.6, epsilon=1e-4)) == pytest.approx(0.3601, abs=1e-12)


def test_rbf_jitter_only_at_zero_lag():
    p = KernelParams(h=1.0, S=1.0, epsilon=0.5)
    assert rbf(1e-300, p) == pytest.approx(1.0)
    assert rbf(0.0, p) == pytest.approx(1.5)


def test_rbf_rejects_non_finite():
    with pytest.raises(ValueError):
        rbf(np.nan, KernelParams(h=1.0))


@pytest.mark.parametrize("kw", [dict(h=0.0), dict(h=1.0, S=-1.0), dict(h=1.0, epsilon=-1e-3)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        KernelParams(**kw)


def test_build_cov_examples():
    p = KernelParams(h=0.19, S=1.0, epsilon=1e-4)
    np.testing.assert_allclose(build_cov([0.0], [0.0], p, self_cov=True), [[1.0001]])
    q = KernelParams(h=0.4, epsilon=0.0)
    e = np.exp(-0.5)
    np.testing.assert_allclose(build_cov([0.0, 0.4], [0.0, 0.4], q, self_cov=True), [[1, e], [e, 1]], atol=1e-14)


def test_build_cov_cross_has_no_jitter():
    p = KernelParams(h=0.2, epsilon=0.1)
    t = np.array([0.0, 0.5])
    np.testing.assert_allclose(build_cov(t, t, p), rbf_matrix(t, t, 0.2))
    np.testing.assert_allclose(build_cov(t, t, p, self_cov=True), rbf_matrix(t, t, 0.2) + 0.1 * np.eye(2))


def test_jittered_min_eigenvalue():
    rng = np.random.default_rng(0)
    t = rng.random(5)
    K = build_cov(t, t, KernelParams(h=0.19, epsilon=1e-4), self_cov=True)
    assert np.linalg.eigvalsh(K).min() >= 1e-4 - 1e-12


def test_singular_covariance_names_jitter():
    t = np.array([0.0, 1e-9])
    K = build_cov(t, t, KernelParams(h=1.0, epsilon=0.0), self_cov=True)
    with pytest.raises(SingularCovarianceError, match="epsilon"):
        check_positive_definite(K, KernelParams(h=1.0, epsilon=0.0))


def test_predictive_single_unit_gaussian():
    mu, sigma = predictive([0.0], [0.0], [1.0], [1.0], KernelParams(h=1.0, epsilon=0.0))
    np.testing.assert_allclose(mu, [0.5], atol=1e-12)
    np.testing.assert_allclose(sigma, [[0.5]], atol=1e-12)


def test_predictive_all_discarded_is_prior():
    rng = np.random.default_rng(1)
    t = np.sort(rng.random(6))
    tau = np.linspace(0, 1, 4)
    p = KernelParams(h=0.2)
    mu, sigma = predictive(t, tau, rng.normal(size=6), np.full(6, FALLBACK_VARIANCE), p)
    assert np.all(np.abs(mu) < 1e-3)
    np.testing.assert_allclose(sigma, build_cov(tau, tau, p), atol=1e-3)


def test_predictive_matches_joint_conditioning():
    rng = np.random.default_rng(2)
    for _ in range(25):
        n, k = rng.integers(1, 7), rng.integers(1, 7)
        t = rng.random(n)
        tau = rng.random(k)
        m = rng.normal(size=n)
        v = rng.uniform(0.05, 3.0, n)
        h = rng.uniform(0.1, 1.0)
        mu, sigma = predictive(t, tau, m, v, KernelParams(h=h, epsilon=1e-4))
        mo, so = joint_conditioning(t, tau, m, v, h, 1.0, 1e-4)
        np.testing.assert_allclose(mu, mo, atol=1e-8)
        np.testing.assert_allclose(sigma, so, atol=1e-8)


def test_predictive_symmetric_psd():
    rng = np.random.default_rng(3)
    t = rng.random(8)
    tau = np.linspace(-0.5, 1.5, 30)
    _, sigma = predictive(t, tau, rng.normal(size=8), rng.uniform(0.01, 1, 8), KernelParams(h=0.3))
    np.testing.assert_array_equal(sigma, sigma.T)
    assert np.linalg.eigvalsh(sigma).min() >= -1e-8


def test_marginals_agree_with_full_predictive():
    rng = np.random.default_rng(4)
    t = rng.random(7)
    tau = rng.random(5)
    m, v = rng.normal(size=7), rng.uniform(0.1, 2, 7)
    p = KernelParams(h=0.25)
    mu, sigma = predictive(t, tau, m, v, p)
    mu2, var2 = predictive_marginals(t, tau, m, v, p)
    np.testing.assert_allclose(mu2, mu, atol=1e-12)
    np.testing.assert_allclose(var2, np.diag(sigma), atol=1e-12)


def test_site_posterior_matches_dense_inverse():
    rng = np.random.default_rng(5)
    t = rng.random(6)
    p = KernelParams(h=0.3)
    K = build_cov(t, t, p, self_cov=True)
    m, v = rng.normal(size=6), rng.uniform(0.1, 2, 6)
    P, mu_hat = site_posterior(K, m, v)
    Pd = np.linalg.inv(np.linalg.inv(K) + np.diag(1 / v))
    np.testing.assert_allclose(P, Pd, atol=1e-10)
    np.testing.assert_allclose(mu_hat, Pd @ (m / v), atol=1e-10)


def test_negative_site_variance_matches_direct_conditioning():
    t = np.array([0.0, 0.2, 0.5, 0.9])
    tau = np.linspace(-0.1, 1.1, 9)
    m = np.array([0.3, -0.4, 1.2, 0.1])
    v = np.array([0.5, -4.0, 1e6, 0.8])
    p = KernelParams(h=0.3)
    mu, cov = predictive(t, tau, m, v, p)
    mo, co = joint_conditioning(t, tau, m, v, 0.3, 1.0, 1e-4)
    np.testing.assert_allclose(mu, mo, atol=1e-8)
    np.testing.assert_allclose(cov, co, atol=1e-8)
    mu2, var2 = predictive_marginals(t, tau, m, v, p)
    np.testing.assert_allclose(mu2, mo, atol=1e-8)
    np.testing.assert_allclose(var2, np.diag(co), atol=1e-8)


def test_zero_site_variance_rejected():
    with pytest.raises(ValueError):
        predictive([0.0], [0.0], [0.0], [0.0], KernelParams(h=0.3))
