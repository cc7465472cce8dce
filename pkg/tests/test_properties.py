"""Property-based checks of structural invariants."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynirt.emissions import EmissionTriplet, gaussian_emission, tilted_moments
from dynirt.evaluate import SampledFunction, correspondence, rmise
from dynirt.grafting import GaussianFactorSet, compute_messages, graft
from dynirt.irf import GolfItem, ItemModel, ThreePL, golf_probs
from dynirt.kernel import KernelParams, build_cov, predictive_marginals

from oracles import joint_conditioning, leave_one_out_messages

X = np.linspace(0, 1, 201)
FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

finite = st.floats(-3, 3, allow_nan=False)
curves = arrays(np.float64, 201, elements=finite)


def _smooth(coefs):
    # random smooth curve: a few sine modes plus a trend
    k = np.arange(1, len(coefs) + 1)
    return X * coefs[0] + (np.sin(np.pi * np.outer(X, k)) * np.asarray(coefs)).sum(axis=1)


smooth = st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=6).map(_smooth)


def _nonconstant(v):
    return np.ptp(np.gradient(v, X)) > 1e-3 or np.abs(np.gradient(v, X)).max() > 1e-3


@FAST
@given(curves, curves, curves)
def test_rmise_is_a_metric(f, g, k):
    F, G, K = (SampledFunction(X, v) for v in (f, g, k))
    assert rmise(F, G) == rmise(G, F)
    assert rmise(F, F) == 0.0
    assert rmise(F, K) <= rmise(F, G) + rmise(G, K) + 1e-10
    if np.abs(f - g).max() > 1e-100:
        assert rmise(F, G) > 0


@FAST
@given(smooth, smooth, st.floats(-5, 5), st.floats(0.01, 100))
def test_correspondence_invariances(a, b, shift, scale):
    if not (_nonconstant(a) and _nonconstant(b)):
        return
    A, B = SampledFunction(X, a), SampledFunction(X, b)
    c = correspondence(A, B)
    assert -1 - 1e-10 <= c <= 1 + 1e-10
    assert abs(correspondence(A, SampledFunction(X, b + shift)) - c) < 1e-10
    assert abs(correspondence(SampledFunction(X, a * scale), B) - c) < 1e-10
    assert abs(correspondence(SampledFunction(X, scale * b - shift), A) - c) < 1e-10


times = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=8, unique=True)


@FAST
@given(times, st.floats(0.05, 2.0), st.floats(0.2, 2.0))
def test_covariance_is_psd(t, h, S):
    K = build_cov(t, t, KernelParams(h=h, S=S), self_cov=True)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


@FAST
@given(st.data())
def test_messages_match_leave_one_out(data):
    n = data.draw(st.integers(1, 6))
    t = np.array(data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n, unique=True)))
    m = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n)))
    v = np.array(data.draw(st.lists(st.floats(0.05, 5), min_size=n, max_size=n)))
    h = data.draw(st.floats(0.1, 1.0))
    msg = compute_messages(GaussianFactorSet(m, v), build_cov(t, t, KernelParams(h=h), True))
    eta, rho = leave_one_out_messages(t, m, v, h, 1.0, 1e-4)
    np.testing.assert_allclose(msg.eta, eta, atol=1e-7)
    np.testing.assert_allclose(msg.rho, rho, rtol=1e-7, atol=1e-9)


@FAST
@given(st.data())
def test_messages_with_negative_sites_match_leave_one_out(data):
    n = data.draw(st.integers(2, 6))
    t = np.array(data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n, unique=True)))
    m = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n)))
    v = np.array(data.draw(st.lists(st.floats(0.05, 5), min_size=n, max_size=n)))
    # one widening site, weak enough to keep the posterior proper
    v[data.draw(st.integers(0, n - 1))] = -data.draw(st.floats(3.0, 50.0))
    h = data.draw(st.floats(0.1, 1.0))
    K = build_cov(t, t, KernelParams(h=h), True)
    if np.linalg.eigvalsh(np.linalg.inv(K) + np.diag(1 / v)).min() <= 1e-6:
        return
    msg = compute_messages(GaussianFactorSet(m, v), K)
    eta, rho = leave_one_out_messages(t, m, v, h, 1.0, 1e-4)
    ok = rho > 0
    np.testing.assert_array_equal(msg.valid, ok)
    np.testing.assert_allclose(msg.eta[ok], eta[ok], atol=1e-7)
    np.testing.assert_allclose(msg.rho[ok], rho[ok], rtol=1e-7, atol=1e-9)


@FAST
@given(st.data())
def test_gaussian_emissions_are_exact(data):
    n = data.draw(st.integers(1, 10))
    t = np.array(data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n, unique=True)))
    y = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n)))
    s = np.array(data.draw(st.lists(st.floats(0.2, 2), min_size=n, max_size=n)))
    p = KernelParams(h=0.3)
    res = graft([gaussian_emission(ti, yi, si) for ti, yi, si in zip(t, y, s)], p)
    # one moving sweep, or none when every emission already equals the N(0, 1) start
    assert res.converged and res.n_iter <= 1 and res.n_sweeps == res.n_iter + 1
    tau = np.linspace(-0.2, 1.2, 7)
    mu, var = predictive_marginals(t, tau, res.factors.m, res.factors.v, p)
    mo, co = joint_conditioning(t, tau, y, s**2, 0.3, 1.0, 1e-4)
    np.testing.assert_allclose(mu, mo, atol=1e-6)
    np.testing.assert_allclose(var, np.diag(co), atol=1e-6)


@FAST
@given(st.floats(-2, 2), st.floats(0.05, 3), st.floats(0.2, 3), st.floats(-1, 1), st.booleans())
def test_log_concave_tilt_shrinks_variance(mean, var, a, beta, r):
    item = ItemModel("3pl", ThreePL(a, beta, 0.0))
    tm = tilted_moments(EmissionTriplet(0.0, r, lambda x: item.loglik(x, int(r))), mean, var)
    nu, gamma = tm.nu, tm.gamma
    assert 0 < gamma <= var * (1 + 1e-6)
    # a correct answer pulls the mean up, a wrong one down
    assert (nu - mean) * (1 if r else -1) >= -1e-9


@FAST
@given(arrays(np.float64, 5, elements=st.floats(-4, 4)), st.lists(st.floats(0.1, 3), min_size=4, max_size=4))
def test_golf_probabilities_normalised(theta, a):
    item = GolfItem({-2: (a[0], -1.0), -1: (a[1], -0.2), 1: (a[2], 0.5), 2: (a[3], 1.4)})
    p = golf_probs(theta, item)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@FAST
@given(st.floats(0.2, 3), st.floats(0.02, 0.98), st.floats(0, 0.45))
def test_item_vector_round_trip(a, b, c):
    item = ItemModel("probit3pl", ThreePL(a, b, c))
    back = item.with_vector(item.to_vector())
    assert abs(back.params.a - a) < 1e-12 and abs(back.params.b - b) < 1e-9 and back.params.c == c
