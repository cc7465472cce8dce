import warnings

import numpy as np
import pytest
from scipy import special

from dynirt import curvfife
from dynirt.dynaesti import (
    EmConfig,
    Responses,
    ResponseRecord,
    e_step,
    expected_loglik,
    holdout_bandwidths,
    holdout_compare,
    m_step,
    run_em,
    select_bandwidths,
    total_expected_loglik,
)
from dynirt.emissions import EmissionTriplet
from dynirt.irf import ItemModel, ThreePL
from dynirt.kernel import KernelParams
from dynirt.simulate import SynthConfig, simulate


def _easy(n):
    return {f"i{j}": ItemModel("probit3pl", ThreePL(1.5, 0.2, 0.0)) for j in range(n)}


def _tiny(seed=0, n=5, m=5, static=False):
    return simulate(SynthConfig(n_students=n, m_items=m, seed=seed, static=static))


class TestResponses:
    def test_from_matrix_skips_nan(self):
        R = np.array([[1, np.nan], [0, 1]])
        T = np.array([[0.0, 1.0], [0.0, 1.0]])
        r = Responses.from_matrix(R, T)
        assert len(r) == 3
        assert r.students == ["0", "1"]

    def test_records_round_trip(self):
        recs = [ResponseRecord("a", "i1", 0.0, 1), ResponseRecord("b", "i2", 0.5, 0)]
        assert list(Responses.from_records(recs).records()) == recs

    def test_uniqueness(self):
        r = Responses(["a", "a"], ["i", "i"], [0.0, 0.0], [1, 0])
        with pytest.raises(ValueError, match="unique"):
            r.check_unique()

    def test_nonfinite_time(self):
        with pytest.raises(ValueError):
            Responses(["a"], ["i"], [np.nan], [1])

    def test_natural_sort(self):
        r = Responses(["s10", "s9", "s2"], ["i", "i", "i"], [0.0, 0.0, 0.0], [1, 1, 1])
        assert r.students == ["s2", "s9", "s10"]


def test_config_validation():
    with pytest.raises(ValueError):
        EmConfig(em_max_rounds=0)
    with pytest.raises(ValueError):
        EmConfig(quad_points=5)
    with pytest.raises(ValueError):
        EmConfig(mode="batch")
    with pytest.raises(ValueError):
        EmConfig(param_tol=0.0)


def test_stopping_defaults_depend_on_mode():
    dyn, sta = EmConfig(), EmConfig(mode="static")
    assert (dyn.max_rounds, dyn.item_tol) == (30, np.inf)
    assert (sta.max_rounds, sta.item_tol) == (200, 5e-3)
    assert EmConfig(mode="static", em_max_rounds=7, param_tol=1.0).max_rounds == 7


class TestEStep:
    def test_all_correct_on_easy_items_above_prior(self):
        items = _easy(8)
        r = Responses(["s"] * 8, list(items), np.linspace(0, 1, 8), [1] * 8)
        est = e_step(r, items, EmConfig(h=0.3))
        assert np.all(est.mean > 0)

    def test_single_response_matches_one_emission_fit(self):
        item = ItemModel("probit3pl", ThreePL(1.2, 0.4, 0.1))
        r = Responses(["s"], ["i"], [0.3], [1])
        est = e_step(r, {"i": item}, EmConfig(h=0.2))
        em = EmissionTriplet(0.3, 1, lambda x: item.loglik(x, 1))
        d = curvfife.fit([em], KernelParams(h=0.2), transform=item.transform)
        mu, var = d.query_marginals([0.3])
        assert est.mean[0] == pytest.approx(mu[0], abs=1e-12)
        assert est.var[0] == pytest.approx(var[0], abs=1e-12)

    def test_static_mode_matches_grid_posterior(self):
        items = {f"i{j}": ItemModel("probit3pl", ThreePL(1.0 + 0.1 * j, 0.2 + 0.1 * j, 0.05)) for j in range(6)}
        resp = [1, 1, 0, 1, 0, 0]
        r = Responses(["s"] * 6, list(items), np.linspace(0, 1, 6), resp)
        est = e_step(r, items, EmConfig(mode="static"))
        # the likelihood sees u = z + e with jitter e ~ N(0, 1e-4); report z
        k = 1.0001
        x = np.linspace(-10, 10, 40001)
        logp = -0.5 * x**2 / k
        for j, rr in zip(items, resp):
            logp = logp + items[j].loglik(x, rr)
        p = np.exp(logp - logp.max())
        p /= np.trapezoid(p, x)
        mu_u = np.trapezoid(p * x, x)
        var_u = np.trapezoid(p * (x - mu_u) ** 2, x)
        mean, var = mu_u / k, 1 - (k - var_u) / k**2
        np.testing.assert_allclose(est.mean, mean, atol=1e-6)
        np.testing.assert_allclose(est.var, var, atol=1e-6)

    def test_missing_item_raises(self):
        r = Responses(["s"], ["i"], [0.0], [1])
        with pytest.raises(KeyError):
            e_step(r, {}, EmConfig(h=0.2))

    def test_student_order_invariance(self):
        data = _tiny(1)
        cfg = EmConfig(h=0.2)
        a = e_step(data.responses, data.items, cfg)
        perm = np.random.default_rng(0).permutation(len(data.responses))
        shuffled = data.responses.subset(perm)
        b = e_step(shuffled, data.items, cfg)
        np.testing.assert_array_equal(a.mean[perm], b.mean)
        np.testing.assert_array_equal(a.var[perm], b.var)


class TestMStep:
    def test_ascent_per_item(self):
        data = _tiny(2, n=20, m=6)
        cfg = EmConfig(h=0.2)
        items = {j: ItemModel("probit3pl", ThreePL(1.0, 0.5, 0.0)) for j in data.items}
        est = e_step(data.responses, items, cfg)
        new, info = m_step(data.responses, est.mean, est.var, items, cfg)
        for j, up in info.items():
            idx = data.responses.item == j
            r, mu, v = data.responses.response[idx], est.mean[idx], est.var[idx]
            assert expected_loglik(new[j], r, mu, v) >= expected_loglik(items[j], r, mu, v) - 1e-8

    def test_recovers_items_from_known_abilities(self):
        rng = np.random.default_rng(3)
        true = ItemModel("probit3pl", ThreePL(1.3, 0.45, 0.12))
        x = rng.normal(size=2000)
        p = true.prob(special.ndtr(x), 1)
        r = (rng.random(2000) < p).astype(int)
        resp = Responses([f"s{i}" for i in range(2000)], ["i"] * 2000, np.zeros(2000), r)
        new, _ = m_step(resp, x, np.full(2000, 1e-10), {"i": ItemModel("probit3pl", ThreePL(1.0, 0.5, 0.0))}, EmConfig())
        from dynirt.evaluate import irf_rmise

        assert irf_rmise(true, new["i"]) < 0.02

    def test_all_correct_item_does_not_crash(self):
        resp = Responses([f"s{i}" for i in range(50)], ["i"] * 50, np.zeros(50), np.ones(50, dtype=int))
        mean = np.random.default_rng(4).normal(size=50)
        new, _ = m_step(resp, mean, np.full(50, 0.2), {"i": ItemModel("probit3pl", ThreePL(1.0, 0.5, 0.0))}, EmConfig())
        assert np.all(np.isfinite(new["i"].to_vector()))
        assert new["i"].prob(0.5, 1) > 0.95

    def test_item_order_invariance(self):
        data = _tiny(5, n=10, m=6)
        cfg = EmConfig(h=0.2)
        est = e_step(data.responses, data.items, cfg)
        a, _ = m_step(data.responses, est.mean, est.var, data.items, cfg)
        rev = dict(reversed(list(data.items.items())))
        b, _ = m_step(data.responses, est.mean, est.var, rev, cfg)
        for j in a:
            np.testing.assert_array_equal(a[j].to_vector(), b[j].to_vector())


class TestRunEm:
    def test_smoke_one_round(self):
        data = _tiny(6)
        res = run_em(data.responses, EmConfig(em_max_rounds=1, h=0.2))
        assert np.isfinite(res.diagnostics["final_expected_loglik"])
        assert set(res.abilities) == set(data.students)
        for est in res.abilities.values():
            lo, hi = est.band70
            assert np.all(lo <= est.median) and np.all(est.median <= hi)

    def test_monotone_within_m_steps(self):
        data = _tiny(7, n=15, m=8)
        res = run_em(data.responses, EmConfig(em_max_rounds=4, h=0.2))
        for row in res.diagnostics["history"]:
            assert row["post_m"] >= row["pre_m"] - 1e-8

    def test_cv_happens_at_cv_round(self):
        data = _tiny(8, n=6, m=10)
        cfg = EmConfig(em_max_rounds=3, cv_candidates=(0.1, 0.4), cv_round=2, em_tol=0.0)
        res = run_em(data.responses, cfg)
        flags = [row["selected_h"] for row in res.diagnostics["history"]]
        assert flags == [False, True, False]
        assert set(res.diagnostics["bandwidths"].values()) <= {0.1, 0.4}
        assert len(set(res.diagnostics["bandwidths"].values())) == 1

    def test_parameter_rule_delays_stop(self):
        data = _tiny(11, n=15, m=8)
        loose = run_em(data.responses, EmConfig(h=0.2, em_tol=1.0, em_max_rounds=6))
        tight = run_em(data.responses, EmConfig(h=0.2, em_tol=1.0, em_max_rounds=6, param_tol=1e-12))
        assert loose.diagnostics["converged"] and loose.diagnostics["rounds"] == 2
        assert tight.diagnostics["rounds"] == 6
        moved = [row["max_param_change"] for row in tight.diagnostics["history"]]
        assert all(m > 1e-12 for m in moved)

    def test_static_mode_flat_abilities(self):
        data = _tiny(9, static=True)
        res = run_em(data.responses, EmConfig(mode="static", em_max_rounds=2))
        for est in res.abilities.values():
            assert np.ptp(est.median) == 0.0

    def test_default_initial_items(self):
        data = _tiny(10)
        res = run_em(data.responses, EmConfig(em_max_rounds=1, h=0.2))
        assert set(res.items) == set(data.items)

    def test_worker_count_does_not_change_result(self):
        data = _tiny(11, n=6, m=6)
        a = run_em(data.responses, EmConfig(em_max_rounds=2, cv_candidates=(0.1, 0.3), cv_round=1, workers=1))
        b = run_em(data.responses, EmConfig(em_max_rounds=2, cv_candidates=(0.1, 0.3), cv_round=1, workers=3))
        for j in a.items:
            np.testing.assert_array_equal(a.items[j].to_vector(), b.items[j].to_vector())
        for s in a.abilities:
            np.testing.assert_array_equal(a.abilities[s].median, b.abilities[s].median)


def test_select_bandwidths_per_student_scope():
    data = _tiny(12, n=4, m=12)
    cfg = EmConfig(cv_scope="student", cv_candidates=(0.05, 0.5))
    bw, scores = select_bandwidths(data.responses, data.items, cfg)
    assert set(bw) == set(data.students)
    for s, sc in scores.items():
        top = max(sc.values())
        assert bw[s] == min(h for h, v in sc.items() if v == top)


def test_total_expected_loglik_sums_items():
    data = _tiny(13)
    est = e_step(data.responses, data.items, EmConfig(h=0.2))
    total = total_expected_loglik(data.responses, est.mean, est.var, data.items)
    parts = 0.0
    for j in data.items:
        idx = data.responses.item == j
        parts += expected_loglik(data.items[j], data.responses.response[idx], est.mean[idx], est.var[idx])
    assert total == pytest.approx(parts)


class TestHoldout:
    def test_bandwidth_grid_adds_near_static_candidate(self):
        hs = holdout_bandwidths([0.0, 0.5, 2.0])
        np.testing.assert_allclose(hs[:-1], curvfife.default_bandwidths([0.0, 2.0]))
        assert hs[-1] == 20.0

    def test_two_responses(self):
        items = _easy(2)
        r = Responses(["s", "s"], list(items), [0.0, 1.0], [1, 0])
        res = holdout_compare(r, items, EmConfig(h=0.3), n_runs=3)
        assert np.isfinite(res.ratio) and res.ratio > 0
        assert len(res.runs) == 3

    def test_needs_two(self):
        r = Responses(["s"], ["i0"], [0.0], [1])
        with pytest.raises(ValueError):
            holdout_compare(r, _easy(1))

    def test_seeded(self):
        items = _easy(10)
        rng = np.random.default_rng(14)
        r = Responses(["s"] * 10, list(items), np.linspace(0, 1, 10), rng.integers(0, 2, 10))
        a = holdout_compare(r, items, EmConfig(h=0.3), n_runs=2, seed=5)
        b = holdout_compare(r, items, EmConfig(h=0.3), n_runs=2, seed=5)
        assert a.ratio == b.ratio


def test_e_step_emits_no_warnings_on_clean_data():
    data = _tiny(15)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        e_step(data.responses, data.items, EmConfig(h=0.2))
