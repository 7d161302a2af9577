import io
from datetime import date, timedelta

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st

from memealert.econometrics import (AR_CONTEMPORANEOUS, AV_CONTEMPORANEOUS, DEFAULT_SPECS, PREDICTIVE, CollinearityError,
                                    DesignError, RegressionSpec, SeriesStore, build_design,
                                    diff, fit_spec, format_spec, hac_cov, interaction, lag,
                                    level, newey_west_lags, ols_hac, parse_spec, parse_term,
                                    run_default_regressions, white_cov, write_regression_report)

SERIES = ("AR", "AV", "volume", "open", "close", "outage_reports", "subscriber_rank",
          "subscribers", "avg_user_rank", "abn")


def store(n=168, seed=0, outages=True):
    rng = np.random.default_rng(seed)
    dates = tuple(date(2021, 1, 1) + timedelta(days=i) for i in range(n))
    s = SeriesStore(dates)
    for name in SERIES:
        s.add(name, rng.normal(size=n))
    s.columns["AR"][0] = np.nan  # no return on the first day
    reports = rng.poisson(3, n) * (rng.random(n) < 0.3) if outages else np.zeros(n)
    s.add("outage_reports", reports.astype(float))
    s.add("outage_flag", (reports != 0).astype(float))
    return s


class TestDesign:
    def test_contemporaneous_rows(self):
        assert build_design(store(), AR_CONTEMPORANEOUS).X.shape[0] == 166

    def test_volume_rows(self):
        # AV has no gap on day 0, so only the difference and the lag cost a row each
        assert build_design(store(), AV_CONTEMPORANEOUS).X.shape[0] == 167

    def test_predictive_rows(self):
        # lag 2 of a first difference needs three earlier days
        assert build_design(store(), PREDICTIVE).X.shape[0] == 165

    def test_names_and_constant(self):
        d = build_design(store(), AR_CONTEMPORANEOUS)
        assert d.names == ["const", "d.volume", "d.open", "L1.AR", "outage_reports",
                           "subscriber_rank", "abn", "outage_flag", "abn*outage_flag"]
        assert np.all(d.X[:, 0] == 1.0)

    def test_transforms(self):
        s = store(10)
        s.add("x", np.arange(10.0) ** 2)
        spec = RegressionSpec("t", "volume", (diff("x"), lag("x", 2), lag(diff("x"), 1)))
        d = build_design(s, spec)
        # lag 2 and the lagged difference both reach back two days
        assert d.dropped_rows == 2
        x = np.arange(10.0) ** 2
        np.testing.assert_array_equal(d.X[:, 1], np.diff(x)[1:])
        np.testing.assert_array_equal(d.X[:, 2], x[:8])
        np.testing.assert_array_equal(d.X[:, 3], np.diff(x)[:8])

    def test_missing_series_named(self):
        s = store()
        del s.columns["subscribers"]
        with pytest.raises(DesignError, match="subscribers"):
            build_design(s, AV_CONTEMPORANEOUS)

    def test_misaligned_series_listed(self):
        days = [date(2021, 1, i) for i in range(1, 6)]
        with pytest.raises(DesignError, match="b .*2021-01-05"):
            SeriesStore.from_mappings(days, {"a": {d: 1.0 for d in days},
                                             "b": {d: 1.0 for d in days[:4]}})

    def test_zero_dummy_dropped_with_note(self):
        res = fit_spec(store(outages=False), AR_CONTEMPORANEOUS)
        assert "outage_flag" not in res.names and "abn*outage_flag" not in res.names
        assert any("all-zero" in n for n in res.notes)

    def test_spec_validation(self):
        with pytest.raises(DesignError, match="duplicate"):
            RegressionSpec("x", "y", (level("a"), level("a")))
        with pytest.raises(DesignError, match="operand"):
            RegressionSpec("x", "y", (level("a"), interaction("a", "b")))
        RegressionSpec("x", "y", (level("a"), interaction("a", "outage_flag")))

    @settings(max_examples=30, deadline=None)
    @given(st.permutations(list(range(8))))
    def test_order_independence(self, perm):
        s = store()
        base = fit_spec(s, AR_CONTEMPORANEOUS).params()
        terms = tuple(AR_CONTEMPORANEOUS.regressors[i] for i in perm)
        permuted = fit_spec(s, RegressionSpec("p", "AR", terms)).params()
        assert set(base) == set(permuted)
        for k in base:
            assert permuted[k] == pytest.approx(base[k], rel=1e-9, abs=1e-12)


class TestSpecText:
    def test_parse(self):
        spec = parse_spec("name = eq\ndependent = AR\n"
                          "regressors = diff(volume), lag(AR,1), abn, outage_flag, abn*outage_flag\n"
                          "hac_lags = 3  # fixed\n")
        assert [t.name for t in spec.regressors] == ["d.volume", "L1.AR", "abn", "outage_flag",
                                                     "abn*outage_flag"]
        assert spec.hac_lags == 3

    def test_lag_of_difference(self):
        assert parse_term("lag(diff(open),2)").name == "L2.d.open"

    def test_errors(self):
        with pytest.raises(DesignError):
            parse_spec("dependent = AR\n")
        with pytest.raises(DesignError):
            parse_spec("dependent AR\n")

    @pytest.mark.parametrize("spec", DEFAULT_SPECS, ids=lambda s: s.name)
    def test_round_trip(self, spec):
        again = parse_spec(format_spec(spec))
        assert again.regressors == spec.regressors and again.dependent == spec.dependent


def _sm(X, y, lags):
    return sm.OLS(y, X).fit(cov_type="HAC", cov_kwds={"maxlags": lags, "use_correction": False})


class TestEstimation:
    def test_exact_fit(self):
        x = np.linspace(0, 1, 20)
        res = ols_hac(np.column_stack([np.ones(20), x]), 2 * x)
        assert abs(res.coef[1] - 2) < 1e-10 and res.se[1] < 1e-10

    def test_lag_zero_is_white(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([np.ones(80), rng.normal(size=(80, 3))])
        y = X @ [1, 2, 0, -1] + rng.normal(size=80) * (1 + np.abs(X[:, 1]))
        res = ols_hac(X, y, hac_lags=0)
        assert np.max(np.abs(res.cov - white_cov(X, res.resid))) < 1e-10
        ref = sm.OLS(y, X).fit(cov_type="HC0")
        assert np.max(np.abs(res.cov - ref.cov_params())) < 1e-10

    @pytest.mark.parametrize("lags", [1, 4, 9])
    def test_matches_statsmodels(self, lags):
        rng = np.random.default_rng(lags)
        X = np.column_stack([np.ones(166), rng.normal(size=(166, 4))])
        y = X @ [0.1, 1, -1, 0.5, 0] + rng.normal(size=166)
        res = ols_hac(X, y, hac_lags=lags)
        ref = _sm(X, y, lags)
        assert np.max(np.abs(res.coef - ref.params)) < 1e-10
        assert np.max(np.abs(res.cov - ref.cov_params())) < 1e-10
        assert res.adj_r2 == pytest.approx(ref.rsquared_adj, abs=1e-10)
        assert res.aic == pytest.approx(ref.aic, abs=1e-8)

    def test_automatic_lags(self):
        assert newey_west_lags(166) == 4 and newey_west_lags(100) == 4
        assert newey_west_lags(1000) == 6

    def test_autocorrelated_errors_widen_se(self):
        rng = np.random.default_rng(12)
        n = 400
        x = np.zeros(n)
        e = np.zeros(n)
        for t in range(1, n):
            x[t] = 0.8 * x[t - 1] + rng.normal()
            e[t] = 0.8 * e[t - 1] + rng.normal()
        X = np.column_stack([np.ones(n), x])
        res = ols_hac(X, 1 + 0.5 * x + e)
        naive = sm.OLS(1 + 0.5 * x + e, X).fit()
        assert res.se[1] > naive.bse[1]

    def test_homoskedastic_agreement(self):
        rng = np.random.default_rng(13)
        X = np.column_stack([np.ones(4000), rng.normal(size=(4000, 2))])
        y = X @ [1, 1, 1] + rng.normal(size=4000)
        res = ols_hac(X, y, hac_lags=0)
        classical = sm.OLS(y, X).fit().bse
        assert np.allclose(res.se, classical, rtol=0.05)

    def test_collinear_named(self):
        x = np.arange(10.0)
        X = np.column_stack([np.ones(10), x, 2 * x])
        with pytest.raises(CollinearityError, match="x2"):
            ols_hac(X, x)

    def test_too_few_rows(self):
        with pytest.raises(DesignError):
            ols_hac(np.ones((2, 2)), np.ones(2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 6), st.floats(-5, 5))
    def test_properties(self, seed, lags, shift):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(60), rng.normal(size=(60, 3))])
        y = X @ rng.normal(size=4) + rng.standard_t(4, size=60)
        res = ols_hac(X, y, hac_lags=lags)
        scale = np.abs(X).max() * np.abs(y).max() * 60
        assert np.max(np.abs(X.T @ res.resid)) < 1e-8 * scale
        assert np.allclose(res.cov, res.cov.T)
        assert np.linalg.eigvalsh(res.cov).min() > -1e-12
        moved = ols_hac(X, y - y.mean() + shift, hac_lags=lags)
        assert np.allclose(moved.coef[1:], res.coef[1:], atol=1e-10)
        assert res.adj_r2 <= 1.0


def test_default_family_and_report():
    out = run_default_regressions(store(), "AAPL", meme=False)
    assert set(out) == {"ar_contemporaneous", "av_contemporaneous", "ar_predictive"}
    assert any("non-meme" in n for n in out["ar_predictive"].notes)
    assert out["ar_contemporaneous"].n == 166
    buf = io.StringIO()
    write_regression_report(out["ar_contemporaneous"], buf)
    text = buf.getvalue().split("\n\n")
    assert text[0].splitlines()[0] == "regressor,coef,tstat,pval,stars"
    assert len(text[0].splitlines()) == 10
    assert text[1].splitlines()[0] == "n,adj_r2,aic"
    assert text[1].splitlines()[1].startswith("166,")


def test_hac_cov_is_sandwich():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    e = rng.normal(size=30)
    # one lag by hand: meat = sum e_t^2 x x' + 0.5 * sum (e_t e_{t-1})(x_t x_{t-1}' + x_{t-1} x_t')
    meat = sum(e[t] ** 2 * np.outer(X[t], X[t]) for t in range(30))
    meat = meat + 0.5 * sum(e[t] * e[t - 1] * (np.outer(X[t], X[t - 1]) + np.outer(X[t - 1], X[t]))
                            for t in range(1, 30))
    bread = np.linalg.inv(X.T @ X)
    assert np.allclose(hac_cov(X, e, 1), bread @ meat @ bread, atol=1e-14)
