"""Tests for posterior summarization and model-level statistics.

Oracles: analytic effective-sample-size values for iid and AR(1) chains,
closed-form DIC for a conjugate normal-mean model, the exact evidence of
a linear-Gaussian model (where the Laplace approximation is exact), the
exact Gaussian mixed-model marginal likelihood for the inner Laplace
step, and martingale/mean-zero residual properties on simulated data.
"""

import numpy as np
import pandas as pd
import pytest
from scipy import stats
from types import SimpleNamespace

from jointsurv.errors import DataError, InvalidSpecError
from jointsurv.longitudinal import (Covariate, Intercept, Family, LongTable,
                                    RawTime, TermList)
from jointsurv.mcmc import Draws, JointWorkspace, MCMCControl, PriorSpec
from jointsurv.model import ModelSpec, fit_joint_model, workspace_for
from jointsurv.io import SimConfig, simulate_joint
from jointsurv.posterior import (chain_matrix, compare_models, diagnostics_export,
                                 dic, ess, extract_chain, fitted_and_residuals,
                                 hazard_ratio_contrast, laplace_evidence, lpml,
                                 marginal_loglik_laplace, model_fit_stats,
                                 subject_integrated_loglik, summarize,
                                 tail_probability)
from jointsurv.survival import AssociationSpec, SurvTable

FIXED = TermList((Intercept(), RawTime()))
GAUSS = Family("gaussian")


def sim_data(n=80, seed=0, alpha=0.5):
    cfg = SimConfig(
        n_subjects=n, fixed=FIXED, random=FIXED, beta=(0.5, -0.3),
        D=(0.5, 0.1, 0.1, 0.2), sigma2=0.25, log_h0=np.log(0.15),
        gamma=(0.5,), alpha=(alpha,),
        association=AssociationSpec("td_value"),
        covariates={"x": ("binary", 0.5)}, surv_covariates=("x",),
        visit_times=(0.0, 0.5, 1.0, 2.0, 3.0, 4.5), t_max=8.0)
    return simulate_joint(cfg, seed)


@pytest.fixture(scope="module")
def fitted():
    long, surv, _ = sim_data(n=80, seed=7)
    spec = ModelSpec(
        fixed=FIXED, random=FIXED, family=GAUSS,
        surv_terms=TermList((Covariate("x"),)),
        association=AssociationSpec("td_value"), n_basis_h0=8,
        control=MCMCControl(n_adapt=400, n_batch=50, n_burnin=300,
                            n_iter=1000, n_thin=5, seed=11))
    model = fit_joint_model(long, surv, spec)
    ws = workspace_for(model, long, surv)
    return model, ws, long, surv


def fake_draws(chain):
    """Wrap a 1-d chain as the single fixed effect of a Draws object."""
    K = len(chain)
    return Draws(
        beta=np.asarray(chain, float)[:, None],
        gamma=np.empty((K, 0)), alpha=np.zeros((K, 1)),
        gammas_h0=np.zeros((K, 3)), D=np.ones((K, 1, 1)),
        sigma2=np.ones(K), tau_h=None,
        subj_loglik=np.zeros((K, 2)), b_mean=np.zeros((2, 1)),
        b=np.zeros((K, 2, 1)),
        names={"beta": ["theta"], "gamma": [], "alpha": ["Assoct"],
               "gammas_h0": [f"Bs.gammas{j + 1}" for j in range(3)]})


class TestEss:
    def test_iid_chain_near_n(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=2000)
        assert 1600 <= ess(x) <= 2400

    def test_ar1_analytic_oracle(self):
        # ESS/n for AR(1) is (1 - rho) / (1 + rho)
        rng = np.random.default_rng(1)
        rho, n = 0.9, 60000
        e = rng.normal(size=n)
        x = np.empty(n)
        x[0] = e[0] / np.sqrt(1 - rho**2)
        for t in range(1, n):
            x[t] = rho * x[t - 1] + e[t]
        ratio = ess(x) / n
        exact = (1 - rho) / (1 + rho)
        assert abs(ratio - exact) / exact < 0.30

    def test_constant_chain_reports_zero(self):
        assert ess(np.full(500, 3.2)) == 0.0

    def test_short_chain_rejected(self):
        with pytest.raises(InvalidSpecError):
            ess(np.zeros(50))


class TestTailProbability:
    def test_all_positive_is_zero(self):
        assert tail_probability(np.abs(np.random.default_rng(2).normal(
            size=500)) + 0.01) == 0.0

    def test_symmetric_near_one(self):
        x = np.random.default_rng(3).normal(size=20000)
        assert abs(tail_probability(x) - 1.0) < 0.05

    def test_capped_at_one(self):
        assert tail_probability(np.array([1.0, -1.0] * 100)) <= 1.0


class TestSummarize:
    def test_table_contents(self, fitted):
        model, ws, _, _ = fitted
        tab = summarize(model.draws)
        assert isinstance(tab, pd.DataFrame)
        assert "Assoct" in tab.index and "sigma2" in tab.index
        assert np.all(tab["q025"] <= tab["q975"])
        assert np.all((tab["P"] >= 0) & (tab["P"] <= 1))
        # MC standard error definition: SD / sqrt(ESS)
        row = tab.loc["Assoct"]
        x = extract_chain(model.draws, "Assoct")
        assert row["stderr"] == pytest.approx(
            x.std(ddof=1) / np.sqrt(ess(x)), rel=1e-10)

    def test_requires_100_draws(self):
        with pytest.raises(InvalidSpecError):
            summarize(fake_draws(np.random.default_rng(0).normal(size=50)))

    def test_baseline_names_present_when_asked(self, fitted):
        model, _, _, _ = fitted
        tab = summarize(model.draws, include_h0=True)
        assert "Bs.gammas1" in tab.index and "tauBs" in tab.index


class TestDicLpml:
    def test_identity_and_finiteness(self, fitted):
        model, ws, _, _ = fitted
        d, p_d = dic(model.draws, ws)
        mean_dev = float((-2.0 * model.draws.subj_loglik.sum(axis=1)).mean())
        assert d == pytest.approx(mean_dev + p_d, rel=1e-12)
        assert np.isfinite(p_d) and p_d > 0

    def test_degenerate_chain_pd_zero(self, fitted):
        model, ws, _, _ = fitted
        d0 = model.draws
        K = d0.n_kept
        deg = Draws(
            beta=np.tile(d0.beta[:1], (K, 1)),
            gamma=np.tile(d0.gamma[:1], (K, 1)),
            alpha=np.tile(d0.alpha[:1], (K, 1)),
            gammas_h0=np.tile(d0.gammas_h0[:1], (K, 1)),
            D=np.tile(d0.D[:1], (K, 1, 1)),
            sigma2=np.full(K, d0.sigma2[0]),
            tau_h=np.full(K, d0.tau_h[0]) if d0.tau_h is not None else None,
            subj_loglik=np.tile(d0.subj_loglik[:1], (K, 1)),
            b_mean=d0.b[0], b=np.tile(d0.b[:1], (K, 1, 1)),
            names=d0.names, subjects=d0.subjects)
        _, p_d = dic(deg, ws)
        assert p_d == pytest.approx(0.0, abs=1e-8)

    def test_conjugate_normal_dic_oracle(self):
        # y_i ~ N(theta, s2) with known s2, flat-ish prior: DIC has the
        # closed form D(theta_bar) + 2 n V / s2 with V the posterior
        # variance of theta.
        rng = np.random.default_rng(4)
        n, s2, v0 = 40, 1.3, 100.0
        y = rng.normal(0.7, np.sqrt(s2), size=n)
        V = 1.0 / (n / s2 + 1.0 / v0)
        post_mean = V * y.sum() / s2
        theta = rng.normal(post_mean, np.sqrt(V), size=20000)

        def subj_ll(th):
            return stats.norm.logpdf(y[None, :], th[:, None], np.sqrt(s2))

        draws = SimpleNamespace(
            beta=theta[:, None], gamma=np.empty((20000, 0)),
            alpha=np.zeros((20000, 1)), gammas_h0=np.zeros((20000, 1)),
            sigma2=np.full(20000, s2), b=np.zeros((20000, n, 1)),
            b_mean=np.zeros((n, 1)), subj_loglik=subj_ll(theta))
        ws = SimpleNamespace(
            long_loglik=lambda beta, b, sigma2: stats.norm.logpdf(
                y, beta[0], np.sqrt(s2)),
            surv_loglik=lambda beta, b, gamma, alpha, g: np.zeros(n))
        d, p_d = dic(draws, ws)
        dev_bar = float(-2 * stats.norm.logpdf(
            y, post_mean, np.sqrt(s2)).sum())
        exact = dev_bar + 2 * n * V / s2
        assert abs(d - exact) / abs(exact) < 0.02

    def test_lpml_below_plugin_loglik(self, fitted):
        model, ws, _, _ = fitted
        lp, excluded = lpml(model.draws)
        assert excluded == 0
        stats_out = model_fit_stats(model.draws, ws)
        plugin = stats_out.dic - 2 * stats_out.pd  # deviance at means
        assert lp <= -0.5 * plugin + 1e-8
        assert stats_out.lpml == lp

    def test_lpml_flags_zero_cpo(self):
        ll = np.zeros((200, 3))
        ll[:, 1] = -1e6     # one subject with vanishing likelihood everywhere
        draws = SimpleNamespace(subj_loglik=ll)
        lp, excluded = lpml(draws)
        assert np.isfinite(lp)
        # all CPOs finite here; force a true overflow case
        ll2 = ll.copy()
        ll2[:, 2] = -np.inf
        lp2, excl2 = lpml(SimpleNamespace(subj_loglik=ll2))
        assert excl2 == 1 and np.isfinite(lp2)


class TestLaplace:
    def test_linear_gaussian_evidence_exact(self):
        # y ~ N(X theta, s2 I), theta ~ N(0, v I): Laplace is exact.
        rng = np.random.default_rng(5)
        n, p, s2, v = 30, 2, 0.8, 4.0
        X = rng.normal(size=(n, p))
        theta_true = np.array([0.5, -1.0])
        y = X @ theta_true + rng.normal(0, np.sqrt(s2), size=n)

        prec = X.T @ X / s2 + np.eye(p) / v
        cov = np.linalg.inv(prec)
        mean = cov @ X.T @ y / s2

        loglik = stats.norm.logpdf(y, X @ mean, np.sqrt(s2)).sum()
        logprior = stats.multivariate_normal.logpdf(
            mean, np.zeros(p), v * np.eye(p))
        approx = laplace_evidence(loglik, logprior, cov)
        exact = stats.multivariate_normal.logpdf(
            y, np.zeros(n), s2 * np.eye(n) + v * (X @ X.T))
        assert abs(approx - exact) / abs(exact) < 0.05
        assert approx == pytest.approx(exact, abs=1e-8)

    def test_inner_laplace_matches_gaussian_marginal(self, fitted):
        # with alpha = 0 the survival factor is free of b, so the inner
        # integral has the closed form N(X beta, s2 I + Z D Z^T) per
        # subject plus the b-independent survival term.
        model, ws, long, surv = fitted
        pm = model.posterior_means()
        beta, g = pm["beta"], pm["gammas_h0"]
        gamma = pm["gamma"]
        alpha0 = np.zeros_like(pm["alpha"])
        sigma2, D = pm["sigma2"], pm["D"]

        inner = subject_integrated_loglik(ws, beta, gamma, alpha0, g,
                                          sigma2, D)
        surv_part = ws.surv_loglik(beta, np.zeros((ws.n, ws.q)), gamma,
                                   alpha0, g)
        ids = long.frame["id"].to_numpy()
        for k, sid in enumerate(ws.subjects[:10]):
            m = ids == sid
            Xi, Zi, yi = ws.X[m], ws.Z[m], ws.y[m]
            Vi = sigma2 * np.eye(m.sum()) + Zi @ D @ Zi.T
            exact = stats.multivariate_normal.logpdf(yi, Xi @ beta, Vi)
            assert inner[k] == pytest.approx(exact + surv_part[k], abs=5e-3)

    def test_additive_over_disjoint_subjects(self, fitted):
        model, ws, long, surv = fitted
        lf, sf = long.frame, surv.frame
        ids = list(ws.subjects)
        half = set(ids[: len(ids) // 2])

        def subset(keep):
            lt = LongTable(lf[lf["id"].isin(keep)].reset_index(drop=True),
                           subject_col="id", time_col="year",
                           response_col="y")
            st = SurvTable(sf[sf["id"].isin(keep)].reset_index(drop=True))
            return workspace_for(model, lt, st)

        pm = model.posterior_means()
        args = (pm["beta"], pm["gamma"], pm["alpha"], pm["gammas_h0"],
                pm["sigma2"], pm["D"])
        full = subject_integrated_loglik(ws, *args).sum()
        a = subject_integrated_loglik(subset(half), *args).sum()
        b = subject_integrated_loglik(
            subset(set(ids) - half), *args).sum()
        assert full == pytest.approx(a + b, abs=1e-5)

    def test_marginal_loglik_finite_and_data_sensitive(self, fitted):
        model, ws, long, surv = fitted
        val = marginal_loglik_laplace(model.draws, ws)
        assert np.isfinite(val)
        keep = set(list(ws.subjects)[:-1])
        lt = LongTable(long.frame[long.frame["id"].isin(keep)]
                       .reset_index(drop=True), subject_col="id",
                       time_col="year", response_col="y")
        st = SurvTable(surv.frame[surv.frame["id"].isin(keep)]
                       .reset_index(drop=True))
        val2 = marginal_loglik_laplace(model.draws,
                                       workspace_for(model, lt, st))
        assert val2 != val


class TestFittedResiduals:
    def test_subject_equals_marginal_when_b_zero(self, fitted):
        model, ws, _, _ = fitted
        d0 = model.draws
        zb = Draws(beta=d0.beta, gamma=d0.gamma, alpha=d0.alpha,
                   gammas_h0=d0.gammas_h0, D=d0.D, sigma2=d0.sigma2,
                   tau_h=d0.tau_h, subj_loglik=d0.subj_loglik,
                   b_mean=np.zeros_like(d0.b_mean),
                   b=np.zeros_like(d0.b), names=d0.names)
        fm, _ = fitted_and_residuals(zb, ws, "marginal")
        fs, _ = fitted_and_residuals(zb, ws, "subject")
        np.testing.assert_allclose(fm, fs, atol=1e-12)

    def test_marginal_residual_mean_near_zero(self, fitted):
        model, ws, _, _ = fitted
        _, resid = fitted_and_residuals(model.draws, ws, "marginal")
        se = resid.std(ddof=1) / np.sqrt(len(resid))
        assert abs(resid.mean()) < 3 * se + 0.05

    def test_martingale_sum_near_zero(self, fitted):
        model, ws, _, _ = fitted
        H, resid = fitted_and_residuals(model.draws, ws, "martingale")
        np.testing.assert_allclose(resid, ws.delta - H, atol=1e-12)
        assert abs(resid.mean()) < 0.15

    def test_unknown_kind(self, fitted):
        model, ws, _, _ = fitted
        with pytest.raises(InvalidSpecError):
            fitted_and_residuals(model.draws, ws, "pearsonish")


class TestCompareModels:
    def test_single_and_sorted(self, fitted):
        model, ws, _, _ = fitted
        st = model_fit_stats(model.draws, ws)
        fp = model.fingerprint
        tab = compare_models([("m1", fp, st)])
        assert len(tab) == 1 and tab.loc[0, "model"] == "m1"
        st2 = SimpleNamespace(dic=st.dic - 10, pd=st.pd, lpml=st.lpml)
        tab2 = compare_models([("m1", fp, st), ("m2", fp, st2)])
        assert list(tab2["model"]) == ["m2", "m1"]

    def test_identical_refit_identical_rows(self):
        long, surv, _ = sim_data(n=25, seed=9)
        spec = ModelSpec(
            fixed=FIXED, random=FIXED, family=GAUSS,
            surv_terms=TermList((Covariate("x"),)),
            association=AssociationSpec("td_value"), n_basis_h0=8,
            control=MCMCControl(n_adapt=200, n_batch=50, n_burnin=100,
                                n_iter=200, n_thin=2, seed=5))
        rows = []
        for _ in range(2):
            m = fit_joint_model(long, surv, spec)
            w = workspace_for(m, long, surv)
            rows.append(("m", m.fingerprint, model_fit_stats(m.draws, w)))
        tab = compare_models(rows)
        assert tab.loc[0, "DIC"] == tab.loc[1, "DIC"]
        assert tab.loc[0, "LPML"] == tab.loc[1, "LPML"]

    def test_fingerprint_mismatch_rejected(self, fitted):
        model, ws, _, _ = fitted
        st = model_fit_stats(model.draws, ws)
        with pytest.raises(DataError):
            compare_models([("a", {"sha256": "x"}, st),
                            ("b", {"sha256": "y"}, st)])

    def test_empty_rejected(self):
        with pytest.raises(InvalidSpecError):
            compare_models([])


class TestDiagnostics:
    def test_trace_shape(self, fitted):
        model, _, _, _ = fitted
        it, x = diagnostics_export(model.draws, "trace", "Assoct")
        assert len(it) == len(x) == model.draws.n_kept
        assert it[0] == 1

    def test_density_integrates_to_one(self, fitted):
        model, _, _, _ = fitted
        grid, dens = diagnostics_export(model.draws, "density", "Assoct")
        assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-3

    def test_autocorr_lag0_and_iid_band(self):
        n = 2000
        draws = fake_draws(np.random.default_rng(6).normal(size=n))
        lags, acf = diagnostics_export(draws, "autocorr", "theta")
        assert acf[0] == pytest.approx(1.0)
        assert len(lags) == 41
        assert abs(acf[5]) < 2 / np.sqrt(n)

    def test_unknown_parameter_rejected(self, fitted):
        model, _, _, _ = fitted
        with pytest.raises(InvalidSpecError):
            diagnostics_export(model.draws, "trace", "nope")
        with pytest.raises(InvalidSpecError):
            diagnostics_export(model.draws, "rank-plot", "Assoct")


class TestHazardRatio:
    def test_monotone_map_quantiles(self):
        x = np.random.default_rng(8).normal(0.4, 0.2, size=4000)
        out = hazard_ratio_contrast(x, 2.0)
        lo, hi = np.quantile(np.exp(2.0 * x), [0.025, 0.975])
        assert out["lower"] == pytest.approx(lo)
        assert out["upper"] == pytest.approx(hi)
        assert out["hr"] == pytest.approx(np.exp(2.0 * x.mean()))
        assert out["lower"] <= out["hr"] <= out["upper"]
