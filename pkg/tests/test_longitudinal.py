import numpy as np
import pandas as pd
import pytest
from scipy.special import gammaln

from jointsurv.errors import DataError, InvalidSpecError
from jointsurv.longitudinal import (
    Covariate,
    Family,
    Interaction,
    Intercept,
    LongTable,
    NsTime,
    RawTime,
    TermList,
    build_design,
    fit_glmm_init,
    fit_lmm_init,
    linear_predictor,
    log_density_long,
    spline_from_times,
)
from jointsurv.basis import natural_cubic_basis


def make_table(frame, **kw):
    kw.setdefault("subject_col", "id")
    kw.setdefault("time_col", "year")
    kw.setdefault("response_col", "y")
    return LongTable(frame, **kw)


def simple_frame():
    return pd.DataFrame({
        "id": [1, 1, 2, 2, 2],
        "year": [0.0, 1.0, 0.0, 0.5, 2.0],
        "y": [0.1, 0.4, -0.2, 0.0, 0.3],
        "drug": ["placebo", "placebo", "D-penicil", "D-penicil", "D-penicil"],
        "age": [58.0, 58.0, 52.0, 52.0, 52.0],
    })


class TestDesign:
    def test_intercept_only(self):
        data = make_table(simple_frame())
        X, names = build_design(data, TermList((Intercept(),)))
        assert names == ["(Intercept)"]
        np.testing.assert_array_equal(X, np.ones((5, 1)))

    def test_ns_time_composes_with_basis(self):
        data = make_table(simple_frame())
        sp = spline_from_times(data.times(), 2)
        X, names = build_design(data, TermList((Intercept(), NsTime(2))), {2: sp})
        row0 = natural_cubic_basis(0.0, 2, sp.boundary, sp.interior)[0]
        np.testing.assert_allclose(X[0], [1.0, row0[0], row0[1]])
        assert names == ["(Intercept)", "ns(time, 2)1", "ns(time, 2)2"]

    def test_factor_expansion_and_interaction(self):
        data = make_table(simple_frame())
        X, names = build_design(
            data, TermList((Covariate("drug"), Covariate("age"),
                            Interaction(Covariate("drug"), Covariate("age")))))
        # first-appearance order: placebo is the reference level
        assert names == ["drugD-penicil", "age", "drugD-penicil:age"]
        ind = np.array([0, 0, 1, 1, 1], dtype=float)
        np.testing.assert_array_equal(X[:, 0], ind)
        np.testing.assert_array_equal(X[:, 2], ind * X[:, 1])

    def test_missing_column(self):
        data = make_table(simple_frame())
        with pytest.raises(DataError):
            build_design(data, TermList((Covariate("nope"),)))

    def test_deterministic(self):
        data = make_table(simple_frame())
        terms = TermList((Intercept(), RawTime(), Covariate("age")))
        X1, _ = build_design(data, terms)
        X2, _ = build_design(data, terms)
        np.testing.assert_array_equal(X1, X2)


class TestLinearPredictor:
    def test_zero(self):
        assert linear_predictor([1, 2], [1], np.zeros(2), np.zeros(1)) == 0.0

    def test_arithmetic(self):
        assert linear_predictor([1, 2], [1], [0.5, 1.0], [-0.5]) == pytest.approx(2.0)

    def test_permutation_invariance(self):
        X = np.array([1.0, 2.0, 3.0])
        beta = np.array([0.3, -0.2, 0.7])
        perm = [2, 0, 1]
        assert linear_predictor(X, [], beta, []) == pytest.approx(
            linear_predictor(X[perm], [], beta[perm], []))


class TestFamilies:
    def test_gaussian_at_mean(self):
        val = log_density_long(1.3, 1.3, 1.0, Family("gaussian"))
        assert val == pytest.approx(-0.9189385332046727, abs=1e-9)

    def test_logit_half(self):
        val = log_density_long(1.0, 0.0, None, Family("binomial_logit"))
        assert val == pytest.approx(np.log(0.5), abs=1e-12)

    def test_student_t_direct_formula(self):
        # independent direct evaluation of the t density at the mode
        nu = 4
        expected = gammaln(2.5) - gammaln(2.0) - 0.5 * np.log(4 * np.pi)
        got = log_density_long(0.7, 0.7, 1.0, Family("student_t", df=4))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_censored_gaussian_matches_gaussian_when_uncensored(self):
        y, eta, s = 0.4, 0.1, 0.7
        fam = Family("censored_gaussian", censor_column="cens")
        got = log_density_long(y, eta, s, fam, censor=0)
        want = log_density_long(y, eta, s, Family("gaussian"))
        assert got == pytest.approx(want, abs=0)

    @pytest.mark.parametrize("fam,scale", [
        (Family("gaussian"), 0.8),
        (Family("student_t", df=5), 0.6),
    ])
    def test_continuous_density_integrates_to_one(self, fam, scale):
        grid = np.linspace(-30, 30, 20001)
        dens = np.exp(log_density_long(grid, 0.3, scale, fam))
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-4)

    def test_binomial_mass_sums_to_one(self):
        for fam in (Family("binomial_logit"), Family("binomial_probit")):
            mass = sum(np.exp(log_density_long(y, 0.7, None, fam)) for y in (0.0, 1.0))
            assert mass == pytest.approx(1.0, abs=1e-12)

    def test_binomial_rejects_nonbinary(self):
        with pytest.raises(DataError):
            log_density_long(2.0, 0.0, None, Family("binomial_logit"))

    def test_student_t_df_floor(self):
        with pytest.raises(InvalidSpecError):
            Family("student_t", df=2)


def simulate_lmm(n_subj, n_per, beta, D, sigma, rng):
    rows = []
    for i in range(n_subj):
        t = np.sort(rng.uniform(0, 2, n_per))
        b = rng.multivariate_normal(np.zeros(D.shape[0]), D) if D.any() else np.zeros(D.shape[0])
        for tt in t:
            eta = beta[0] + beta[1] * tt + b[0]
            rows.append((i, tt, eta + rng.normal(0, sigma)))
    return pd.DataFrame(rows, columns=["id", "year", "y"])


class TestLmmInit:
    FIXED = TermList((Intercept(), RawTime()))
    RANDOM = TermList((Intercept(),))

    def test_zero_re_variance_matches_ols(self):
        rng = np.random.default_rng(5)
        frame = simulate_lmm(80, 5, np.array([1.0, -0.5]), np.zeros((1, 1)), 1.0, rng)
        data = make_table(frame)
        fit = fit_lmm_init(data, self.FIXED, self.RANDOM)
        X, _ = build_design(data, self.FIXED)
        y = data.responses()
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        resid = y - X @ ols
        se = np.sqrt(np.diag(np.linalg.inv(X.T @ X)) * (resid @ resid) / (len(y) - 2))
        assert np.all(np.abs(fit.beta - ols) < 3 * se)

    def test_single_subject_shrinkage(self):
        # one extra subject with a large offset; its EB mean shrinks by n/(n + s2/d)
        rng = np.random.default_rng(1)
        frame = simulate_lmm(60, 6, np.array([0.0, 0.0]), np.array([[1.0]]), 1.0, rng)
        data = make_table(frame)
        fit = fit_lmm_init(data, TermList((Intercept(),)), self.RANDOM)
        sid = data.subjects[0]
        grp = frame[frame["id"] == sid]
        n = len(grp)
        shrink = n / (n + fit.sigma2 / fit.D[0, 0])
        expected = shrink * (grp["y"].mean() - fit.beta[0])
        assert fit.b[sid][0] == pytest.approx(expected, abs=1e-6)

    def test_perfect_fit(self):
        t = np.tile(np.array([0.0, 0.5, 1.0, 1.5]), 10)
        ids = np.repeat(np.arange(10), 4)
        beta0 = np.array([0.7, -0.3])
        y = beta0[0] + beta0[1] * t
        data = make_table(pd.DataFrame({"id": ids, "year": t, "y": y}))
        fit = fit_lmm_init(data, self.FIXED, self.RANDOM)
        np.testing.assert_allclose(fit.beta, beta0, atol=1e-8)
        assert fit.sigma2 < 1e-8

    def test_loglik_nondecreasing(self):
        rng = np.random.default_rng(11)
        frame = simulate_lmm(40, 5, np.array([0.5, 1.0]), np.array([[0.8]]), 0.7, rng)
        fit = fit_lmm_init(make_table(frame), self.FIXED, self.RANDOM)
        diffs = np.diff(fit.loglik_trace)
        assert np.all(diffs > -1e-6)

    def test_too_few_subjects(self):
        frame = pd.DataFrame({"id": [1, 1, 1], "year": [0.0, 1.0, 2.0], "y": [0.0, 1.0, 2.0]})
        with pytest.raises(DataError):
            fit_lmm_init(make_table(frame), self.FIXED,
                         TermList((Intercept(), RawTime())))


def simulate_binary(n_subj, n_per, beta, d_var, rng, link="logit"):
    rows = []
    for i in range(n_subj):
        b = rng.normal(0, np.sqrt(d_var))
        for t in np.sort(rng.uniform(0, 2, n_per)):
            x = rng.normal()
            eta = beta[0] + beta[1] * x + b
            p = 1 / (1 + np.exp(-eta)) if link == "logit" else None
            from scipy.stats import norm as _n
            if link == "probit":
                p = _n.cdf(eta)
            rows.append((i, t, float(rng.uniform() < p), x))
    return pd.DataFrame(rows, columns=["id", "year", "y", "x"])


class TestGlmmInit:
    FIXED = TermList((Intercept(), Covariate("x")))
    RANDOM = TermList((Intercept(),))

    def test_all_zero_responses_penalized(self):
        frame = pd.DataFrame({
            "id": np.repeat(np.arange(25), 4),
            "year": np.tile(np.arange(4, dtype=float), 25),
            "y": np.zeros(100),
        })
        fit = fit_glmm_init(make_table(frame), TermList((Intercept(),)),
                            self.RANDOM, Family("binomial_logit"))
        assert fit.beta[0] <= -3.0
        assert np.isfinite(fit.beta[0])

    def test_null_covariate_near_zero(self):
        rng = np.random.default_rng(3)
        frame = simulate_binary(150, 8, np.array([0.2, 0.0]), 0.5, rng)
        fit = fit_glmm_init(make_table(frame), self.FIXED, self.RANDOM,
                            Family("binomial_logit"))
        se = np.sqrt(fit.beta_cov[1, 1])
        assert abs(fit.beta[1]) < 3 * se + 0.05

    def test_logit_probit_scale_ratio(self):
        rng = np.random.default_rng(7)
        frame = simulate_binary(400, 6, np.array([0.0, 0.8]), 0.0, rng)
        logit = fit_glmm_init(make_table(frame), self.FIXED, self.RANDOM,
                              Family("binomial_logit"))
        probit = fit_glmm_init(make_table(frame), self.FIXED, self.RANDOM,
                               Family("binomial_probit"))
        ratio = logit.beta[1] / probit.beta[1]
        assert 1.5 < ratio < 1.9
