"""Dynamic individual predictions from a fitted joint model.

Given a new subject's longitudinal history up to time t (and survival up
to t), compute conditional survival probabilities over a horizon grid,
longitudinal forecasts, the subject-level marginal likelihood, and
Bayesian-model-averaged combinations across candidate models.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize
from scipy.special import logsumexp

from .basis import gauss_kronrod
from .errors import (DataError, InvalidIntervalError, InvalidSpecError,
                     NumericError)
from .longitudinal import design_at_times, log_density_long
from .mcmc import _normal_logprior
from .model import FittedJointModel
from .posterior import LOG2PI, chain_matrix, laplace_evidence
from .survival import (BaselineHazard, SubjectState, SurvParams,
                       _hazard_on_nodes, difference_penalty)

__all__ = [
    "NewSubjectData", "PredictionResult", "posterior_random_effects",
    "survfit_dynamic", "predict_longitudinal", "subject_marginal_loglik",
    "bma_weights", "bma_combine", "REPosterior",
]


@dataclass
class NewSubjectData:
    """A new subject's longitudinal history and baseline covariates.

    The subject is known event-free up to last_known_alive, which
    defaults to the last measurement time.
    """

    rows: pd.DataFrame
    time_col: str = "time"
    response_col: str = "y"
    baseline: dict | None = None
    last_known_alive: float | None = None

    def __post_init__(self):
        if len(self.rows) and self.time_col not in self.rows.columns:
            raise DataError(f"missing time column {self.time_col!r}")
        if self.baseline is None:
            if not len(self.rows):
                raise DataError("need baseline covariates when the "
                                "longitudinal history is empty")
            drop = {self.time_col, self.response_col}
            self.baseline = {k: self.rows.iloc[0][k]
                             for k in self.rows.columns if k not in drop}
        if self.last_known_alive is None:
            if not len(self.rows):
                raise DataError("need last_known_alive when the "
                                "longitudinal history is empty")
            self.last_known_alive = float(self.rows[self.time_col].max())
        if len(self.rows):
            tmax = float(self.rows[self.time_col].max())
            if tmax > self.last_known_alive + 1e-10:
                raise DataError("measurement times exceed last_known_alive")

    def times(self) -> np.ndarray:
        if not len(self.rows):
            return np.empty(0)
        return self.rows[self.time_col].to_numpy(dtype=float)

    def responses(self) -> np.ndarray:
        if not len(self.rows):
            return np.empty(0)
        return self.rows[self.response_col].to_numpy(dtype=float)


@dataclass
class PredictionResult:
    times: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    M: int
    kind: str                      # "survival" or "longitudinal"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"times": self.times, "Mean": self.mean,
                             "Median": self.median, "Lower": self.lower,
                             "Upper": self.upper})


# ---------------------------------------------------------------------------
# subject context: designs, likelihood terms, cumulative hazards

class _SubjectContext:
    """Precomputed designs and likelihood pieces for one new subject."""

    def __init__(self, model: FittedJointModel, subj: NewSubjectData):
        self.model = model
        spec = model.spec
        self.spec = spec
        self.t = float(subj.last_known_alive)
        self.obs_times = subj.times()
        self.y = subj.responses()
        self.n_obs = len(self.y)
        fl = model.long_factor_levels

        probe = self._frame_at(np.array([0.0]), subj.baseline)
        _, fixed_names = design_at_times(probe, np.array([0.0]), spec.fixed,
                                         model.splines, fl)
        _, random_names = design_at_times(probe, np.array([0.0]), spec.random,
                                          model.splines, fl)
        rif = ()
        if spec.association.kind == "shared_betas_re":
            try:
                rif = tuple(fixed_names.index(nm) for nm in random_names)
            except ValueError:
                raise InvalidSpecError(
                    "shared fixed+random association requires every random "
                    "term to appear among the fixed terms")
        self.q = len(random_names)

        if self.n_obs:
            frame = subj.rows.reset_index(drop=True)
            self.X, _ = design_at_times(frame, self.obs_times, spec.fixed,
                                        model.splines, fl)
            self.Z, _ = design_at_times(frame, self.obs_times, spec.random,
                                        model.splines, fl)
            self.censor = None
            col = spec.family.censor_column
            if spec.family.kind == "censored_gaussian":
                if col not in frame.columns:
                    raise DataError(f"missing censoring column {col!r}")
                self.censor = frame[col].to_numpy(dtype=float)
        else:
            self.X = np.empty((0, len(fixed_names)))
            self.Z = np.empty((0, self.q))
            self.censor = None

        wf = self._frame_at(np.array([self.t]), subj.baseline)
        W, _ = design_at_times(wf, np.array([self.t]), spec.surv_terms,
                               model.splines, model.surv_factor_levels)
        self.w = W[0]
        self.baseline_row = dict(subj.baseline)
        self.random_in_fixed = rif
        self.rule = gauss_kronrod(15)

    @staticmethod
    def _frame_at(times, baseline):
        data = {k: [v] * len(times) for k, v in baseline.items()}
        return pd.DataFrame(data, index=range(len(times)))

    def state(self, b) -> SubjectState:
        return SubjectState(
            w=self.w, b=np.asarray(b, float), row=self.baseline_row,
            fixed=self.spec.fixed, random=self.spec.random,
            splines=self.model.splines,
            factor_levels=self.model.long_factor_levels,
            random_in_fixed=self.random_in_fixed)

    def params(self, theta) -> SurvParams:
        bh = BaselineHazard(theta["gammas_h0"], self.model.knots,
                            penalized=self.spec.penalized,
                            penalty_order=self.spec.penalty_order)
        return SurvParams(beta=theta["beta"], gamma=theta["gamma"],
                          alpha=theta["alpha"], baseline=bh,
                          association=self.spec.association)

    def cum_hazards(self, us, b, theta) -> np.ndarray:
        """Cumulative hazard at each horizon, one hazard evaluation over
        all quadrature nodes of all horizons."""
        us = np.asarray(us, dtype=float)
        st, params = self.state(b), self.params(theta)
        nodes = 0.5 * us[:, None] * (self.rule.nodes[None, :] + 1.0)
        logh = _hazard_on_nodes(nodes.reshape(-1), st, params)
        logh = logh.reshape(len(us), -1)
        with np.errstate(over="raise"):
            try:
                vals = np.exp(logh)
            except FloatingPointError:
                raise NumericError("hazard overflow while predicting")
        return 0.5 * us * (vals @ self.rule.weights)

    def long_loglik(self, b, theta) -> float:
        if not self.n_obs:
            return 0.0
        eta = self.X @ theta["beta"] + self.Z @ np.asarray(b, float)
        scale = (np.sqrt(theta["sigma2"])
                 if self.spec.family.scale_needed else None)
        return float(np.sum(log_density_long(self.y, eta, scale,
                                             self.spec.family, self.censor)))

    def b_logpost(self, b, theta) -> float:
        """log p(Y_j | b) + log S_j(t | b) + log p(b | D), up to a
        b-free constant."""
        b = np.asarray(b, float)
        D = theta["D"]
        sign, logdet = np.linalg.slogdet(D)
        if sign <= 0:
            return -np.inf
        quad = b @ np.linalg.solve(D, b)
        lp = -0.5 * (self.q * LOG2PI + logdet + quad)
        lp += self.long_loglik(b, theta)
        lp -= float(self.cum_hazards(np.array([self.t]), b, theta)[0])
        return lp


def _theta_from_means(model: FittedJointModel) -> dict:
    return model.posterior_means()


def _theta_from_draw(draws, k: int) -> dict:
    return {
        "beta": draws.beta[k], "gamma": draws.gamma[k],
        "alpha": draws.alpha[k], "gammas_h0": draws.gammas_h0[k],
        "sigma2": float(draws.sigma2[k]) if draws.sigma2 is not None else None,
        "D": draws.D[k],
    }


# ---------------------------------------------------------------------------
# posterior of the random effects of a new subject

@dataclass
class REPosterior:
    mode: np.ndarray
    cov: np.ndarray
    converged: bool
    ctx: _SubjectContext = field(repr=False)
    theta: dict = field(repr=False)

    def sample(self, rng, n_steps: int = 5, theta: dict | None = None,
               start: np.ndarray | None = None) -> np.ndarray:
        """A few Metropolis steps around the mode targeting the subject's
        random-effect posterior under theta."""
        theta = self.theta if theta is None else theta
        q = len(self.mode)
        chol = np.linalg.cholesky(self.cov + 1e-10 * np.eye(q))
        scale = 2.4 / np.sqrt(q)
        b = self.mode.copy() if start is None else np.array(start, float)
        lp = self.ctx.b_logpost(b, theta)
        for _ in range(n_steps):
            prop = b + scale * (chol @ rng.standard_normal(q))
            lp_prop = self.ctx.b_logpost(prop, theta)
            if np.log(rng.uniform()) < lp_prop - lp:
                b, lp = prop, lp_prop
        return b


def _numeric_hessian(f, x, h=1e-4):
    q = len(x)
    eye = np.eye(q)
    f0 = f(x)
    H = np.empty((q, q))
    fp = np.array([f(x + h * eye[j]) for j in range(q)])
    fm = np.array([f(x - h * eye[j]) for j in range(q)])
    for j in range(q):
        H[j, j] = (fp[j] - 2 * f0 + fm[j]) / h**2
    for j in range(q):
        for k in range(j + 1, q):
            fpp = f(x + h * eye[j] + h * eye[k])
            H[j, k] = H[k, j] = (fpp - fp[j] - fp[k] + f0) / h**2
    return H


def posterior_random_effects(model: FittedJointModel, subj: NewSubjectData,
                             theta: dict | None = None) -> REPosterior:
    """Mode and curvature of log p(b | Y_j(t), T_j > t, theta), with a
    Metropolis sampler around the mode."""
    theta = theta or _theta_from_means(model)
    ctx = _SubjectContext(model, subj)

    def neg(b):
        val = ctx.b_logpost(b, theta)
        return np.inf if not np.isfinite(val) else -val

    res = optimize.minimize(neg, np.zeros(ctx.q), method="BFGS",
                            options={"gtol": 1e-6, "maxiter": 200})
    mode = res.x
    converged = bool(res.success) and np.all(np.isfinite(mode))
    if not converged and np.all(np.isfinite(mode)):
        # BFGS with finite-difference gradients often stops on precision
        # loss near the optimum; polish with a derivative-free pass and
        # accept the point if it beats the prior-mean start.
        polish = optimize.minimize(neg, mode, method="Nelder-Mead",
                                   options={"xatol": 1e-6, "fatol": 1e-8,
                                            "maxiter": 2000})
        if np.all(np.isfinite(polish.x)) and polish.fun <= res.fun:
            mode = polish.x
        converged = (np.all(np.isfinite(mode))
                     and neg(mode) <= neg(np.zeros(ctx.q)))
    if not converged:
        warnings.warn("random-effect mode search did not converge; "
                      "falling back to b = 0", RuntimeWarning)
        mode = np.zeros(ctx.q)
    H = _numeric_hessian(lambda b: ctx.b_logpost(b, theta), mode)
    neg_H = -(H + H.T) / 2 + 1e-8 * np.eye(ctx.q)
    try:
        cov = np.linalg.inv(neg_H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = theta["D"].copy()
    return REPosterior(mode=mode, cov=cov, converged=converged,
                       ctx=ctx, theta=theta)


# ---------------------------------------------------------------------------
# dynamic survival prediction

def _horizon_grid(model: FittedJointModel, t: float, times) -> np.ndarray:
    if times is None:
        if model.default_times is None:
            raise InvalidSpecError("no prediction grid available; pass times")
        grid = model.default_times[model.default_times > t]
        return np.concatenate([[t], grid])
    grid = np.asarray(times, dtype=float)
    if np.any(grid < t - 1e-12):
        raise InvalidIntervalError(
            f"prediction horizons must be >= the conditioning time {t}")
    if grid.size == 0 or grid[0] > t:
        grid = np.concatenate([[t], grid])
    return grid


def survfit_dynamic(model: FittedJointModel, subj: NewSubjectData,
                    times=None, M: int = 200, mode: str = "mc",
                    seed: int | None = None,
                    n_mh_steps: int = 5) -> PredictionResult:
    """Conditional survival pi_j(u | t) = Pr(T > u | T > t, Y_j(t)) on a
    horizon grid, by Monte Carlo over the posterior or by the first-order
    plug-in estimator."""
    if mode not in ("mc", "first_order"):
        raise InvalidSpecError(f"unknown prediction mode {mode!r}")
    rep = posterior_random_effects(model, subj)
    ctx = rep.ctx
    t = ctx.t
    grid = _horizon_grid(model, t, times)

    def cond_surv(b, theta):
        H = ctx.cum_hazards(grid, b, theta)
        Ht = H[0] if grid[0] == t else float(
            ctx.cum_hazards(np.array([t]), b, theta)[0])
        return np.exp(-(H - Ht))

    if mode == "first_order":
        pi = cond_surv(rep.mode, rep.theta)
        return PredictionResult(times=grid, mean=pi, median=pi.copy(),
                                lower=pi.copy(), upper=pi.copy(), M=0,
                                kind="survival")

    rng = np.random.default_rng(seed)
    draws = model.draws
    K = draws.n_kept
    out = np.empty((M, len(grid)))
    for m in range(M):
        theta = _theta_from_draw(draws, int(rng.integers(K)))
        b = rep.sample(rng, n_steps=n_mh_steps, theta=theta)
        out[m] = cond_surv(b, theta)
    lo, med, hi = np.quantile(out, [0.025, 0.5, 0.975], axis=0)
    return PredictionResult(times=grid, mean=out.mean(axis=0), median=med,
                            lower=lo, upper=hi, M=M, kind="survival")


# ---------------------------------------------------------------------------
# longitudinal forecasts

def predict_longitudinal(model: FittedJointModel, subj: NewSubjectData,
                         times, type: str = "subject",
                         interval: str = "confidence", M: int = 200,
                         seed: int | None = None) -> PredictionResult:
    """Predicted longitudinal response at the requested times: marginal
    (fixed effects only) or subject-specific (conditioning on the
    subject's history through the random effects)."""
    if type not in ("marginal", "subject"):
        raise InvalidSpecError(f"unknown prediction type {type!r}")
    if interval not in ("confidence", "prediction"):
        raise InvalidSpecError(f"unknown interval kind {interval!r}")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise InvalidIntervalError("prediction times must be >= 0")
    ctx = _SubjectContext(model, subj)
    frame = ctx._frame_at(times, ctx.baseline_row)
    Xp, _ = design_at_times(frame, times, model.spec.fixed, model.splines,
                            model.long_factor_levels)
    Zp, _ = design_at_times(frame, times, model.spec.random, model.splines,
                            model.long_factor_levels)

    rng = np.random.default_rng(seed)
    draws = model.draws
    K = draws.n_kept
    rep = posterior_random_effects(model, subj) if type == "subject" else None
    add_noise = (interval == "prediction"
                 and model.spec.family.kind in ("gaussian", "student_t",
                                                "censored_gaussian"))
    out = np.empty((M, len(times)))
    for m in range(M):
        k = int(rng.integers(K))
        theta = _theta_from_draw(draws, k)
        mu = Xp @ theta["beta"]
        if type == "subject":
            b = rep.sample(rng, n_steps=5, theta=theta)
            mu = mu + Zp @ b
        if add_noise:
            mu = mu + rng.standard_normal(len(times)) * np.sqrt(theta["sigma2"])
        out[m] = mu
    lo, med, hi = np.quantile(out, [0.025, 0.5, 0.975], axis=0)
    return PredictionResult(times=times, mean=out.mean(axis=0), median=med,
                            lower=lo, upper=hi, M=M, kind="longitudinal")


# ---------------------------------------------------------------------------
# subject-level marginal likelihood and Bayesian model averaging

def _h0_logprior(model: FittedJointModel, g, tau_h, priors) -> float:
    if model.spec.penalized:
        Q = len(g)
        K = difference_penalty(Q, model.spec.penalty_order)
        rank = Q - model.spec.penalty_order
        return float(0.5 * rank * (np.log(tau_h) - LOG2PI)
                     - 0.5 * tau_h * (g @ K @ g))
    return _normal_logprior(g, priors.v0)


def subject_integrated_loglik_new(model: FittedJointModel,
                                  subj: NewSubjectData,
                                  theta: dict) -> float:
    """Inner Laplace step for a new subject: log of the integral over b of
    p(Y_j(t) | b) S_j(t | b) p(b | D)."""
    rep = posterior_random_effects(model, subj, theta=theta)
    ctx = rep.ctx
    lp_mode = ctx.b_logpost(rep.mode, theta)
    H = _numeric_hessian(lambda b: ctx.b_logpost(b, theta), rep.mode)
    neg_H = -(H + H.T) / 2
    sign, logdet = np.linalg.slogdet(neg_H)
    if sign <= 0:
        raise NumericError("subject evidence curvature not positive definite")
    return float(lp_mode + 0.5 * ctx.q * LOG2PI - 0.5 * logdet)


def subject_marginal_loglik(model: FittedJointModel,
                            subj: NewSubjectData) -> float:
    """log p(D_j(t) | model): inner Laplace over the subject's random
    effects, outer Laplace over the parameters at the posterior mean with
    covariance estimated from the draws."""
    priors = model.spec.priors
    theta = _theta_from_means(model)
    inner = subject_integrated_loglik_new(model, subj, theta)
    pm = model.posterior_means()
    logprior = (_normal_logprior(pm["beta"], priors.v0)
                + _normal_logprior(pm["gamma"], priors.v0)
                + _normal_logprior(pm["alpha"], priors.v0)
                + _h0_logprior(model, pm["gammas_h0"],
                               pm["tau_h"] if pm["tau_h"] is not None else 1.0,
                               priors))
    mat, _ = chain_matrix(model.draws, include_h0=True)
    cov = np.cov(mat.T) + 1e-10 * np.eye(mat.shape[1])
    return laplace_evidence(inner, logprior, cov)


def bma_weights(subject_logevid, data_logevid, prior_weights=None):
    """Posterior model weights: softmax of log p(D_j(t)|M_k) +
    log p(D_n|M_k) + log p(M_k)."""
    s = np.asarray(subject_logevid, dtype=float)
    d = np.asarray(data_logevid, dtype=float)
    if s.shape != d.shape or s.ndim != 1 or s.size < 1:
        raise InvalidSpecError("evidence vectors must be equal-length 1-d")
    if prior_weights is None:
        prior = np.full(s.size, 1.0 / s.size)
    else:
        prior = np.asarray(prior_weights, dtype=float)
        if prior.shape != s.shape or np.any(prior <= 0):
            raise InvalidSpecError("prior weights must be positive, one per model")
        prior = prior / prior.sum()
    logw = s + d + np.log(prior)
    if not np.all(np.isfinite(logw)):
        raise NumericError("nonfinite log evidence in model weights")
    w = np.exp(logw - logsumexp(logw))
    return w / w.sum()


def bma_combine(results, weights) -> PredictionResult:
    """Pointwise weighted average of prediction summary columns."""
    if not results:
        raise InvalidSpecError("nothing to combine")
    w = np.asarray(weights, dtype=float)
    if len(results) != w.size:
        raise InvalidSpecError("one weight per result required")
    if abs(w.sum() - 1.0) > 1e-8 or np.any(w < 0):
        raise InvalidSpecError("weights must be a probability vector")
    ref = results[0]
    for r in results[1:]:
        if r.kind != ref.kind or len(r.times) != len(ref.times) \
                or not np.allclose(r.times, ref.times):
            raise InvalidSpecError("results must share kind and time grid")

    def avg(attr):
        return sum(wk * getattr(r, attr) for wk, r in zip(w, results))

    return PredictionResult(times=ref.times.copy(), mean=avg("mean"),
                            median=avg("median"), lower=avg("lower"),
                            upper=avg("upper"),
                            M=max(r.M for r in results), kind=ref.kind)
