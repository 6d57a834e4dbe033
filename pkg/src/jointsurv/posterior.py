"""Posterior summarization and model-level statistics.

Summary tables with time-series standard errors, effective sample size
via an autoregressive spectral estimate, DIC/pD on the conditional
deviance, LPML through per-subject conditional predictive ordinates,
a two-step Laplace approximation of the marginal likelihood, fitted
values and residuals, model comparison, and plottable diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import solve_toeplitz
from scipy.special import logsumexp
from scipy.stats import gaussian_kde

from .errors import DataError, InvalidSpecError, NumericError
from .mcmc import Draws, JointWorkspace, PriorSpec, _normal_logprior

__all__ = [
    "summarize", "ess", "dic", "lpml", "fitted_and_residuals",
    "compare_models", "diagnostics_export", "marginal_loglik_laplace",
    "laplace_evidence", "hazard_ratio_contrast", "chain_matrix",
    "posterior_b_modes", "ModelFitStats",
]


@dataclass
class ModelFitStats:
    lpml: float
    dic: float
    pd: float
    excluded_cpo: int = 0


# ---------------------------------------------------------------------------
# chain utilities

def chain_matrix(draws: Draws, include_h0: bool = True):
    """Stack kept draws into one (kept, d) matrix with column names."""
    cols, names = [], []

    def add(arr, labels):
        cols.append(np.atleast_2d(arr.T).T if arr.ndim == 1 else arr)
        names.extend(labels)

    add(draws.beta, draws.names["beta"])
    if draws.gamma.shape[1]:
        add(draws.gamma, draws.names["gamma"])
    add(draws.alpha, draws.names["alpha"])
    if draws.sigma2 is not None:
        add(draws.sigma2[:, None], ["sigma2"])
    q = draws.D.shape[1]
    tril = [(i, j) for i in range(q) for j in range(i + 1)]
    add(np.column_stack([draws.D[:, i, j] for i, j in tril]),
        [f"D[{i + 1},{j + 1}]" for i, j in tril])
    if include_h0:
        add(draws.gammas_h0, draws.names["gammas_h0"])
        if draws.tau_h is not None:
            add(draws.tau_h[:, None], ["tauBs"])
    return np.column_stack(cols), names


def extract_chain(draws: Draws, name: str) -> np.ndarray:
    mat, names = chain_matrix(draws)
    if name not in names:
        raise InvalidSpecError(f"unknown parameter {name!r}")
    return mat[:, names.index(name)]


# ---------------------------------------------------------------------------
# effective sample size and summaries

def ess(chain, max_order: int = 20) -> float:
    """n * var / (spectral density at zero), the spectral density from an
    AR model whose order is picked by AIC (at most max_order)."""
    x = np.asarray(chain, dtype=float)
    n = x.shape[0]
    if n < 100:
        raise InvalidSpecError("need at least 100 draws for an ESS estimate")
    v = x.var(ddof=1)
    if v == 0.0 or not np.isfinite(v):
        return 0.0
    z = x - x.mean()
    max_order = min(max_order, n // 10)
    acov = np.array([z[: n - k] @ z[k:] / n for k in range(max_order + 1)])
    best = (n * np.log(acov[0]), 0.0, acov[0])  # AR(0)
    for k in range(1, max_order + 1):
        try:
            phi = solve_toeplitz(acov[:k], acov[1:k + 1])
        except np.linalg.LinAlgError:
            break
        s2 = acov[0] - phi @ acov[1:k + 1]
        if s2 <= 0:
            continue
        aic = n * np.log(s2) + 2 * k
        if aic < best[0]:
            best = (aic, float(np.sum(phi)), s2)
    _, phi_sum, s2 = best
    if abs(1.0 - phi_sum) < 1e-10:
        return 0.0
    spec0 = s2 / (1.0 - phi_sum) ** 2
    return float(np.clip(n * acov[0] / spec0, 0.0, 2.0 * n))


def tail_probability(chain) -> float:
    """P = 2 min{Pr(theta > 0), Pr(theta < 0)} estimated from the draws."""
    x = np.asarray(chain, dtype=float)
    p_pos = float(np.mean(x > 0))
    p_neg = float(np.mean(x < 0))
    return min(1.0, 2.0 * min(p_pos, p_neg))


def summarize(draws: Draws, include_h0: bool = False) -> pd.DataFrame:
    """Posterior mean, MC standard error, SD, 95% interval, and the
    two-sided tail probability for every reported parameter."""
    mat, names = chain_matrix(draws, include_h0=include_h0)
    if mat.shape[0] < 100:
        raise InvalidSpecError("need at least 100 kept draws to summarize")
    rows = []
    for j, nm in enumerate(names):
        x = mat[:, j]
        sd = float(x.std(ddof=1))
        n_eff = ess(x)
        stderr = sd / np.sqrt(n_eff) if n_eff > 0 else np.nan
        lo, hi = np.quantile(x, [0.025, 0.975])
        rows.append({"parameter": nm, "mean": float(x.mean()),
                     "stderr": stderr, "sd": sd, "q025": float(lo),
                     "q975": float(hi), "P": tail_probability(x),
                     "ess": n_eff})
    out = pd.DataFrame(rows).set_index("parameter")
    bad = out[out["q025"] > out["q975"]]
    if len(bad):
        raise NumericError("credible-interval ordering violated")
    return out


def hazard_ratio_contrast(chain, c: float) -> dict:
    """exp(c * theta) summarized by the transformed draws' quantiles."""
    x = np.asarray(chain, dtype=float) * c
    hr = np.exp(x)
    lo, hi = np.quantile(hr, [0.025, 0.975])
    return {"hr": float(np.exp(x.mean())), "mean_hr": float(hr.mean()),
            "lower": float(lo), "upper": float(hi)}


# ---------------------------------------------------------------------------
# deviance-based statistics

def _loglik_at_means(draws: Draws, ws: JointWorkspace):
    beta = draws.beta.mean(axis=0)
    gamma = draws.gamma.mean(axis=0)
    alpha = draws.alpha.mean(axis=0)
    g = draws.gammas_h0.mean(axis=0)
    sigma2 = float(draws.sigma2.mean()) if draws.sigma2 is not None else 1.0
    b = draws.b.mean(axis=0) if draws.b is not None else draws.b_mean
    return (ws.long_loglik(beta, b, sigma2)
            + ws.surv_loglik(beta, b, gamma, alpha, g))


def dic(draws: Draws, ws: JointWorkspace):
    """Conditional-deviance DIC: the random effects are treated as
    parameters, which is the variant consistent with the large effective
    parameter counts this model family reports."""
    dev_draws = -2.0 * draws.subj_loglik.sum(axis=1)
    mean_dev = float(dev_draws.mean())
    dev_at_means = float(-2.0 * np.sum(_loglik_at_means(draws, ws)))
    p_d = mean_dev - dev_at_means
    return mean_dev + p_d, p_d


def lpml(draws: Draws):
    """Sum of log conditional predictive ordinates; the CPO of subject i
    is the harmonic mean of its per-draw conditional likelihoods."""
    ll = draws.subj_loglik          # (K, n)
    K = ll.shape[0]
    log_cpo = np.log(K) - logsumexp(-ll, axis=0)
    ok = np.isfinite(log_cpo)
    excluded = int(np.sum(~ok))
    return float(np.sum(log_cpo[ok])), excluded


def model_fit_stats(draws: Draws, ws: JointWorkspace) -> ModelFitStats:
    d, p_d = dic(draws, ws)
    lp, excl = lpml(draws)
    return ModelFitStats(lpml=lp, dic=d, pd=p_d, excluded_cpo=excl)


# ---------------------------------------------------------------------------
# two-step Laplace marginal likelihood

def _subject_loglik_fn(ws: JointWorkspace, beta, gamma, alpha, g, sigma2):
    def f(b_mat):
        return (ws.long_loglik(beta, b_mat, sigma2)
                + ws.surv_loglik(beta, b_mat, gamma, alpha, g))
    return f


def posterior_b_modes(ws: JointWorkspace, beta, gamma, alpha, g, sigma2, D,
                      b0=None, max_iter: int = 50, tol: float = 1e-7):
    """Per-subject conditional modes of the random effects, found by a
    damped Newton iteration vectorized across subjects with numerical
    derivatives.  Returns (modes, per-subject Hessians of -log density)."""
    n, q = ws.n, ws.q
    f_data = _subject_loglik_fn(ws, beta, gamma, alpha, g, sigma2)
    D_inv = np.linalg.inv(D)

    def obj(B):
        return f_data(B) - 0.5 * np.einsum("nq,nq->n", B, B @ D_inv)

    B = np.zeros((n, q)) if b0 is None else np.array(b0, float)
    h = 1e-4
    eye = np.eye(q)
    for _ in range(max_iter):
        f0 = obj(B)
        grad = np.empty((n, q))
        hess = np.empty((n, q, q))
        fp = np.empty((q, n))
        fm = np.empty((q, n))
        for j in range(q):
            fp[j] = obj(B + h * eye[j])
            fm[j] = obj(B - h * eye[j])
            grad[:, j] = (fp[j] - fm[j]) / (2 * h)
            hess[:, j, j] = (fp[j] - 2 * f0 + fm[j]) / h**2
        for j in range(q):
            for k in range(j + 1, q):
                fpp = obj(B + h * eye[j] + h * eye[k])
                cross = (fpp - fp[j] - fp[k] + f0) / h**2
                hess[:, j, k] = cross
                hess[:, k, j] = cross
        neg_hess = -hess
        # keep the step well defined when the curvature is locally flat
        neg_hess += 1e-6 * np.eye(q)
        try:
            step = np.linalg.solve(neg_hess, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = grad
        new = B + step
        f_new = obj(new)
        shrink = 1.0
        for _ in range(20):
            worse = f_new < f0 - 1e-12
            if not np.any(worse):
                break
            shrink *= 0.5
            new[worse] = B[worse] + shrink * step[worse]
            f_new = obj(new)
        moved = np.max(np.abs(new - B))
        B = new
        if moved < tol:
            break
    # final curvature at the mode
    f0 = obj(B)
    hess = np.empty((n, q, q))
    fp = np.empty((q, n))
    fm = np.empty((q, n))
    for j in range(q):
        fp[j] = obj(B + h * eye[j])
        fm[j] = obj(B - h * eye[j])
        hess[:, j, j] = (fp[j] - 2 * f0 + fm[j]) / h**2
    for j in range(q):
        for k in range(j + 1, q):
            fpp = obj(B + h * eye[j] + h * eye[k])
            cross = (fpp - fp[j] - fp[k] + f0) / h**2
            hess[:, j, k] = cross
            hess[:, k, j] = cross
    return B, -hess


LOG2PI = np.log(2.0 * np.pi)


def subject_integrated_loglik(ws: JointWorkspace, beta, gamma, alpha, g,
                              sigma2, D) -> np.ndarray:
    """Inner Laplace step: log integral over each subject's random effects
    of the conditional likelihood times the normal random-effects density."""
    B, neg_hess = posterior_b_modes(ws, beta, gamma, alpha, g, sigma2, D)
    f_data = _subject_loglik_fn(ws, beta, gamma, alpha, g, sigma2)
    q = ws.q
    sign, logdet_D = np.linalg.slogdet(D)
    quad = np.einsum("nq,nq->n", B, np.linalg.solve(D, B.T).T)
    log_joint = (f_data(B) - 0.5 * (q * LOG2PI + logdet_D + quad))
    sign_h, logdet_h = np.linalg.slogdet(neg_hess)
    logdet_h = np.where(sign_h > 0, logdet_h, np.inf)
    return log_joint + 0.5 * q * LOG2PI - 0.5 * logdet_h


def laplace_evidence(loglik_at_mode, logprior_at_mode, theta_cov) -> float:
    """Outer Laplace step around the posterior mean with the posterior
    covariance estimated from the draws."""
    cov = np.atleast_2d(theta_cov)
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericError("posterior covariance is not positive definite")
    return float(loglik_at_mode + logprior_at_mode
                 + 0.5 * d * LOG2PI + 0.5 * logdet)


def marginal_loglik_laplace(draws: Draws, ws: JointWorkspace,
                            priors: PriorSpec | None = None) -> float:
    """log p(data | model) by the two-step Laplace approximation: the
    random effects are integrated per subject at their conditional modes,
    then the parameters at the posterior mean."""
    priors = priors or PriorSpec()
    beta = draws.beta.mean(axis=0)
    gamma = draws.gamma.mean(axis=0)
    alpha = draws.alpha.mean(axis=0)
    g = draws.gammas_h0.mean(axis=0)
    sigma2 = float(draws.sigma2.mean()) if draws.sigma2 is not None else 1.0
    D = draws.D.mean(axis=0)
    tau = float(draws.tau_h.mean()) if draws.tau_h is not None else 1.0

    inner = subject_integrated_loglik(ws, beta, gamma, alpha, g, sigma2, D)
    if not np.all(np.isfinite(inner)):
        raise NumericError("nonfinite subject-level integrated likelihood")
    loglik = float(np.sum(inner))

    logprior = (_normal_logprior(beta, priors.v0)
                + _normal_logprior(gamma, priors.v0)
                + _normal_logprior(alpha, priors.v0)
                + ws.h0_logprior(g, tau, priors))
    mat, _ = chain_matrix(draws, include_h0=True)
    cov = np.cov(mat.T) + 1e-10 * np.eye(mat.shape[1])
    return laplace_evidence(loglik, logprior, cov)


# ---------------------------------------------------------------------------
# fitted values, residuals, comparison, diagnostics

def fitted_and_residuals(draws: Draws, ws: JointWorkspace, kind: str):
    """kind: marginal (X beta), subject (X beta + Z b), or martingale."""
    beta = draws.beta.mean(axis=0)
    b = draws.b.mean(axis=0) if draws.b is not None else draws.b_mean
    if kind == "marginal":
        fitted = ws.X @ beta
        return fitted, ws.y - fitted
    if kind == "subject":
        fitted = ws.long_eta(beta, b)
        return fitted, ws.y - fitted
    if kind == "martingale":
        gamma = draws.gamma.mean(axis=0)
        alpha = draws.alpha.mean(axis=0)
        g = draws.gammas_h0.mean(axis=0)
        H = ws.cum_hazard(beta, b, gamma, alpha, g)
        resid = ws.delta - H
        return H, resid
    raise InvalidSpecError(f"unknown residual kind {kind!r}")


def compare_models(entries) -> pd.DataFrame:
    """entries: list of (label, fingerprint, ModelFitStats).  All entries
    must describe fits of the same data."""
    if not entries:
        raise InvalidSpecError("nothing to compare")
    ref = entries[0][1].get("sha256")
    for label, fp, _ in entries:
        if fp.get("sha256") != ref:
            raise DataError(f"model {label!r} was fitted on different data")
    rows = [{"model": label, "DIC": st.dic, "pD": st.pd, "LPML": st.lpml}
            for label, _, st in entries]
    return pd.DataFrame(rows).sort_values("DIC").reset_index(drop=True)


def diagnostics_export(draws: Draws, which: str, name: str):
    x = extract_chain(draws, name)
    if which == "trace":
        return np.arange(1, len(x) + 1), x
    if which == "density":
        kde = gaussian_kde(x, bw_method="silverman")
        lo, hi = x.min(), x.max()
        # extend past the sample range so the kernel tails integrate to 1
        pad = 4.0 * kde.factor * x.std(ddof=1) + 0.05 * (hi - lo or 1.0)
        grid = np.linspace(lo - pad, hi + pad, 512)
        return grid, kde(grid)
    if which == "autocorr":
        z = x - x.mean()
        denom = float(z @ z)
        lags = np.arange(41)
        acf = np.array([z[: len(z) - k] @ z[k:] / denom for k in lags])
        return lags, acf
    raise InvalidSpecError(f"unknown diagnostic {which!r}")
