"""Generalized linear mixed longitudinal submodel.

Holds the closed term grammar used to build fixed/random design matrices,
the response families and their log-densities, and lightweight initial
fits (EM for the linear mixed model, penalized IRLS for binary outcomes)
that seed the MCMC with starting values and proposal covariances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import gammaln, log_ndtr
from scipy.stats import norm

from .basis import natural_cubic_basis, natural_cubic_deriv, natural_cubic_integral
from .errors import DataError, InvalidSpecError

__all__ = [
    "Intercept", "Covariate", "NsTime", "DnsTime", "InsTime", "RawTime",
    "Interaction", "TermList", "TimeSpline", "spline_from_times",
    "Family", "LongTable", "build_design", "design_at_times",
    "linear_predictor", "log_density_long", "fit_lmm_init", "fit_glmm_init",
    "LmmFit",
]


# ---------------------------------------------------------------------------
# term grammar

@dataclass(frozen=True)
class Intercept:
    pass


@dataclass(frozen=True)
class Covariate:
    name: str


@dataclass(frozen=True)
class NsTime:
    df: int


@dataclass(frozen=True)
class DnsTime:
    df: int


@dataclass(frozen=True)
class InsTime:
    df: int


@dataclass(frozen=True)
class RawTime:
    pass


@dataclass(frozen=True)
class Interaction:
    left: object
    right: object


@dataclass(frozen=True)
class TermList:
    """Ordered closed grammar of design terms."""

    terms: tuple

    def __post_init__(self):
        n_icpt = sum(isinstance(t, Intercept) for t in self.terms)
        if n_icpt > 1:
            raise InvalidSpecError("at most one intercept term is allowed")

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)


@dataclass(frozen=True)
class TimeSpline:
    """Knot configuration shared by ns/dns/ins terms of a given df."""

    df: int
    boundary: tuple[float, float]
    interior: tuple[float, ...] = ()


def spline_from_times(times, df: int) -> TimeSpline:
    """Boundary at the observed range, interior at equally spaced quantiles."""
    times = np.asarray(times, dtype=float)
    lo, hi = float(times.min()), float(times.max())
    if df > 1:
        probs = np.arange(1, df) / df
        interior = tuple(float(x) for x in np.quantile(times, probs))
    else:
        interior = ()
    return TimeSpline(df=df, boundary=(lo, hi), interior=interior)


# ---------------------------------------------------------------------------
# data tables

class LongTable:
    """Long-format repeated measurements, one row per observation."""

    def __init__(self, frame: pd.DataFrame, subject_col="id", time_col="time",
                 response_col="y", factor_levels: dict[str, list] | None = None):
        for col in (subject_col, time_col, response_col):
            if col not in frame.columns:
                raise DataError(f"missing required column {col!r}")
        self.frame = frame.reset_index(drop=True)
        self.subject_col = subject_col
        self.time_col = time_col
        self.response_col = response_col
        t = self.frame[time_col].to_numpy(dtype=float)
        if np.any(t < 0):
            raise DataError("measurement times must be nonnegative")
        for sid, grp in self.frame.groupby(subject_col, sort=False):
            tt = grp[time_col].to_numpy(dtype=float)
            if np.any(np.diff(tt) < 0):
                raise DataError(f"times not sorted for subject {sid!r}")
        self.subjects = list(dict.fromkeys(self.frame[subject_col]))
        self.factor_levels = factor_levels or _collect_factor_levels(self.frame)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_obs(self) -> int:
        return len(self.frame)

    def subject_indices(self) -> dict:
        out: dict = {}
        ids = self.frame[self.subject_col].to_numpy()
        for i, sid in enumerate(ids):
            out.setdefault(sid, []).append(i)
        return {k: np.asarray(v) for k, v in out.items()}

    def times(self) -> np.ndarray:
        return self.frame[self.time_col].to_numpy(dtype=float)

    def responses(self) -> np.ndarray:
        return self.frame[self.response_col].to_numpy(dtype=float)


def _collect_factor_levels(frame: pd.DataFrame) -> dict[str, list]:
    levels = {}
    for col in frame.columns:
        if frame[col].dtype == object or isinstance(frame[col].dtype, pd.CategoricalDtype):
            levels[col] = list(dict.fromkeys(frame[col].astype(str)))
    return levels


# ---------------------------------------------------------------------------
# design construction

def _term_columns(term, frame, times, splines, factor_levels):
    """Expand one grammar term to (matrix, names)."""
    n = len(times)
    if isinstance(term, Intercept):
        return np.ones((n, 1)), ["(Intercept)"]
    if isinstance(term, RawTime):
        return times[:, None].copy(), ["time"]
    if isinstance(term, (NsTime, DnsTime, InsTime)):
        if term.df not in splines:
            raise InvalidSpecError(f"no spline configuration for df={term.df}")
        sp = splines[term.df]
        if isinstance(term, NsTime):
            mat, tag = natural_cubic_basis(times, sp.df, sp.boundary, sp.interior), "ns"
        elif isinstance(term, DnsTime):
            mat, tag = natural_cubic_deriv(times, sp.df, sp.boundary, sp.interior), "dns"
        else:
            mat, tag = natural_cubic_integral(times, sp.df, sp.boundary, sp.interior), "ins"
        names = [f"{tag}(time, {sp.df}){j + 1}" for j in range(sp.df)]
        return mat, names
    if isinstance(term, Covariate):
        if term.name not in frame.columns:
            raise DataError(f"missing column {term.name!r}")
        col = frame[term.name]
        if term.name in factor_levels:
            levels = factor_levels[term.name]
            vals = col.astype(str).to_numpy()
            unknown = set(vals) - set(levels)
            if unknown:
                raise DataError(f"unknown level(s) {sorted(unknown)} for factor {term.name!r}")
            mat = np.column_stack([(vals == lev).astype(float) for lev in levels[1:]])
            names = [f"{term.name}{lev}" for lev in levels[1:]]
            return mat, names
        arr = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
        if np.isnan(arr).any():
            raise DataError(f"non-numeric values in numeric covariate {term.name!r}")
        return arr[:, None], [term.name]
    if isinstance(term, Interaction):
        lm, ln = _term_columns(term.left, frame, times, splines, factor_levels)
        rm, rn = _term_columns(term.right, frame, times, splines, factor_levels)
        cols, names = [], []
        for i, a in enumerate(ln):
            for j, b in enumerate(rn):
                cols.append(lm[:, i] * rm[:, j])
                names.append(f"{a}:{b}")
        return np.column_stack(cols), names
    raise InvalidSpecError(f"unknown term {term!r}")


def design_at_times(frame: pd.DataFrame, times, terms: TermList,
                    splines: dict[int, TimeSpline] | None = None,
                    factor_levels: dict | None = None):
    """Design matrix for explicit evaluation times (rows align with frame)."""
    times = np.asarray(times, dtype=float)
    splines = splines or {}
    factor_levels = factor_levels if factor_levels is not None else _collect_factor_levels(frame)
    mats, names = [], []
    for term in terms:
        m, nm = _term_columns(term, frame, times, splines, factor_levels)
        mats.append(m)
        names.extend(nm)
    if not mats:
        return np.zeros((len(times), 0)), []
    return np.column_stack(mats), names


def build_design(data: LongTable, terms: TermList,
                 splines: dict[int, TimeSpline] | None = None):
    """One row per longitudinal record, column order follows the terms."""
    return design_at_times(data.frame, data.times(), terms, splines, data.factor_levels)


def linear_predictor(X, Z, beta, b) -> float:
    """eta = x'beta + z'b for one row (or batched rows)."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    return X @ np.asarray(beta, dtype=float) + Z @ np.asarray(b, dtype=float)


# ---------------------------------------------------------------------------
# response families

_FAMILY_KINDS = {"gaussian", "student_t", "binomial_logit", "binomial_probit",
                 "censored_gaussian"}


@dataclass(frozen=True)
class Family:
    kind: str
    df: int | None = None
    censor_column: str | None = None

    def __post_init__(self):
        if self.kind not in _FAMILY_KINDS:
            raise InvalidSpecError(f"unknown family {self.kind!r}")
        if self.kind == "student_t" and (self.df is None or self.df < 3):
            raise InvalidSpecError("student_t family needs df >= 3")
        if self.kind == "censored_gaussian" and not self.censor_column:
            raise InvalidSpecError("censored_gaussian needs a censor column name")

    @property
    def scale_needed(self) -> bool:
        return self.kind in ("gaussian", "student_t", "censored_gaussian")


def log_density_long(y, eta, scale, family: Family, censor=None):
    """Log density / mass of the response given the linear predictor."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if family.scale_needed and not np.all(np.asarray(scale) > 0):
        raise InvalidSpecError("scale must be positive for this family")
    if family.kind == "gaussian":
        return norm.logpdf(y, loc=eta, scale=scale)
    if family.kind == "student_t":
        nu = float(family.df)
        z = (y - eta) / scale
        return (gammaln((nu + 1) / 2) - gammaln(nu / 2)
                - 0.5 * np.log(nu * np.pi) - np.log(scale)
                - (nu + 1) / 2 * np.log1p(z * z / nu))
    if family.kind in ("binomial_logit", "binomial_probit"):
        if np.any((y != 0) & (y != 1)):
            raise DataError("binomial families need a 0/1 response")
        if family.kind == "binomial_logit":
            # y*eta - log(1+exp(eta)), stable for both signs
            return y * eta - np.logaddexp(0.0, eta)
        return y * log_ndtr(eta) + (1 - y) * log_ndtr(-eta)
    if family.kind == "censored_gaussian":
        if censor is None:
            raise DataError("censored_gaussian needs the censoring indicator")
        ind = np.asarray(censor, dtype=float)
        if np.any((ind != 0) & (ind != 1)):
            raise DataError("censoring indicator must be 0/1")
        log_f = norm.logpdf(y, loc=eta, scale=scale)
        log_F = norm.logcdf(y, loc=eta, scale=scale)
        return (1 - ind) * log_f + ind * log_F
    raise InvalidSpecError(family.kind)


# ---------------------------------------------------------------------------
# initial fits

@dataclass
class LmmFit:
    beta: np.ndarray
    D: np.ndarray
    sigma2: float
    b: dict
    beta_cov: np.ndarray
    b_cov: dict
    loglik_trace: list = field(default_factory=list)
    fixed_names: list = field(default_factory=list)
    random_names: list = field(default_factory=list)
    # curvature of the conditional (given b) objective; the right proposal
    # scale for a Metropolis block that updates beta with b held fixed
    beta_cov_cond: np.ndarray | None = None


def _group_blocks(data: LongTable, X, Z, y):
    idx = data.subject_indices()
    return [(sid, X[ix], Z[ix], y[ix]) for sid, ix in
            ((s, idx[s]) for s in data.subjects)]


def _stack_by_size(blocks):
    """Group subject blocks by their number of rows so the EM E-step can
    run as batched linear algebra instead of a Python loop."""
    by_size: dict = {}
    for sid, Xi, Zi, yi in blocks:
        by_size.setdefault(len(yi), []).append((sid, Xi, Zi, yi))
    out = []
    for ni, items in sorted(by_size.items()):
        sids = [s for s, *_ in items]
        Xs = np.stack([Xi for _, Xi, _, _ in items])
        Zs = np.stack([Zi for _, _, Zi, _ in items])
        ys = np.stack([yi for _, _, _, yi in items])
        out.append((sids, Xs, Zs, ys))
    return out


def fit_lmm_init(data: LongTable, fixed: TermList, random: TermList,
                 splines: dict[int, TimeSpline] | None = None,
                 max_iter: int = 500, tol: float = 1e-8) -> LmmFit:
    """Maximum likelihood for the Gaussian linear mixed model by EM.

    Used only for starting values and proposal covariances; the MCMC
    corrects any residual error.  The marginal log-likelihood trace is
    kept so its monotonicity can be asserted.
    """
    X, fixed_names = build_design(data, fixed, splines)
    Z, random_names = build_design(data, random, splines)
    y = data.responses()
    p, q = X.shape[1], Z.shape[1]
    if data.n_subjects < q:
        raise DataError("fewer subjects than random-effect dimension")
    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < p:
        raise DataError("singular fixed-effects design")

    blocks = _group_blocks(data, X, Z, y)
    stacks = _stack_by_size(blocks)
    beta = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ beta
    sigma2 = max(float(resid @ resid) / max(len(y) - p, 1), 1e-10)
    D = np.eye(q) * max(sigma2, 1e-6)
    n_subj = len(blocks)

    loglik_trace = []
    for _ in range(max_iter):
        D_inv = np.linalg.inv(D)
        ll = 0.0
        sum_xtr = np.zeros(p)
        D_new = np.zeros((q, q))
        rss = 0.0
        estep = []
        # E-step, batched over subjects with equal numbers of rows
        for sids, Xs, Zs, ys in stacks:
            ni = ys.shape[1]
            prec = np.einsum("mni,mnj->mij", Zs, Zs) / sigma2 + D_inv
            cov = np.linalg.inv(prec)
            r = ys - Xs @ beta
            bi = np.einsum("mij,mj->mi", cov,
                           np.einsum("mni,mn->mi", Zs, r)) / sigma2
            Vi = np.einsum("mni,ij,mkj->mnk", Zs, D, Zs) + sigma2 * np.eye(ni)
            sign, logdet = np.linalg.slogdet(Vi)
            sol = np.linalg.solve(Vi, r[..., None])[..., 0]
            ll += float(-0.5 * np.sum(ni * np.log(2 * np.pi) + logdet
                                      + np.einsum("mn,mn->m", r, sol)))
            estep.append((bi, cov))
        loglik_trace.append(ll)
        # M-step
        for (sids, Xs, Zs, ys), (bi, cov) in zip(stacks, estep):
            zb = np.einsum("mnq,mq->mn", Zs, bi)
            sum_xtr += np.einsum("mni,mn->i", Xs, ys - zb)
        beta_new = np.linalg.solve(XtX, sum_xtr)
        for (sids, Xs, Zs, ys), (bi, cov) in zip(stacks, estep):
            zb = np.einsum("mnq,mq->mn", Zs, bi)
            D_new += np.einsum("mi,mj->ij", bi, bi) + cov.sum(axis=0)
            ei = ys - Xs @ beta_new - zb
            rss += float(np.sum(ei * ei))
            rss += float(np.einsum("mni,mij,mnj->", Zs, cov, Zs))
        beta, D, sigma2 = beta_new, D_new / n_subj, max(rss / len(y), 1e-12)
        if len(loglik_trace) > 1:
            prev = loglik_trace[-2]
            if abs(loglik_trace[-1] - prev) < tol * (abs(prev) + 1.0):
                break

    # final E-step at the converged parameters, plus beta covariance
    D_inv = np.linalg.inv(D + 1e-12 * np.eye(q))
    info = np.zeros((p, p))
    b_hat, b_cov = {}, {}
    for sids, Xs, Zs, ys in stacks:
        ni = ys.shape[1]
        prec = np.einsum("mni,mnj->mij", Zs, Zs) / sigma2 + D_inv
        cov = np.linalg.inv(prec)
        r = ys - Xs @ beta
        bi = np.einsum("mij,mj->mi", cov,
                       np.einsum("mni,mn->mi", Zs, r)) / sigma2
        Vi = np.einsum("mni,ij,mkj->mnk", Zs, D, Zs) + sigma2 * np.eye(ni)
        info += np.einsum("mni,mnj->ij", Xs, np.linalg.solve(Vi, Xs))
        for k, sid in enumerate(sids):
            b_hat[sid], b_cov[sid] = bi[k], cov[k]
    beta_cov = np.linalg.inv(info)
    return LmmFit(beta=beta, D=D, sigma2=sigma2, b=b_hat, beta_cov=beta_cov,
                  b_cov=b_cov, loglik_trace=loglik_trace,
                  fixed_names=fixed_names, random_names=random_names,
                  beta_cov_cond=np.linalg.inv(XtX) * max(sigma2, 1e-10))


def fit_glmm_init(data: LongTable, fixed: TermList, random: TermList,
                  family: Family, splines: dict[int, TimeSpline] | None = None,
                  max_iter: int = 100, tol: float = 1e-6,
                  ridge_var: float = 16.0) -> LmmFit:
    """Laplace-approximate fit for a binary mixed model via penalized IRLS.

    Accuracy is deliberately loose (initialization only).  Complete or
    quasi-complete separation is caught by a diverging linear predictor
    and handled with a normal(0, ridge_var) penalty on the fixed effects.
    """
    if family.kind not in ("binomial_logit", "binomial_probit"):
        raise InvalidSpecError("fit_glmm_init supports binomial families only")
    X, fixed_names = build_design(data, fixed, splines)
    Z, random_names = build_design(data, random, splines)
    y = data.responses()
    if np.any((y != 0) & (y != 1)):
        raise DataError("binary response required")
    p, q = X.shape[1], Z.shape[1]
    blocks = _group_blocks(data, X, Z, y)

    def inv_link(eta):
        if family.kind == "binomial_logit":
            return 1.0 / (1.0 + np.exp(-eta))
        return norm.cdf(eta)

    penalty = 0.0
    for attempt in range(2):
        beta = np.zeros(p)
        b_hat = {sid: np.zeros(q) for sid, *_ in blocks}
        D = np.eye(q)
        separated = False
        for _ in range(max_iter):
            D_inv = np.linalg.inv(D)
            # joint penalized IRLS update of beta and all b_i
            A = np.zeros((p, p))
            r = np.zeros(p)
            cross, rhs_b, covs = {}, {}, {}
            for sid, Xi, Zi, yi in blocks:
                eta = Xi @ beta + Zi @ b_hat[sid]
                mu = np.clip(inv_link(eta), 1e-10, 1 - 1e-10)
                w = mu * (1 - mu)
                z = eta + (yi - mu) / w  # working response (logit scaling reused for probit)
                Wi = w[:, None]
                A += Xi.T @ (Wi * Xi)
                prec_b = Zi.T @ (Wi * Zi) + D_inv
                cov_b = np.linalg.inv(prec_b)
                covs[sid] = cov_b
                cross[sid] = (Xi.T @ (Wi * Zi), cov_b, Zi, w, z, Xi)
                rhs_b[sid] = Zi.T @ (w * z)
                r += Xi.T @ (w * z)
            # profile the b_i out of the beta update
            for sid, (XtWZ, cov_b, Zi, w, z, Xi) in cross.items():
                A -= XtWZ @ cov_b @ XtWZ.T
                r -= XtWZ @ cov_b @ rhs_b[sid]
            beta_new = np.linalg.solve(A + penalty * np.eye(p), r)
            max_change = np.max(np.abs(beta_new - beta))
            beta = beta_new
            for sid, (XtWZ, cov_b, Zi, w, z, Xi) in cross.items():
                b_hat[sid] = cov_b @ (Zi.T @ (w * (z - Xi @ beta)))
            D_new = sum(np.outer(b_hat[sid], b_hat[sid]) + covs[sid]
                        for sid in covs) / len(blocks)
            D = D_new + 1e-8 * np.eye(q)
            if np.max(np.abs(beta)) > 25.0:
                separated = True
                break
            if max_change < tol:
                break
        if separated and penalty == 0.0:
            penalty = 1.0 / ridge_var
            continue
        break

    # curvature of the penalized objective at the optimum, for proposals
    A = np.zeros((p, p)) + penalty * np.eye(p)
    b_cov = {}
    for sid, Xi, Zi, yi in blocks:
        eta = Xi @ beta + Zi @ b_hat[sid]
        mu = np.clip(inv_link(eta), 1e-10, 1 - 1e-10)
        w = mu * (1 - mu)
        A += Xi.T @ (w[:, None] * Xi)
        b_cov[sid] = np.linalg.inv(Zi.T @ (w[:, None] * Zi) + np.linalg.inv(D))
    beta_cov = np.linalg.inv(A)
    return LmmFit(beta=beta, D=D, sigma2=1.0, b=b_hat, beta_cov=beta_cov,
                  b_cov=b_cov, loglik_trace=[],
                  fixed_names=fixed_names, random_names=random_names,
                  beta_cov_cond=beta_cov)
