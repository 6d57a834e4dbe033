"""Posterior sampling engine.

Block random-walk Metropolis with adaptive scale tuning for beta, the
per-subject random effects, (gamma, alpha), and the baseline-hazard
coefficients; slice sampling for the error variance; Gibbs updates for
the random-effects covariance (Wishart) and the roughness penalty
precision (Gamma).  All subject-level likelihood evaluations are
vectorized over subjects with design matrices precomputed once at the
event times and at the quadrature nodes of every subject.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import wishart

from .basis import bspline_design, gauss_kronrod, percentile_knots
from .errors import DataError, InvalidSpecError, NumericError
from .longitudinal import (Family, LongTable, TermList, TimeSpline,
                           build_design, design_at_times, log_density_long)
from .survival import (AssociationSpec, Identity, InteractWith, Power,
                       SurvTable, difference_penalty)

__all__ = [
    "PriorSpec", "MCMCControl", "Draws", "JointWorkspace", "InitValues",
    "rw_metropolis_block", "slice_update_precision", "gibbs_wishart_D",
    "gibbs_tau_h", "adapt_proposals", "run_mcmc", "fit_h0_init",
]

LOG2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# configuration types

@dataclass(frozen=True)
class PriorSpec:
    """Weakly informative defaults; every constant is overridable."""

    v0: float = 100.0          # normal variance for beta, gamma, alpha
    nu0: int | None = None     # Wishart df for D inverse; default q_b + 1
    r0_scale: float = 100.0    # Wishart scale matrix R0 = r0_scale * I
    a0: float = 0.01           # inverse-gamma shape for sigma^2
    b0: float = 0.01           # inverse-gamma rate for sigma^2
    tau_shape: float = 1.0     # gamma hyperprior for the penalty precision
    tau_rate: float = 0.005

    def __post_init__(self):
        if self.v0 <= 0 or self.a0 <= 0 or self.b0 <= 0:
            raise InvalidSpecError("prior variances and IG constants must be positive")
        if self.tau_shape <= 0 or self.tau_rate <= 0 or self.r0_scale <= 0:
            raise InvalidSpecError("penalty and Wishart hyperparameters must be positive")

    def wishart_df(self, q: int) -> int:
        df = self.nu0 if self.nu0 is not None else q + 1
        if df < q:
            raise InvalidSpecError("Wishart df must be >= random-effect dimension")
        return df


@dataclass(frozen=True)
class MCMCControl:
    n_adapt: int = 3000
    n_batch: int = 100
    n_burnin: int = 3000
    n_iter: int = 20000
    n_thin: int | None = None   # default: thin so that about 2000 draws are kept
    seed: int = 1
    store_b: bool = True

    def __post_init__(self):
        for name in ("n_adapt", "n_batch", "n_burnin", "n_iter"):
            if getattr(self, name) <= 0:
                raise InvalidSpecError(f"{name} must be positive")
        if self.n_thin is not None and self.n_thin <= 0:
            raise InvalidSpecError("n_thin must be positive")

    @property
    def thin(self) -> int:
        if self.n_thin is not None:
            return self.n_thin
        return max(1, self.n_iter // 2000)

    @property
    def n_keep(self) -> int:
        return self.n_iter // self.thin


@dataclass
class Draws:
    """Thinned posterior sample plus bookkeeping for diagnostics."""

    beta: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    gammas_h0: np.ndarray
    D: np.ndarray
    sigma2: np.ndarray | None
    tau_h: np.ndarray | None
    subj_loglik: np.ndarray          # (kept, n) conditional log-likelihoods
    b_mean: np.ndarray               # (n, q) running posterior mean
    b: np.ndarray | None             # (kept, n, q) when stored
    accept: dict = field(default_factory=dict)     # block -> batch rates
    scales: dict = field(default_factory=dict)
    names: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    subjects: list = field(default_factory=list)

    @property
    def n_kept(self) -> int:
        return self.beta.shape[0]


# ---------------------------------------------------------------------------
# elementary sampler operations

def _chol_psd(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    try:
        return np.linalg.cholesky(S + 1e-10 * np.eye(S.shape[0]))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(S)
        vals = np.clip(vals, 1e-10, None)
        return vecs @ np.diag(np.sqrt(vals))


def rw_metropolis_block(current, logpost, proposal_cov, scale, rng,
                        lp_current=None):
    """One multivariate random-walk Metropolis step."""
    current = np.asarray(current, dtype=float)
    L = _chol_psd(np.atleast_2d(proposal_cov))
    prop = current + scale * (L @ rng.standard_normal(current.shape[0]))
    if lp_current is None:
        lp_current = logpost(current)
    lp_prop = logpost(prop)
    if np.log(rng.uniform()) < lp_prop - lp_current:
        return prop, True
    return current, False


def _slice_step(x0, logf, rng, w=1.0, max_steps=100, lower=0.0):
    """Univariate slice sampling with stepping out and shrinkage."""
    f0 = logf(x0)
    if not np.isfinite(f0):
        raise NumericError("slice sampler started at a zero-density point")
    y = f0 - rng.exponential()
    lo = x0 - w * rng.uniform()
    hi = lo + w
    steps = max_steps
    while lo > lower and logf(lo) > y and steps > 0:
        lo -= w
        steps -= 1
    lo = max(lo, lower)
    steps = max_steps
    while logf(hi) > y and steps > 0:
        hi += w
        steps -= 1
    for _ in range(1000):
        x1 = lo + (hi - lo) * rng.uniform()
        if logf(x1) > y:
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
    return x0


def slice_update_precision(sigma2, rss, n_obs, prior: PriorSpec, rng):
    """Slice update of the Gaussian error precision.

    The full conditional of the precision is Gamma with shape
    a0 + n/2 and rate b0 + rss/2; sampling it by slice keeps the code
    path identical to the non-conjugate families.
    """
    shape = prior.a0 + 0.5 * n_obs
    rate = prior.b0 + 0.5 * rss

    def logf(phi):
        if phi <= 0:
            return -np.inf
        return (shape - 1.0) * np.log(phi) - rate * phi

    phi0 = 1.0 / float(sigma2)
    phi1 = _slice_step(phi0, logf, rng, w=max(phi0, 1e-3))
    return 1.0 / phi1


def gibbs_wishart_D(b_all, prior: PriorSpec, rng, q: int | None = None):
    """Draw the random-effects precision from its Wishart conditional.

    Parameterization: D_inv ~ Wishart(df, S) with density proportional to
    |D_inv|^{(df-q-1)/2} exp(-tr(S^{-1} D_inv)/2), so E[D_inv] = df * S.
    Prior: Wishart(nu0, R0); posterior: Wishart(nu0 + n,
    (R0^{-1} + sum_i b_i b_i')^{-1}).
    """
    b_all = np.asarray(b_all, dtype=float)
    if b_all.ndim == 1:
        b_all = b_all.reshape(1, -1) if b_all.size else b_all.reshape(0, q or 0)
    n, qb = b_all.shape
    if qb == 0:
        raise InvalidSpecError("random-effect dimension is required when n=0")
    df = prior.wishart_df(qb) + n
    R0_inv = np.eye(qb) / prior.r0_scale
    S = np.linalg.inv(R0_inv + b_all.T @ b_all) if n else np.linalg.inv(R0_inv)
    S = 0.5 * (S + S.T)
    D_inv = wishart.rvs(df=df, scale=S, random_state=rng)
    D_inv = np.atleast_2d(D_inv)
    return 0.5 * (D_inv + D_inv.T)


def gibbs_tau_h(gammas_h0, K, prior: PriorSpec, rng, rank: int | None = None):
    """Gamma draw for the baseline-hazard roughness precision.

    The improper penalty prior tau^{rank/2} exp(-tau g'Kg / 2) combined
    with Gamma(shape, rate) is conjugate: the conditional is
    Gamma(shape + rank/2, rate + g'Kg/2).
    """
    g = np.asarray(gammas_h0, dtype=float)
    K = np.asarray(K, dtype=float)
    if rank is None:
        rank = int(np.linalg.matrix_rank(K))
    shape = prior.tau_shape + 0.5 * rank
    rate = prior.tau_rate + 0.5 * float(g @ K @ g)
    return rng.gamma(shape, 1.0 / rate)


def adapt_proposals(rates, scales, targets, batch_index):
    """Robbins-Monro update of the proposal scales on the log scale.

    At the target acceptance rate the scale is an exact fixed point;
    zero acceptance shrinks it and full acceptance grows it.
    """
    rates = np.asarray(rates, dtype=float)
    scales = np.asarray(scales, dtype=float)
    targets = np.asarray(targets, dtype=float)
    step = 1.0 / np.sqrt(max(batch_index, 1))
    out = scales * np.exp(step * (rates - targets))
    return np.clip(out, 1e-3, 1e3)


def _target_rate(dim: int) -> float:
    return 0.234 if dim >= 3 else 0.44


# ---------------------------------------------------------------------------
# vectorized joint workspace

class JointWorkspace:
    """Precomputed design arrays for fast joint log-likelihood evaluation.

    Every survival integral uses a fixed quadrature rule on [0, T_i], so
    the longitudinal designs at the scaled nodes of all subjects can be
    built once.  Likelihood methods then reduce to a handful of matrix
    products per call.
    """

    def __init__(self, long: LongTable, surv: SurvTable, fixed: TermList,
                 random: TermList, family: Family,
                 splines: dict[int, TimeSpline], surv_terms: TermList,
                 assoc: AssociationSpec, knots=None, penalized: bool = True,
                 penalty_order: int = 2, n_basis_h0: int = 17, rule=None):
        self.family = family
        self.assoc = assoc
        self.penalized = penalized
        self.splines = splines
        self.fixed = fixed
        self.random = random
        self.surv_terms = surv_terms

        order = {sid: k for k, sid in enumerate(surv.subjects)}
        missing = [s for s in long.subjects if s not in order]
        if missing:
            raise DataError(f"subjects {missing[:3]} lack survival rows")
        self.subjects = list(surv.subjects)
        self.n = len(self.subjects)

        # longitudinal part
        self.X, self.fixed_names = build_design(long, fixed, splines)
        self.Z, self.random_names = build_design(long, random, splines)
        self.y = long.responses()
        self.row_subj = np.array([order[s] for s in long.frame[long.subject_col]])
        self.censor = None
        if family.kind == "censored_gaussian":
            col = family.censor_column
            if col not in long.frame.columns:
                raise DataError(f"missing censoring column {col!r}")
            self.censor = long.frame[col].to_numpy(dtype=float)
        tmax = np.zeros(self.n)
        np.maximum.at(tmax, self.row_subj, long.times())

        # survival part
        self.T = surv.times()
        self.delta = surv.events()
        if np.any(tmax > self.T + 1e-8):
            raise DataError("longitudinal measurements after the event time")
        self.W, self.w_names = design_at_times(
            surv.frame, self.T, surv_terms, splines, surv.factor_levels)
        self.knots = knots if knots is not None else percentile_knots(
            self.T[self.delta == 1], n_basis=n_basis_h0)
        self.Q = self.knots.n_basis
        self.K_pen = difference_penalty(self.Q, penalty_order)
        self.pen_rank = self.Q - penalty_order

        rule = rule or gauss_kronrod(15)
        self.wq = rule.weights
        self.n_quad = rule.nodes.shape[0]
        self.half_T = 0.5 * self.T
        nodes = self.half_T[:, None] * (rule.nodes[None, :] + 1.0)  # (n, nq)
        flat = nodes.reshape(-1)

        self.B_T = bspline_design(self.T, self.knots)
        self.B_q = bspline_design(flat, self.knots)  # (n*nq, Q)

        surv_rep = surv.frame.loc[np.repeat(np.arange(self.n), self.n_quad)]
        surv_rep = surv_rep.reset_index(drop=True)
        self._surv_frame = surv.frame
        fl = surv.factor_levels

        def designs(terms):
            Mt, _ = design_at_times(surv.frame, self.T, terms, splines, fl)
            Mq, _ = design_at_times(surv_rep, flat, terms, splines, fl)
            return Mt, Mq

        self.kind = assoc.kind
        if self.kind in ("td_value", "td_both"):
            self.Xv_T, self.Xv_q = designs(fixed)
            self.Zv_T, self.Zv_q = designs(random)
        if self.kind in ("td_extra", "td_both"):
            ex = assoc.extra_form
            self.Xe_T, self.Xe_q = designs(ex.fixed)
            self.Ze_T, self.Ze_q = designs(ex.random)
            self.ind_fixed = np.array([i - 1 for i in ex.ind_fixed])
            self.ind_random = np.array([i - 1 for i in ex.ind_random])
        if self.kind == "shared_betas_re":
            try:
                self.random_in_fixed = np.array(
                    [self.fixed_names.index(nm) for nm in self.random_names])
            except ValueError:
                raise InvalidSpecError(
                    "shared fixed+random association requires every random "
                    "term to appear among the fixed terms")

        # indicator vectors for interaction features, one per subject
        self._ind_cache = {}
        for fl_list in (assoc.transform_value, assoc.transform_extra):
            for feat in fl_list.features:
                if isinstance(feat, InteractWith):
                    if feat.covariate not in surv.frame.columns:
                        raise DataError(
                            f"feature covariate {feat.covariate!r} not in survival table")
                    vals = surv.frame[feat.covariate].astype(str).to_numpy()
                    self._ind_cache[(feat.covariate, str(feat.level))] = (
                        vals == str(feat.level)).astype(float)

        self.p = self.X.shape[1]
        self.q = self.Z.shape[1]
        self.pw = self.W.shape[1]
        self.n_alpha = assoc.n_alpha(self.q)
        self.alpha_names = assoc.alpha_names(self.random_names)

    # -- likelihood pieces, all returning per-subject vectors ---------------

    def long_eta(self, beta, b):
        return self.X @ beta + np.einsum("nq,nq->n", self.Z, b[self.row_subj])

    def long_loglik(self, beta, b, sigma2):
        eta = self.long_eta(beta, b)
        if self.family.scale_needed and not sigma2 > 0:
            raise NumericError(
                "nonfinite log-posterior term in block 'longitudinal'")
        scale = np.sqrt(sigma2) if self.family.scale_needed else None
        rows = log_density_long(self.y, eta, scale, self.family, self.censor)
        return np.bincount(self.row_subj, weights=rows, minlength=self.n)

    def _features(self, eta, flist):
        """Apply the transformation features to an eta array of shape
        (n,) or (n, nq); returns a list of arrays of the same shape."""
        out = []
        for feat in flist.features:
            if isinstance(feat, Identity):
                out.append(eta)
            elif isinstance(feat, Power):
                out.append(eta ** feat.k)
            else:
                ind = self._ind_cache[(feat.covariate, str(feat.level))]
                out.append(eta * ind if eta.ndim == 1 else eta * ind[:, None])
        return out

    def _assoc_terms(self, beta, b, alpha):
        """(n,) and (n, nq) association contributions alpha' f(t)."""
        nq = self.n_quad
        if self.kind in ("shared_re", "shared_betas_re"):
            f = b if self.kind == "shared_re" else beta[self.random_in_fixed] + b
            at = f @ alpha
            return at, np.repeat(at[:, None], nq, axis=1)
        cols_T, cols_q = [], []
        if self.kind in ("td_value", "td_both"):
            etaT = self.Xv_T @ beta + np.einsum("nq,nq->n", self.Zv_T, b)
            etaq = (self.Xv_q @ beta).reshape(self.n, nq) + np.einsum(
                "nkq,nq->nk", self.Zv_q.reshape(self.n, nq, -1), b)
            cols_T += self._features(etaT, self.assoc.transform_value)
            cols_q += self._features(etaq, self.assoc.transform_value)
        if self.kind in ("td_extra", "td_both"):
            bf = beta[self.ind_fixed]
            br = b[:, self.ind_random]
            etaT = self.Xe_T @ bf + np.einsum("nq,nq->n", self.Ze_T, br)
            etaq = (self.Xe_q @ bf).reshape(self.n, nq) + np.einsum(
                "nkq,nq->nk", self.Ze_q.reshape(self.n, nq, -1), br)
            cols_T += self._features(etaT, self.assoc.transform_extra)
            cols_q += self._features(etaq, self.assoc.transform_extra)
        at = sum(a * c for a, c in zip(alpha, cols_T))
        aq = sum(a * c for a, c in zip(alpha, cols_q))
        return at, aq

    def surv_loglik(self, beta, b, gamma, alpha, gammas_h0):
        at, aq = self._assoc_terms(beta, b, alpha)
        wpart = self.W @ gamma if self.pw else np.zeros(self.n)
        logh_T = self.B_T @ gammas_h0 + wpart + at
        logh_q = (self.B_q @ gammas_h0).reshape(self.n, self.n_quad) \
            + wpart[:, None] + aq
        with np.errstate(over="ignore"):
            H = self.half_T * (np.exp(logh_q) @ self.wq)
        return self.delta * logh_T - H

    def cum_hazard(self, beta, b, gamma, alpha, gammas_h0):
        at, aq = self._assoc_terms(beta, b, alpha)
        wpart = self.W @ gamma if self.pw else np.zeros(self.n)
        logh_q = (self.B_q @ gammas_h0).reshape(self.n, self.n_quad) \
            + wpart[:, None] + aq
        with np.errstate(over="ignore"):
            return self.half_T * (np.exp(logh_q) @ self.wq)

    def re_logprior(self, b, D):
        q = self.q
        sign, logdet = np.linalg.slogdet(D)
        if sign <= 0:
            return np.full(self.n, -np.inf)
        quad = np.einsum("nq,nq->n", b, np.linalg.solve(D, b.T).T)
        return -0.5 * (q * LOG2PI + logdet + quad)

    # -- log posterior with block diagnosis ---------------------------------

    def log_posterior(self, state, priors: PriorSpec):
        """Full joint log posterior, returned with per-block parts so a
        nonfinite value can be traced to the offending block."""
        parts = {}
        parts["longitudinal"] = float(np.sum(
            self.long_loglik(state.beta, state.b, state.sigma2)))
        parts["survival"] = float(np.sum(self.surv_loglik(
            state.beta, state.b, state.gamma, state.alpha, state.gammas_h0)))
        parts["random_effects"] = float(np.sum(self.re_logprior(state.b, state.D)))
        parts["prior_beta"] = _normal_logprior(state.beta, priors.v0)
        parts["prior_gamma"] = _normal_logprior(state.gamma, priors.v0)
        parts["prior_alpha"] = _normal_logprior(state.alpha, priors.v0)
        parts["prior_h0"] = self.h0_logprior(state.gammas_h0, state.tau_h, priors)
        if self.family.scale_needed:
            parts["prior_sigma2"] = _invgamma_logprior(state.sigma2, priors)
        if self.penalized:
            parts["prior_tau"] = ((priors.tau_shape - 1.0) * np.log(state.tau_h)
                                  - priors.tau_rate * state.tau_h
                                  + priors.tau_shape * np.log(priors.tau_rate)
                                  - gammaln(priors.tau_shape))
        qb = self.q
        df0 = priors.wishart_df(qb)
        sign, _ = np.linalg.slogdet(state.D)
        if sign <= 0:
            raise NumericError(
                "nonfinite log-posterior term in block 'random_effects'")
        parts["prior_D"] = float(wishart.logpdf(
            np.linalg.inv(state.D), df=df0, scale=np.eye(qb) * priors.r0_scale))
        for name, val in parts.items():
            if not np.isfinite(val):
                raise NumericError(f"nonfinite log-posterior term in block {name!r}")
        return sum(parts.values()), parts

    def h0_logprior(self, g, tau_h, priors: PriorSpec):
        if self.penalized:
            return float(0.5 * self.pen_rank * (np.log(tau_h) - LOG2PI)
                         - 0.5 * tau_h * (g @ self.K_pen @ g))
        return _normal_logprior(g, priors.v0)


def _normal_logprior(x, v0):
    x = np.asarray(x, dtype=float)
    return float(-0.5 * x.size * (LOG2PI + np.log(v0)) - 0.5 * np.sum(x * x) / v0)


def _invgamma_logprior(s2, priors: PriorSpec):
    return float(priors.a0 * np.log(priors.b0) - gammaln(priors.a0)
                 - (priors.a0 + 1.0) * np.log(s2) - priors.b0 / s2)


# ---------------------------------------------------------------------------
# sampler state and initial values

@dataclass
class SamplerState:
    beta: np.ndarray
    b: np.ndarray            # (n, q)
    gamma: np.ndarray
    alpha: np.ndarray
    gammas_h0: np.ndarray
    sigma2: float
    D: np.ndarray
    tau_h: float


@dataclass
class InitValues:
    """Starting values plus proposal covariances and their provenance."""

    beta: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    gammas_h0: np.ndarray
    sigma2: float
    D: np.ndarray
    tau_h: float
    beta_cov: np.ndarray
    b_cov: np.ndarray        # (n, q, q)
    ga_cov: np.ndarray       # joint (gamma, alpha) proposal covariance
    h0_cov: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        required = {"beta", "b", "gamma_alpha", "gammas_h0"}
        missing = required - set(self.provenance)
        if missing:
            raise InvalidSpecError(
                f"initializer provenance missing for {sorted(missing)}")


def fit_h0_init(ws: JointWorkspace, beta, b, gamma, alpha, tau_h=1.0,
                max_iter: int = 50, tol: float = 1e-8):
    """Penalized Newton fit of the baseline log-hazard coefficients with
    all other parameters held at their two-stage estimates.  Returns the
    mode and the inverse curvature for use as a proposal covariance."""
    at, aq = ws._assoc_terms(beta, b, alpha)
    wpart = ws.W @ gamma if ws.pw else np.zeros(ws.n)
    off_T = wpart + at
    off_q = (wpart[:, None] + aq).reshape(-1)
    Bq = ws.B_q
    scale_q = (ws.half_T[:, None] * np.broadcast_to(ws.wq, (ws.n, ws.n_quad))).reshape(-1)
    events = float(ws.delta.sum())
    if events == 0:
        raise DataError("no events: baseline hazard not identifiable")
    g = np.full(ws.Q, np.log(events / float(ws.T.sum())))
    pen = tau_h * ws.K_pen
    for _ in range(max_iter):
        lam = scale_q * np.exp(np.clip(off_q + Bq @ g, -700, 700))
        grad = ws.B_T.T @ ws.delta - Bq.T @ lam - pen @ g
        hess = Bq.T @ (lam[:, None] * Bq) + pen
        step = np.linalg.solve(hess + 1e-8 * np.eye(ws.Q), grad)
        g = g + step
        if np.max(np.abs(step)) < tol:
            break
    lam = scale_q * np.exp(np.clip(off_q + Bq @ g, -700, 700))
    hess = Bq.T @ (lam[:, None] * Bq) + pen
    cov = np.linalg.inv(hess + 1e-8 * np.eye(ws.Q))
    return g, cov


# ---------------------------------------------------------------------------
# the sampler

def run_mcmc(ws: JointWorkspace, init: InitValues, priors: PriorSpec,
             control: MCMCControl) -> Draws:
    """Adaptive phase, burn-in, then thinned sampling.

    Blocks: beta; all b_i simultaneously (subjects are conditionally
    independent); (gamma, alpha) jointly; baseline coefficients; error
    variance by slice; D and tau_h by Gibbs.
    """
    rng = np.random.default_rng(control.seed)
    n, q, p = ws.n, ws.q, ws.p
    has_scale = ws.family.scale_needed

    state = SamplerState(
        beta=np.array(init.beta, float), b=np.array(init.b, float),
        gamma=np.array(init.gamma, float), alpha=np.array(init.alpha, float),
        gammas_h0=np.array(init.gammas_h0, float),
        sigma2=float(init.sigma2), D=np.array(init.D, float),
        tau_h=float(init.tau_h))

    # abort early with a block diagnosis if the init is bad
    ws.log_posterior(state, priors)

    L_beta = _chol_psd(init.beta_cov)
    L_ga = _chol_psd(init.ga_cov)
    L_h0 = _chol_psd(init.h0_cov)
    L_b = np.stack([_chol_psd(init.b_cov[i]) for i in range(n)])

    d_ga = len(state.gamma) + len(state.alpha)
    scales = {"beta": 2.38 / np.sqrt(p), "ga": 2.38 / np.sqrt(d_ga),
              "h0": 2.38 / np.sqrt(ws.Q)}
    scale_b = np.full(n, 2.38 / np.sqrt(q))
    targets = {"beta": _target_rate(p), "ga": _target_rate(d_ga),
               "h0": _target_rate(ws.Q), "b": _target_rate(q)}

    # cached per-subject pieces
    ll_long = ws.long_loglik(state.beta, state.b, state.sigma2)
    ll_surv = ws.surv_loglik(state.beta, state.b, state.gamma,
                             state.alpha, state.gammas_h0)
    lp_b = ws.re_logprior(state.b, state.D)

    acc_counts = {"beta": 0, "ga": 0, "h0": 0}
    acc_b = np.zeros(n)
    batch_iters = 0
    batch_idx = 0
    accept_log = {"beta": [], "ga": [], "h0": [], "b": []}

    thin = control.thin
    n_keep = control.n_keep
    kept = {
        "beta": np.empty((n_keep, p)),
        "gamma": np.empty((n_keep, len(state.gamma))),
        "alpha": np.empty((n_keep, len(state.alpha))),
        "gammas_h0": np.empty((n_keep, ws.Q)),
        "D": np.empty((n_keep, q, q)),
        "sigma2": np.empty(n_keep) if has_scale else None,
        "tau_h": np.empty(n_keep) if ws.penalized else None,
        "subj_loglik": np.empty((n_keep, n)),
        "b": np.empty((n_keep, n, q)) if control.store_b else None,
    }
    b_mean = np.zeros((n, q))
    k_out = 0

    total = control.n_adapt + control.n_burnin + control.n_iter
    for it in range(total):
        adapting = it < control.n_adapt
        sampling = it >= control.n_adapt + control.n_burnin

        # --- beta block
        prop = state.beta + scales["beta"] * (L_beta @ rng.standard_normal(p))
        ll_long_p = ws.long_loglik(prop, state.b, state.sigma2)
        ll_surv_p = ws.surv_loglik(prop, state.b, state.gamma,
                                   state.alpha, state.gammas_h0)
        delta_lp = (ll_long_p.sum() + ll_surv_p.sum()
                    - ll_long.sum() - ll_surv.sum()
                    + _normal_logprior(prop, priors.v0)
                    - _normal_logprior(state.beta, priors.v0))
        if np.log(rng.uniform()) < delta_lp:
            state.beta = prop
            ll_long, ll_surv = ll_long_p, ll_surv_p
            acc_counts["beta"] += 1

        # --- random effects, all subjects at once
        eps = rng.standard_normal((n, q))
        prop_b = state.b + scale_b[:, None] * np.einsum("nij,nj->ni", L_b, eps)
        ll_long_p = ws.long_loglik(state.beta, prop_b, state.sigma2)
        ll_surv_p = ws.surv_loglik(state.beta, prop_b, state.gamma,
                                   state.alpha, state.gammas_h0)
        lp_b_p = ws.re_logprior(prop_b, state.D)
        log_r = (ll_long_p - ll_long) + (ll_surv_p - ll_surv) + (lp_b_p - lp_b)
        acc = np.log(rng.uniform(size=n)) < log_r
        state.b[acc] = prop_b[acc]
        ll_long[acc] = ll_long_p[acc]
        ll_surv[acc] = ll_surv_p[acc]
        lp_b[acc] = lp_b_p[acc]
        acc_b += acc

        # --- (gamma, alpha) joint block
        cur = np.concatenate([state.gamma, state.alpha])
        prop = cur + scales["ga"] * (L_ga @ rng.standard_normal(d_ga))
        g_p, a_p = prop[:len(state.gamma)], prop[len(state.gamma):]
        ll_surv_p = ws.surv_loglik(state.beta, state.b, g_p, a_p, state.gammas_h0)
        delta_lp = (ll_surv_p.sum() - ll_surv.sum()
                    + _normal_logprior(prop, priors.v0)
                    - _normal_logprior(cur, priors.v0))
        if np.log(rng.uniform()) < delta_lp:
            state.gamma, state.alpha = g_p, a_p
            ll_surv = ll_surv_p
            acc_counts["ga"] += 1

        # --- baseline hazard coefficients
        prop = state.gammas_h0 + scales["h0"] * (L_h0 @ rng.standard_normal(ws.Q))
        ll_surv_p = ws.surv_loglik(state.beta, state.b, state.gamma,
                                   state.alpha, prop)
        delta_lp = (ll_surv_p.sum() - ll_surv.sum()
                    + ws.h0_logprior(prop, state.tau_h, priors)
                    - ws.h0_logprior(state.gammas_h0, state.tau_h, priors))
        if np.log(rng.uniform()) < delta_lp:
            state.gammas_h0 = prop
            ll_surv = ll_surv_p
            acc_counts["h0"] += 1

        # --- error variance
        if has_scale:
            if ws.family.kind == "gaussian":
                resid = ws.y - ws.long_eta(state.beta, state.b)
                state.sigma2 = slice_update_precision(
                    state.sigma2, float(resid @ resid), len(ws.y), priors, rng)
            else:
                eta = ws.long_eta(state.beta, state.b)

                # IG(a0, b0) on the variance is Gamma(a0, b0) on the precision
                def logf(phi):
                    if phi <= 0:
                        return -np.inf
                    ll = np.sum(log_density_long(ws.y, eta, np.sqrt(1.0 / phi),
                                                 ws.family, ws.censor))
                    return ll + (priors.a0 - 1.0) * np.log(phi) - priors.b0 * phi

                phi = _slice_step(1.0 / state.sigma2, logf, rng,
                                  w=max(1.0 / state.sigma2, 1e-3))
                state.sigma2 = 1.0 / phi
            ll_long = ws.long_loglik(state.beta, state.b, state.sigma2)

        # --- D and tau by Gibbs
        D_inv = gibbs_wishart_D(state.b, priors, rng)
        state.D = np.linalg.inv(D_inv)
        lp_b = ws.re_logprior(state.b, state.D)
        if ws.penalized:
            state.tau_h = gibbs_tau_h(state.gammas_h0, ws.K_pen, priors, rng,
                                      rank=ws.pen_rank)

        # --- adaptation bookkeeping
        batch_iters += 1
        if batch_iters == control.n_batch:
            rates = {k: acc_counts[k] / control.n_batch for k in acc_counts}
            rate_b = acc_b / control.n_batch
            for k in acc_counts:
                accept_log[k].append(rates[k])
            accept_log["b"].append(float(rate_b.mean()))
            if adapting:
                batch_idx += 1
                for k in ("beta", "ga", "h0"):
                    scales[k] = float(adapt_proposals(
                        rates[k], scales[k], targets[k], batch_idx))
                scale_b = adapt_proposals(rate_b, scale_b,
                                          np.full(n, targets["b"]), batch_idx)
            acc_counts = {k: 0 for k in acc_counts}
            acc_b = np.zeros(n)
            batch_iters = 0

        # --- storage
        if sampling:
            b_mean += (state.b - b_mean) / (it - control.n_adapt
                                            - control.n_burnin + 1)
            if (it - control.n_adapt - control.n_burnin + 1) % thin == 0 \
                    and k_out < n_keep:
                kept["beta"][k_out] = state.beta
                kept["gamma"][k_out] = state.gamma
                kept["alpha"][k_out] = state.alpha
                kept["gammas_h0"][k_out] = state.gammas_h0
                kept["D"][k_out] = state.D
                if has_scale:
                    kept["sigma2"][k_out] = state.sigma2
                if ws.penalized:
                    kept["tau_h"][k_out] = state.tau_h
                kept["subj_loglik"][k_out] = ll_long + ll_surv
                if control.store_b:
                    kept["b"][k_out] = state.b
                k_out += 1

    warnings_out = []
    n_post_batches = (control.n_burnin + control.n_iter) // control.n_batch
    for k in ("beta", "ga", "h0", "b"):
        tail = accept_log[k][-max(n_post_batches, 1):]
        if tail:
            mean_rate = float(np.mean(tail))
            if not (0.05 <= mean_rate <= 0.95):
                warnings_out.append(
                    f"block {k!r} post-adaptation acceptance {mean_rate:.3f} "
                    "outside [0.05, 0.95]")

    names = {
        "beta": ws.fixed_names,
        "gamma": ws.w_names,
        "alpha": ws.alpha_names,
        "gammas_h0": [f"Bs.gammas{j + 1}" for j in range(ws.Q)],
        "tau_h": ["tauBs"],
        "sigma2": ["sigma2"],
        "D": [f"D[{i + 1},{j + 1}]" for i in range(q) for j in range(q)],
        "random": ws.random_names,
    }
    return Draws(
        beta=kept["beta"][:k_out], gamma=kept["gamma"][:k_out],
        alpha=kept["alpha"][:k_out], gammas_h0=kept["gammas_h0"][:k_out],
        D=kept["D"][:k_out],
        sigma2=kept["sigma2"][:k_out] if has_scale else None,
        tau_h=kept["tau_h"][:k_out] if ws.penalized else None,
        subj_loglik=kept["subj_loglik"][:k_out], b_mean=b_mean,
        b=kept["b"][:k_out] if control.store_b else None,
        accept=accept_log,
        scales={"beta": scales["beta"], "ga": scales["ga"],
                "h0": scales["h0"], "b": scale_b},
        names=names, provenance=dict(init.provenance),
        warnings=warnings_out, subjects=list(ws.subjects))
