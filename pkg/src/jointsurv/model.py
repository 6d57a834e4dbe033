"""Model specification and the end-to-end fitting pipeline.

fit_joint_model wires together the separate initializers (mixed-model EM
for the longitudinal side, Cox partial likelihood with a time-dependent
covariate for the survival side, penalized Newton for the baseline
hazard) and hands their estimates and curvatures to the MCMC engine as
starting values and proposal covariances.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpecError
from .longitudinal import (DnsTime, Family, InsTime, Interaction, LongTable,
                           NsTime, TermList, TimeSpline, design_at_times,
                           fit_glmm_init, fit_lmm_init, spline_from_times)
from .mcmc import (Draws, InitValues, JointWorkspace, MCMCControl, PriorSpec,
                   fit_h0_init, run_mcmc)
from .survival import (AssociationSpec, Identity, InteractWith, Power,
                       SurvTable, fit_cox_init)

__all__ = ["ModelSpec", "FittedJointModel", "fit_joint_model",
           "build_splines", "workspace_for"]


@dataclass(frozen=True)
class ModelSpec:
    fixed: TermList
    random: TermList
    family: Family
    surv_terms: TermList
    association: AssociationSpec
    n_basis_h0: int = 17
    penalized: bool = True
    penalty_order: int = 2
    priors: PriorSpec = field(default_factory=PriorSpec)
    control: MCMCControl = field(default_factory=MCMCControl)

    def with_control(self, **kw) -> "ModelSpec":
        return replace(self, control=replace(self.control, **kw))


def _spline_dfs(terms: TermList, out: set):
    for t in terms:
        if isinstance(t, (NsTime, DnsTime, InsTime)):
            out.add(t.df)
        elif isinstance(t, Interaction):
            _spline_dfs(TermList((t.left, t.right)), out)


def build_splines(spec: ModelSpec, long: LongTable) -> dict[int, TimeSpline]:
    """One knot configuration per spline df, placed from the observed
    measurement times so that all ns/dns/ins terms of equal df share knots."""
    dfs: set = set()
    for terms in (spec.fixed, spec.random):
        _spline_dfs(terms, dfs)
    ex = spec.association.extra_form
    if ex is not None:
        _spline_dfs(ex.fixed, dfs)
        _spline_dfs(ex.random, dfs)
    return {df: spline_from_times(long.times(), df) for df in sorted(dfs)}


def data_fingerprint(long: LongTable, surv: SurvTable) -> dict:
    h = hashlib.sha256()
    h.update(long.frame.to_csv(index=False).encode())
    h.update(surv.frame.to_csv(index=False).encode())
    return {
        "n_long_rows": int(long.n_obs),
        "n_subjects": int(len(surv.subjects)),
        "long_columns": list(long.frame.columns),
        "surv_columns": list(surv.frame.columns),
        "sha256": h.hexdigest(),
    }


@dataclass
class FittedJointModel:
    """The serializable result of a fit: everything needed to predict."""

    spec: ModelSpec
    draws: Draws
    knots: object                      # baseline-hazard KnotVector
    splines: dict[int, TimeSpline]
    long_factor_levels: dict
    surv_factor_levels: dict
    fingerprint: dict
    init_meta: dict = field(default_factory=dict)
    model_id: str = "model"
    default_times: np.ndarray | None = None  # prediction grid from the fit data
    columns: dict = field(default_factory=dict)  # column names of the fit data

    # posterior point estimates, used by first-order predictions
    def posterior_means(self) -> dict:
        d = self.draws
        out = {
            "beta": d.beta.mean(axis=0),
            "gamma": d.gamma.mean(axis=0),
            "alpha": d.alpha.mean(axis=0),
            "gammas_h0": d.gammas_h0.mean(axis=0),
            "D": d.D.mean(axis=0),
            "b_mean": d.b_mean,
        }
        out["sigma2"] = float(d.sigma2.mean()) if d.sigma2 is not None else None
        out["tau_h"] = float(d.tau_h.mean()) if d.tau_h is not None else None
        return out


def workspace_for(model: FittedJointModel, long: LongTable,
                  surv: SurvTable) -> JointWorkspace:
    """Rebuild the evaluation workspace for a fitted model on (possibly
    new) data, reusing the training knots and spline configurations."""
    spec = model.spec
    return JointWorkspace(long, surv, spec.fixed, spec.random, spec.family,
                          model.splines, spec.surv_terms, spec.association,
                          knots=model.knots, penalized=spec.penalized,
                          penalty_order=spec.penalty_order)


def _td_covariate_steps(ws: JointWorkspace, long: LongTable, beta, b_mat):
    """Per-subject step functions of the association features evaluated at
    the measurement times with the mixed-model estimates plugged in."""
    assoc = ws.assoc
    kind = assoc.kind
    times = long.times()
    order = {sid: k for k, sid in enumerate(ws.subjects)}
    if kind in ("shared_re", "shared_betas_re"):
        vals = b_mat if kind == "shared_re" else beta[ws.random_in_fixed] + b_mat
        return ({sid: (np.array([0.0]), vals[order[sid]][None, :])
                 for sid in ws.subjects}, list(ws.alpha_names))

    def feature_cols(eta_rows, flist, subj_rows):
        cols = []
        for feat in flist.features:
            if isinstance(feat, Identity):
                cols.append(eta_rows)
            elif isinstance(feat, Power):
                cols.append(eta_rows ** feat.k)
            elif isinstance(feat, InteractWith):
                ind = ws._ind_cache[(feat.covariate, str(feat.level))]
                cols.append(eta_rows * ind[subj_rows])
        return cols

    cols = []
    subj_rows = ws.row_subj
    if kind in ("td_value", "td_both"):
        eta = ws.X @ beta + np.einsum("nq,nq->n", ws.Z, b_mat[subj_rows])
        cols += feature_cols(eta, assoc.transform_value, subj_rows)
    if kind in ("td_extra", "td_both"):
        ex = assoc.extra_form
        Xe, _ = design_at_times(long.frame, times, ex.fixed, ws.splines,
                                long.factor_levels)
        Ze, _ = design_at_times(long.frame, times, ex.random, ws.splines,
                                long.factor_levels)
        bf = beta[[i - 1 for i in ex.ind_fixed]]
        br = b_mat[:, [i - 1 for i in ex.ind_random]]
        eta_e = Xe @ bf + np.einsum("nq,nq->n", Ze, br[subj_rows])
        cols += feature_cols(eta_e, assoc.transform_extra, subj_rows)
    V = np.column_stack(cols)
    steps = {}
    ids = long.frame[long.subject_col].to_numpy()
    for sid in ws.subjects:
        mask = ids == sid
        steps[sid] = (times[mask], V[mask])
    return steps, list(ws.alpha_names)


def fit_joint_model(long: LongTable, surv: SurvTable, spec: ModelSpec,
                    model_id: str = "model") -> FittedJointModel:
    splines = build_splines(spec, long)

    # stage 1: longitudinal mixed model
    if spec.family.kind in ("binomial_logit", "binomial_probit"):
        lmm = fit_glmm_init(long, spec.fixed, spec.random, spec.family, splines)
    else:
        lmm = fit_lmm_init(long, spec.fixed, spec.random, splines)

    ws = JointWorkspace(long, surv, spec.fixed, spec.random, spec.family,
                        splines, spec.surv_terms, spec.association,
                        penalized=spec.penalized,
                        penalty_order=spec.penalty_order,
                        n_basis_h0=spec.n_basis_h0)

    b_mat = np.vstack([lmm.b[sid] for sid in ws.subjects])
    b_cov = np.stack([lmm.b_cov[sid] for sid in ws.subjects])

    # stage 2: Cox model with the fitted trajectory as a step covariate
    td_steps, td_names = _td_covariate_steps(ws, long, lmm.beta, b_mat)
    cox = fit_cox_init(surv, ws.W, ws.w_names, td_steps, td_names)
    gamma0 = cox.coef[:ws.pw]
    alpha0 = cox.coef[ws.pw:]

    tau0 = 200.0 if spec.penalized else 1.0
    g0, h0_cov = fit_h0_init(ws, lmm.beta, b_mat, gamma0, alpha0, tau_h=tau0)

    q = ws.q
    D0 = lmm.D + 1e-6 * np.eye(q)
    init = InitValues(
        beta=lmm.beta, b=b_mat, gamma=gamma0, alpha=alpha0, gammas_h0=g0,
        sigma2=max(lmm.sigma2, 1e-6), D=D0, tau_h=tau0,
        beta_cov=(lmm.beta_cov_cond if lmm.beta_cov_cond is not None
                  else lmm.beta_cov),
        b_cov=b_cov, ga_cov=cox.cov, h0_cov=h0_cov,
        provenance={
            "beta": "mixed-model EM",
            "b": "mixed-model empirical Bayes",
            "gamma_alpha": "two-stage Cox partial likelihood",
            "gammas_h0": "penalized Newton given two-stage estimates",
        })

    draws = run_mcmc(ws, init, spec.priors, spec.control)
    meta = {
        "cox_converged": bool(cox.converged),
        "cox_monotone": bool(cox.monotone_flag),
        "lmm_loglik": lmm.loglik_trace[-1] if lmm.loglik_trace else None,
        "init_beta": lmm.beta.tolist(),
        "init_gamma": gamma0.tolist(),
        "init_alpha": alpha0.tolist(),
    }
    T, delta = surv.times(), surv.events()
    t_lo = float(T[delta == 1].min()) if delta.sum() else float(T.min())
    grid = np.linspace(t_lo, float(np.quantile(T, 0.9)) + 0.01, 35)
    return FittedJointModel(
        spec=spec, draws=draws, knots=ws.knots, splines=splines,
        long_factor_levels=dict(long.factor_levels),
        surv_factor_levels=dict(surv.factor_levels),
        fingerprint=data_fingerprint(long, surv), init_meta=meta,
        model_id=model_id, default_times=grid,
        columns={"subject": long.subject_col, "time": long.time_col,
                 "response": long.response_col, "surv_time": surv.time_col,
                 "surv_event": surv.event_col})
