"""Synthetic data generator for the joint model.

Event times are drawn by inverse-transform sampling: for each subject the
cumulative hazard is evaluated with the same quadrature used by the
fitting code and inverted by bisection.  Subjects whose survival at the
administrative horizon exceeds the uniform draw are censored there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..basis import gauss_kronrod
from ..errors import InvalidSpecError
from ..longitudinal import (Family, LongTable, TermList, design_at_times,
                            spline_from_times)
from ..survival import AssociationSpec, SubjectState, SurvTable, apply_features

__all__ = ["SimConfig", "simulate_joint"]


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int
    fixed: TermList
    random: TermList
    beta: tuple
    D: tuple                       # row-major covariance entries
    sigma2: float
    log_h0: float                  # constant log baseline hazard
    gamma: tuple = ()
    alpha: tuple = ()
    association: AssociationSpec = field(
        default_factory=lambda: AssociationSpec("td_value"))
    visit_times: tuple = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0)
    covariates: dict = field(default_factory=dict)   # name -> ("binary", p) | ("normal", mu, sd) | ("choice", levels)
    surv_covariates: tuple = ()    # names entering the hazard via gamma
    t_max: float = 10.0
    cens_max: float | None = None  # uniform censoring horizon; None = admin only
    family_kind: str = "gaussian"
    spline_df: tuple = ()          # dfs needing knots, placed on [0, t_max]

    def __post_init__(self):
        if self.n_subjects < 1 or self.t_max <= 0:
            raise InvalidSpecError("need at least one subject and a positive horizon")
        q = int(np.sqrt(len(self.D)))
        if q * q != len(self.D):
            raise InvalidSpecError("D must be a flattened square matrix")


def _draw_covariates(cfg: SimConfig, rng) -> pd.DataFrame:
    cols = {}
    for name, spec in cfg.covariates.items():
        kind = spec[0]
        if kind == "binary":
            cols[name] = rng.binomial(1, spec[1], cfg.n_subjects).astype(float)
        elif kind == "normal":
            cols[name] = rng.normal(spec[1], spec[2], cfg.n_subjects)
        elif kind == "choice":
            cols[name] = rng.choice(list(spec[1]), cfg.n_subjects)
        else:
            raise InvalidSpecError(f"unknown covariate generator {kind!r}")
    return pd.DataFrame(cols)


def _cum_hazard_fn(cfg: SimConfig, subject: SubjectState, beta, alpha, w, rule):
    """Returns H(t) for one subject, vectorized over the quadrature nodes."""
    gamma_part = float(np.dot(cfg.gamma, w)) if len(cfg.gamma) else 0.0
    alpha = np.asarray(alpha, float)
    spec = cfg.association

    def H(t):
        if t <= 0:
            return 0.0
        nodes = 0.5 * t * (rule.nodes + 1.0)
        logh = np.full(nodes.shape, cfg.log_h0 + gamma_part)
        if alpha.size and np.any(alpha != 0.0):
            if spec.kind in ("shared_re", "shared_betas_re"):
                if spec.kind == "shared_re":
                    f = subject.b
                else:
                    f = beta[list(subject.random_in_fixed)] + subject.b
                logh = logh + float(np.dot(alpha, f))
            else:
                cols = []
                if spec.kind in ("td_value", "td_both"):
                    eta = subject.eta_value(nodes, beta)
                    cols += [np.array([apply_features(e, spec.transform_value,
                                                      subject.row)
                                       for e in eta]).T]
                if spec.kind in ("td_extra", "td_both"):
                    eta_e = subject.eta_extra(nodes, beta, spec.extra_form)
                    cols += [np.array([apply_features(e, spec.transform_extra,
                                                      subject.row)
                                       for e in eta_e]).T]
                F = np.vstack(cols)
                logh = logh + alpha @ F
        return float(0.5 * t * np.dot(rule.weights, np.exp(logh)))

    return H


def _invert_survival(H, target, t_max, tol=1e-8):
    """Bisection solve of H(t) = target on (0, t_max]; None if censored."""
    if H(t_max) < target:
        return None
    lo, hi = 0.0, t_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if H(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def simulate_joint(cfg: SimConfig, seed: int):
    """Generate (LongTable, SurvTable, truth dict) from the joint model."""
    rng = np.random.default_rng(seed)
    n = cfg.n_subjects
    beta = np.asarray(cfg.beta, float)
    q = int(np.sqrt(len(cfg.D)))
    D = np.asarray(cfg.D, float).reshape(q, q)
    base = _draw_covariates(cfg, rng)
    b_all = rng.multivariate_normal(np.zeros(q), D, size=n)
    rule = gauss_kronrod(15)
    splines = {df: spline_from_times(np.linspace(0, cfg.t_max, 50), df)
               for df in cfg.spline_df}

    factor_levels = {}
    for col in base.columns:
        if base[col].dtype == object:
            factor_levels[col] = list(dict.fromkeys(base[col].astype(str)))

    T_obs = np.empty(n)
    delta = np.empty(n)
    long_rows = []
    random_in_fixed = ()
    if cfg.association.kind == "shared_betas_re":
        random_in_fixed = tuple(range(q))
    for i in range(n):
        row = base.iloc[i] if len(base.columns) else None
        w = (base.loc[i, list(cfg.surv_covariates)].to_numpy(dtype=float)
             if cfg.surv_covariates else np.zeros(0))
        subj = SubjectState(w=w, b=b_all[i], row=row, fixed=cfg.fixed,
                            random=cfg.random, splines=splines,
                            factor_levels=factor_levels,
                            random_in_fixed=random_in_fixed)
        H = _cum_hazard_fn(cfg, subj, beta, np.asarray(cfg.alpha, float), w, rule)
        target = rng.exponential()
        t_event = _invert_survival(H, target, cfg.t_max)
        c = cfg.t_max if cfg.cens_max is None else min(
            cfg.t_max, rng.uniform(0, cfg.cens_max))
        if t_event is None or t_event > c:
            T_obs[i], delta[i] = c, 0.0
        else:
            T_obs[i], delta[i] = t_event, 1.0
        T_obs[i] = max(T_obs[i], 1e-6)

        visits = np.asarray(cfg.visit_times, float)
        visits = visits[visits <= T_obs[i]]
        if visits.size == 0:
            visits = np.array([0.0])
        eta = subj.eta_value(visits, beta)
        if cfg.family_kind == "gaussian":
            y = eta + rng.normal(0, np.sqrt(cfg.sigma2), len(visits))
        elif cfg.family_kind == "binomial_logit":
            y = (rng.uniform(size=len(visits)) < 1 / (1 + np.exp(-eta))).astype(float)
        else:
            raise InvalidSpecError(f"unsupported family {cfg.family_kind!r}")
        for k, t in enumerate(visits):
            rec = {"id": i, "year": float(t), "y": float(y[k])}
            for col in base.columns:
                rec[col] = base.loc[i, col]
            long_rows.append(rec)

    long_frame = pd.DataFrame(long_rows)
    surv_frame = pd.DataFrame({"id": np.arange(n), "T": T_obs, "delta": delta})
    for col in base.columns:
        surv_frame[col] = base[col].to_numpy()
    long = LongTable(long_frame, subject_col="id", time_col="year",
                     response_col="y")
    surv = SurvTable(surv_frame, subject_col="id", time_col="T",
                     event_col="delta")
    truth = {"beta": beta, "D": D, "sigma2": cfg.sigma2,
             "gamma": np.asarray(cfg.gamma, float),
             "alpha": np.asarray(cfg.alpha, float),
             "log_h0": cfg.log_h0, "b": b_all}
    return long, surv, truth
