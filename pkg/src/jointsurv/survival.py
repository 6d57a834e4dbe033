"""Relative-risk survival submodel.

log h_i(t) = log h0(t) + gamma'w_i + alpha' f_i(t), with a B-spline log
baseline hazard and several association structures f linking the
longitudinal process to the hazard: current value, user-defined extra
terms (slope or cumulative forms), both, or shared random effects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .basis import KnotVector, QuadratureRule, bspline_design, gauss_kronrod
from .errors import DataError, InvalidSpecError, NumericError
from .longitudinal import TermList, TimeSpline, design_at_times

__all__ = [
    "SurvTable", "BaselineHazard", "AssociationSpec", "ExtraForm",
    "Identity", "Power", "InteractWith", "FeatureList", "SubjectState",
    "log_baseline_hazard", "association_features", "log_hazard",
    "cumulative_hazard", "survival_function", "log_density_event",
    "difference_penalty", "fit_cox_init", "CoxFit",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# data table

class SurvTable:
    """One row per subject: observed time, event indicator, baseline covariates."""

    def __init__(self, frame: pd.DataFrame, subject_col="id", time_col="T",
                 event_col="delta", factor_levels: dict | None = None):
        for col in (subject_col, time_col, event_col):
            if col not in frame.columns:
                raise DataError(f"missing required column {col!r}")
        if frame[subject_col].duplicated().any():
            dup = frame[subject_col][frame[subject_col].duplicated()].iloc[0]
            raise DataError(f"duplicate subject row {dup!r} in survival table")
        T = frame[time_col].to_numpy(dtype=float)
        if np.any(T <= 0):
            raise DataError("observed event times must be positive")
        d = frame[event_col].to_numpy(dtype=float)
        if np.any((d != 0) & (d != 1)):
            raise DataError("event indicator must be 0/1")
        self.frame = frame.reset_index(drop=True)
        self.subject_col = subject_col
        self.time_col = time_col
        self.event_col = event_col
        from .longitudinal import _collect_factor_levels
        self.factor_levels = factor_levels or _collect_factor_levels(
            frame.drop(columns=[time_col, event_col]))

    @property
    def subjects(self):
        return list(self.frame[self.subject_col])

    def times(self) -> np.ndarray:
        return self.frame[self.time_col].to_numpy(dtype=float)

    def events(self) -> np.ndarray:
        return self.frame[self.event_col].to_numpy(dtype=float)


# ---------------------------------------------------------------------------
# baseline hazard

@dataclass
class BaselineHazard:
    gammas_h0: np.ndarray
    knots: KnotVector
    penalized: bool = True
    tau_h: float = 1.0
    penalty_order: int = 2

    def __post_init__(self):
        self.gammas_h0 = np.asarray(self.gammas_h0, dtype=float)
        if self.gammas_h0.shape[0] != self.knots.n_basis:
            raise InvalidSpecError(
                f"baseline hazard needs {self.knots.n_basis} coefficients, "
                f"got {self.gammas_h0.shape[0]}")


def difference_penalty(Q: int, order: int = 2) -> np.ndarray:
    """K = Delta_r' Delta_r for an r-th order difference penalty; rank Q - r."""
    D = np.eye(Q)
    for _ in range(order):
        D = np.diff(D, axis=0)
    return D.T @ D


def log_baseline_hazard(t, bh: BaselineHazard):
    """B-spline expansion of the log baseline hazard.

    The intercept is absorbed into the unconstrained coefficient vector
    (the basis sums to one, so a constant shift of the coefficients
    shifts the log hazard by the same constant).
    """
    B = bspline_design(t, bh.knots)
    out = B @ bh.gammas_h0
    return float(out[0]) if np.isscalar(t) else out


# ---------------------------------------------------------------------------
# association structures and transformation features

@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Power:
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise InvalidSpecError("Power feature needs exponent >= 2")


@dataclass(frozen=True)
class InteractWith:
    covariate: str
    level: object


@dataclass(frozen=True)
class FeatureList:
    features: tuple

    def __post_init__(self):
        if not self.features:
            raise InvalidSpecError("feature list must be nonempty")
        if sum(isinstance(f, Identity) for f in self.features) > 1:
            raise InvalidSpecError("Identity may appear at most once")


IDENTITY_ONLY = FeatureList((Identity(),))


def apply_features(x: float, features: FeatureList, row) -> np.ndarray:
    """Expand a scalar association term into its transformed columns."""
    out = []
    for feat in features.features:
        if isinstance(feat, Identity):
            out.append(x)
        elif isinstance(feat, Power):
            out.append(x ** feat.k)
        elif isinstance(feat, InteractWith):
            if row is None or feat.covariate not in row:
                raise DataError(f"feature references unknown covariate {feat.covariate!r}")
            out.append(x * float(str(row[feat.covariate]) == str(feat.level)))
        else:
            raise InvalidSpecError(f"unknown feature {feat!r}")
    return np.asarray(out, dtype=float)


@dataclass(frozen=True)
class ExtraForm:
    """User-defined extra association term (slope or cumulative forms)."""

    fixed: TermList
    random: TermList
    ind_fixed: tuple[int, ...]   # 1-based positions into the fixed coefficients
    ind_random: tuple[int, ...]  # 1-based positions into the random coefficients


_ASSOC_KINDS = {"td_value", "td_extra", "td_both", "shared_re", "shared_betas_re"}


@dataclass(frozen=True)
class AssociationSpec:
    kind: str
    extra_form: ExtraForm | None = None
    transform_value: FeatureList = IDENTITY_ONLY
    transform_extra: FeatureList = IDENTITY_ONLY

    def __post_init__(self):
        if self.kind not in _ASSOC_KINDS:
            raise InvalidSpecError(f"unknown association kind {self.kind!r}")
        if self.kind in ("td_extra", "td_both") and self.extra_form is None:
            raise InvalidSpecError(f"{self.kind} requires an extra_form")

    def n_alpha(self, q_random: int) -> int:
        if self.kind == "td_value":
            return len(self.transform_value.features)
        if self.kind == "td_extra":
            return len(self.transform_extra.features)
        if self.kind == "td_both":
            return len(self.transform_value.features) + len(self.transform_extra.features)
        return q_random

    def alpha_names(self, random_names) -> list[str]:
        def suffixes(features):
            out = []
            for f in features.features:
                if isinstance(f, Identity):
                    out.append("Assoct")
                elif isinstance(f, Power):
                    out.append(f"Assoct:^{f.k}")
                else:
                    out.append(f"Assoct:{f.level}")
            return out

        if self.kind == "td_value":
            return suffixes(self.transform_value)
        if self.kind == "td_extra":
            return [n.replace("Assoct", "AssoctE") for n in suffixes(self.transform_extra)]
        if self.kind == "td_both":
            return (suffixes(self.transform_value)
                    + [n.replace("Assoct", "AssoctE") for n in suffixes(self.transform_extra)])
        return [f"Assoct:{n}" for n in random_names]


@dataclass
class SubjectState:
    """Everything needed to evaluate one subject's hazard at any time."""

    w: np.ndarray                       # survival-submodel design row
    b: np.ndarray                       # random effects
    row: pd.Series | dict | None        # baseline covariates for features
    fixed: TermList
    random: TermList
    splines: dict[int, TimeSpline] = field(default_factory=dict)
    factor_levels: dict = field(default_factory=dict)
    random_in_fixed: tuple[int, ...] = ()  # 0-based positions of random cols in fixed cols

    def _frame_at(self, times) -> pd.DataFrame:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        base = {} if self.row is None else dict(self.row)
        data = {k: [v] * len(times) for k, v in base.items()}
        return pd.DataFrame(data, index=range(len(times)))

    def eta_value(self, times, beta, b=None) -> np.ndarray:
        frame = self._frame_at(times)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        b = self.b if b is None else np.asarray(b, float)
        X, _ = design_at_times(frame, times, self.fixed, self.splines, self.factor_levels)
        Z, _ = design_at_times(frame, times, self.random, self.splines, self.factor_levels)
        return X @ np.asarray(beta, float) + Z @ b

    def eta_extra(self, times, beta, extra: ExtraForm, b=None) -> np.ndarray:
        frame = self._frame_at(times)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        b = self.b if b is None else np.asarray(b, float)
        Xe, _ = design_at_times(frame, times, extra.fixed, self.splines, self.factor_levels)
        Ze, _ = design_at_times(frame, times, extra.random, self.splines, self.factor_levels)
        beta = np.asarray(beta, float)
        bf = beta[[i - 1 for i in extra.ind_fixed]]
        br = b[[i - 1 for i in extra.ind_random]]
        return Xe @ bf + Ze @ br


def association_features(t, beta, b, spec: AssociationSpec,
                         subject: SubjectState) -> np.ndarray:
    """The vector multiplying alpha in the log hazard at time t."""
    b = np.asarray(b, dtype=float)
    if spec.kind == "shared_re":
        return b
    if spec.kind == "shared_betas_re":
        beta = np.asarray(beta, dtype=float)
        pos = list(subject.random_in_fixed)
        if len(pos) != len(b):
            raise InvalidSpecError("random-effect positions in the fixed effects are unset")
        return beta[pos] + b
    parts = []
    if spec.kind in ("td_value", "td_both"):
        eta = float(subject.eta_value(t, beta, b)[0])
        parts.append(apply_features(eta, spec.transform_value, subject.row))
    if spec.kind in ("td_extra", "td_both"):
        eta_e = float(subject.eta_extra(t, beta, spec.extra_form, b)[0])
        parts.append(apply_features(eta_e, spec.transform_extra, subject.row))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# hazard, survival, event density

@dataclass
class SurvParams:
    """Parameter bundle for hazard evaluation."""

    beta: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    baseline: BaselineHazard
    association: AssociationSpec


def log_hazard(t, subject: SubjectState, params: SurvParams) -> float:
    f = association_features(t, params.beta, subject.b, params.association, subject)
    return (float(log_baseline_hazard(float(t), params.baseline))
            + float(np.dot(params.gamma, subject.w))
            + float(np.dot(params.alpha, f)))


def _hazard_on_nodes(times, subject: SubjectState, params: SurvParams) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    base = bspline_design(times, params.baseline.knots) @ params.baseline.gammas_h0
    fixed_part = float(np.dot(params.gamma, subject.w))
    spec = params.association
    if spec.kind in ("shared_re", "shared_betas_re"):
        f = association_features(0.0, params.beta, subject.b, spec, subject)
        assoc = np.full(times.shape, float(np.dot(params.alpha, f)))
    else:
        cols = []
        if spec.kind in ("td_value", "td_both"):
            eta = subject.eta_value(times, params.beta)
            cols.extend(np.array([apply_features(e, spec.transform_value, subject.row)
                                  for e in eta]).T)
        if spec.kind in ("td_extra", "td_both"):
            eta_e = subject.eta_extra(times, params.beta, spec.extra_form)
            cols.extend(np.array([apply_features(e, spec.transform_extra, subject.row)
                                  for e in eta_e]).T)
        F = np.vstack(cols)  # (n_alpha, n_times)
        assoc = params.alpha @ F
    return base + fixed_part + assoc


def cumulative_hazard(t, subject: SubjectState, params: SurvParams,
                      rule: QuadratureRule | None = None) -> float:
    """Integral of the hazard on [0, t], single quadrature panel."""
    t = float(t)
    if t < 0:
        raise InvalidSpecError("t must be >= 0")
    if t == 0.0:
        return 0.0
    rule = rule or gauss_kronrod(15)
    nodes = 0.5 * t * (rule.nodes + 1.0)
    logh = _hazard_on_nodes(nodes, subject, params)
    with np.errstate(over="raise"):
        try:
            vals = np.exp(logh)
        except FloatingPointError:
            raise NumericError(f"hazard overflow inside [0, {t}]")
    return float(0.5 * t * np.dot(rule.weights, vals))


def survival_function(t, subject: SubjectState, params: SurvParams,
                      rule: QuadratureRule | None = None) -> float:
    H = cumulative_hazard(t, subject, params, rule)
    if not np.isfinite(H):
        raise NumericError(f"nonfinite cumulative hazard at t={t}")
    return float(np.exp(-H))


def log_density_event(T, delta, subject: SubjectState, params: SurvParams,
                      rule: QuadratureRule | None = None) -> float:
    if T <= 0:
        raise InvalidSpecError("event time must be positive")
    out = -cumulative_hazard(T, subject, params, rule)
    if delta:
        out += log_hazard(T, subject, params)
    return float(out)


# ---------------------------------------------------------------------------
# Cox partial-likelihood initializer (start-stop expansion, Breslow ties)

@dataclass
class CoxFit:
    coef: np.ndarray
    cov: np.ndarray
    converged: bool
    monotone_flag: bool
    names: list = field(default_factory=list)
    dropped: list = field(default_factory=list)


def cox_newton(start, stop, event, X, max_iter: int = 50, tol: float = 1e-9):
    """Newton-Raphson for the Cox partial likelihood on counting-process data."""
    start = np.asarray(start, float)
    stop = np.asarray(stop, float)
    event = np.asarray(event, float)
    X = np.asarray(X, float)
    n, p = X.shape
    if event.sum() < 1:
        raise DataError("need at least one event")
    event_times = np.unique(stop[event == 1])
    beta = np.zeros(p)
    converged = False
    monotone_flag = False
    for _ in range(max_iter):
        grad = np.zeros(p)
        hess = np.zeros((p, p))
        eta = X @ beta
        w = np.exp(eta - eta.max())
        loglik = 0.0
        for et in event_times:
            at_risk = (start < et) & (stop >= et)
            dead = (stop == et) & (event == 1)
            rw = w[at_risk]
            rX = X[at_risk]
            s0 = rw.sum()
            s1 = rX.T @ rw
            s2 = (rX * rw[:, None]).T @ rX
            d = int(dead.sum())
            grad += X[dead].sum(axis=0) - d * s1 / s0
            hess += d * (s2 / s0 - np.outer(s1, s1) / s0**2)
            loglik += eta[dead].sum() - d * (np.log(s0) + eta.max())
        try:
            step = np.linalg.solve(hess + 1e-10 * np.eye(p), grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(beta)) > 15.0:
            monotone_flag = True
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    cov = np.linalg.inv(hess + 1e-10 * np.eye(p)) if np.all(np.isfinite(hess)) else np.eye(p)
    return beta, cov, converged, monotone_flag


def fit_cox_init(surv: SurvTable, W: np.ndarray, w_names: list,
                 td_steps: dict | None = None, td_names: list | None = None) -> CoxFit:
    """Two-stage initializer: Cox model with the longitudinal fit as a
    time-dependent covariate via start-stop expansion at measurement times.

    td_steps maps subject id -> (times, values[n_times, k]) step functions
    (last value carried forward).  Columns that are identically zero are
    dropped and reported with zero coefficients.
    """
    T = surv.times()
    delta = surv.events()
    subjects = surv.subjects
    td_names = td_names or []
    k = len(td_names)
    rows_start, rows_stop, rows_event, rows_X = [], [], [], []
    for i, sid in enumerate(subjects):
        base = W[i]
        if td_steps is None or sid not in td_steps:
            cuts = np.array([0.0])
            vals = np.zeros((1, k))
        else:
            cuts, vals = td_steps[sid]
            cuts = np.asarray(cuts, float)
            vals = np.asarray(vals, float).reshape(len(cuts), k)
            keep = cuts < T[i]
            cuts, vals = cuts[keep], vals[keep]
            if cuts.size == 0 or cuts[0] > 0.0:
                cuts = np.concatenate([[0.0], cuts])
                vals = np.vstack([vals[:1] if vals.size else np.zeros((1, k)), vals])
        edges = np.concatenate([cuts, [T[i]]])
        for j in range(len(cuts)):
            if edges[j] >= edges[j + 1]:
                continue
            rows_start.append(edges[j])
            rows_stop.append(edges[j + 1])
            rows_event.append(delta[i] if j == len(cuts) - 1 else 0.0)
            rows_X.append(np.concatenate([base, vals[j]]))
    X = np.asarray(rows_X, float)
    names = list(w_names) + list(td_names)
    nonzero = ~np.all(X == 0.0, axis=0)
    dropped = [nm for nm, keep in zip(names, nonzero) if not keep]
    Xr = X[:, nonzero]
    try:
        beta_r, cov_r, converged, monotone = cox_newton(
            rows_start, rows_stop, rows_event, Xr)
    except np.linalg.LinAlgError:
        converged, monotone = False, False
        beta_r = np.zeros(Xr.shape[1])
        cov_r = np.eye(Xr.shape[1])
    if not converged and not monotone:
        log.warning("Cox initializer did not converge; falling back to zero "
                    "init with identity-scaled proposal")
        beta_r = np.zeros(Xr.shape[1])
        cov_r = np.eye(Xr.shape[1])
    coef = np.zeros(len(names))
    cov = np.eye(len(names)) * 0.1
    idx = np.nonzero(nonzero)[0]
    coef[idx] = beta_r
    cov[np.ix_(idx, idx)] = cov_r
    return CoxFit(coef=coef, cov=cov, converged=converged,
                  monotone_flag=monotone, names=names, dropped=dropped)
