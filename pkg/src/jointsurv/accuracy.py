"""Predictive-performance metrics for fitted joint models.

Kaplan-Meier estimation, time-dependent AUC with censoring-weighted
pairs, a dynamic concordance index that averages AUCs over follow-up,
prediction error at a horizon with the Henderson censoring correction,
its integrated version, and a subject-level cross-validation harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .basis import gauss_kronrod
from .errors import DataError, InvalidIntervalError, InvalidSpecError
from .longitudinal import LongTable
from .model import FittedJointModel, fit_joint_model
from .prediction import NewSubjectData, survfit_dynamic
from .survival import SurvTable

__all__ = [
    "KMCurve", "MetricReport", "kaplan_meier", "auc_dynamic",
    "dyn_c_index", "pred_err", "int_pred_err", "cross_validate",
]


# ---------------------------------------------------------------------------
# Kaplan-Meier

@dataclass
class KMCurve:
    """Product-limit step function: right-continuous, S(0) = 1."""

    times: np.ndarray        # distinct event times, ascending
    surv: np.ndarray         # S at each step
    n_risk: np.ndarray
    n_event: np.ndarray

    def at(self, t) -> np.ndarray:
        """S(t), vectorized; 1 before the first step."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.times.size == 0:
            return np.ones_like(t)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.where(idx >= 0, self.surv[np.clip(idx, 0, None)], 1.0)


def kaplan_meier(times, status) -> KMCurve:
    """Product-limit estimator; pass 1 - status for the censoring
    distribution."""
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=float)
    if np.any(times <= 0):
        raise DataError("observation times must be positive")
    if times.shape != status.shape:
        raise DataError("times and status must have equal length")
    uniq = np.unique(times[status == 1])
    s = 1.0
    surv, n_risk, n_event = [], [], []
    for et in uniq:
        r = int(np.sum(times >= et))
        d = int(np.sum((times == et) & (status == 1)))
        s *= 1.0 - d / r
        surv.append(s)
        n_risk.append(r)
        n_event.append(d)
    return KMCurve(times=uniq, surv=np.array(surv),
                   n_risk=np.array(n_risk), n_event=np.array(n_event))


# ---------------------------------------------------------------------------
# metric report

@dataclass
class MetricReport:
    name: str
    value: float
    Tstart: float
    Thoriz: float | None = None
    Dt: float | None = None
    n_at_risk: int | None = None
    loss: str | None = None
    per_node: dict = field(default_factory=dict)

    def __str__(self):
        lines = [f"Estimated {self.name}: {self.value:.4g}"]
        if self.Thoriz is not None:
            lines.append(f"At time: {self.Thoriz:g}")
        if self.Dt is not None:
            lines.append(f"Length of time interval: {self.Dt:g}")
        extra = (f" ({self.n_at_risk} subjects still at risk)"
                 if self.n_at_risk is not None else "")
        lines.append(f"Using information up to time: {self.Tstart:g}{extra}")
        if self.loss is not None:
            lines.append(f"Loss function: {self.loss}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# per-subject conditional survival probabilities

def _subject_data(long: LongTable, surv: SurvTable, sid, t_data: float,
                  t_cond: float) -> NewSubjectData:
    """History of one subject truncated at t_data, survival conditioning
    at t_cond."""
    lf = long.frame
    rows = lf[(lf[long.subject_col] == sid)
              & (lf[long.time_col] <= t_data + 1e-12)]
    rows = rows.drop(columns=[long.subject_col]).reset_index(drop=True)
    srow = surv.frame[surv.frame[surv.subject_col] == sid].iloc[0]
    baseline = {k: srow[k] for k in surv.frame.columns
                if k not in (surv.subject_col, surv.time_col,
                             surv.event_col)}
    return NewSubjectData(rows, time_col=long.time_col,
                          response_col=long.response_col,
                          baseline=baseline, last_known_alive=t_cond)


def _pi(model: FittedJointModel, long, surv, sid, t_data, t_cond, u,
        mode, M, seed) -> float:
    """pi(u | t_cond) for one subject, using measurements up to t_data."""
    subj = _subject_data(long, surv, sid, t_data, t_cond)
    res = survfit_dynamic(model, subj, times=[u], M=M, mode=mode, seed=seed)
    return float(res.mean[-1])


def _seeds(seed, n):
    if seed is None:
        return [None] * n
    return list(np.random.SeedSequence(seed).generate_state(n))


# ---------------------------------------------------------------------------
# time-dependent AUC

def auc_dynamic(model: FittedJointModel, long: LongTable, surv: SurvTable,
                Tstart: float, Dt: float | None = None,
                Thoriz: float | None = None, mode: str = "first_order",
                M: int = 200, seed: int | None = None,
                tie_credit: float = 0.0) -> MetricReport:
    """AUC(t, t + Dt): probability that a subject with the event inside
    (t, t + Dt] receives a lower predicted survival than a subject still
    event-free at t + Dt.  Pairs broken by censoring are weighted by the
    probability 1 - pi_i(t + Dt | T_i) that they would be comparable."""
    if Thoriz is None:
        if Dt is None:
            raise InvalidSpecError("need Dt or Thoriz")
        Thoriz = Tstart + Dt
    if Thoriz <= Tstart:
        raise InvalidIntervalError("horizon must exceed Tstart")
    T = surv.times()
    delta = surv.events()
    ids = np.array(surv.subjects, dtype=object)
    at_risk = T >= Tstart
    if not at_risk.any():
        raise DataError(f"no subjects at risk at {Tstart}")
    idx = np.nonzero(at_risk)[0]
    seeds = _seeds(seed, 2 * len(idx))
    pi = np.full(len(T), np.nan)
    for j, i in enumerate(idx):
        pi[i] = _pi(model, long, surv, ids[i], Tstart, Tstart, Thoriz,
                    mode, M, seeds[j])

    cases = at_risk & (T > Tstart) & (T <= Thoriz) & (delta == 1)
    cens = at_risk & (T > Tstart) & (T <= Thoriz) & (delta == 0)
    ctrls = T > Thoriz

    nu = np.zeros(len(T))
    for j, i in enumerate(np.nonzero(cens)[0]):
        nu[i] = 1.0 - _pi(model, long, surv, ids[i], Tstart, T[i], Thoriz,
                          mode, M, seeds[len(idx) + j])

    def count(case_mask, w):
        num = den = 0.0
        for i in np.nonzero(case_mask)[0]:
            for j in np.nonzero(ctrls)[0]:
                if i == j:
                    continue
                conc = (1.0 if pi[i] < pi[j]
                        else (tie_credit if pi[i] == pi[j] else 0.0))
                num += conc * w[i]
                den += w[i]
        return num, den

    num1, den1 = count(cases, np.ones(len(T)))
    num2, den2 = count(cens, nu)
    den = den1 + den2
    if den <= 0:
        raise DataError("no comparable or weightable subject pairs")
    value = (num1 + num2) / den
    return MetricReport(name="AUC", value=value, Tstart=Tstart,
                        Thoriz=Thoriz, Dt=Thoriz - Tstart,
                        n_at_risk=int(at_risk.sum()))


def dyn_c_index(model: FittedJointModel, long: LongTable, surv: SurvTable,
                Dt: float, t_max: float | None = None,
                mode: str = "first_order", M: int = 200,
                seed: int | None = None) -> MetricReport:
    """Weighted average of AUC(t, Dt) over t in [0, t_max] with
    Kaplan-Meier weights {S(t) - S(t + Dt)} S(t + Dt) on the 15-point
    Gauss-Kronrod abscissas."""
    T = surv.times()
    delta = surv.events()
    t_max = float(T.max()) if t_max is None else float(t_max)
    if t_max <= 0:
        raise InvalidIntervalError("follow-up interval is empty")
    rule = gauss_kronrod(15)
    nodes = 0.5 * t_max * (rule.nodes + 1.0)
    km = kaplan_meier(T, delta)
    S_t = km.at(nodes)
    S_u = km.at(nodes + Dt)
    pr = (S_t - S_u) * S_u

    num = den = 0.0
    per_node = {}
    seeds = _seeds(seed, len(nodes))
    for k, t in enumerate(nodes):
        if pr[k] <= 0:
            continue
        try:
            auc_k = auc_dynamic(model, long, surv, Tstart=float(t), Dt=Dt,
                                mode=mode, M=M, seed=seeds[k]).value
        except DataError:
            continue
        per_node[float(t)] = auc_k
        num += rule.weights[k] * auc_k * pr[k]
        den += rule.weights[k] * pr[k]
    if den <= 0:
        raise DataError("no usable quadrature nodes for the dynamic C index")
    return MetricReport(name="dynC", value=num / den, Tstart=0.0,
                        Thoriz=t_max, Dt=Dt, per_node=per_node)


# ---------------------------------------------------------------------------
# prediction error

_LOSSES = {"square": lambda x: x ** 2, "absolute": lambda x: np.abs(x)}


def pred_err(model: FittedJointModel, long: LongTable, surv: SurvTable,
             Tstart: float, Thoriz: float, loss="square",
             mode: str = "first_order", M: int = 200,
             seed: int | None = None) -> MetricReport:
    """Expected loss of predicting the event status at Thoriz from
    information up to Tstart; censored-in-window subjects contribute the
    mixture of both outcomes weighted by pi_i(Thoriz | T_i)."""
    if Thoriz <= Tstart:
        raise InvalidIntervalError("Thoriz must exceed Tstart")
    loss_name = loss if isinstance(loss, str) else "custom"
    if isinstance(loss, str) and loss not in _LOSSES:
        raise InvalidSpecError(f"unknown loss {loss!r}")
    L = _LOSSES[loss] if isinstance(loss, str) else loss

    T = surv.times()
    delta = surv.events()
    ids = np.array(surv.subjects, dtype=object)
    at_risk = np.nonzero(T >= Tstart)[0]
    if at_risk.size == 0:
        raise DataError(f"no subjects at risk at {Tstart}")
    seeds = _seeds(seed, 2 * at_risk.size)

    total = 0.0
    for j, i in enumerate(at_risk):
        pi_u = _pi(model, long, surv, ids[i], Tstart, Tstart, Thoriz,
                   mode, M, seeds[j])
        if T[i] >= Thoriz:
            total += L(1.0 - pi_u)
        elif delta[i] == 1:
            total += L(0.0 - pi_u)
        else:
            pi_cond = _pi(model, long, surv, ids[i], Tstart, T[i], Thoriz,
                          mode, M, seeds[at_risk.size + j])
            total += pi_cond * L(1.0 - pi_u) + (1.0 - pi_cond) * L(0.0 - pi_u)
    return MetricReport(name="prediction error", value=total / at_risk.size,
                        Tstart=Tstart, Thoriz=Thoriz,
                        n_at_risk=int(at_risk.size), loss=loss_name)


def int_pred_err(model: FittedJointModel, long: LongTable, surv: SurvTable,
                 Tstart: float, Thoriz: float, loss="square",
                 mode: str = "first_order", M: int = 200,
                 seed: int | None = None) -> MetricReport:
    """Censoring-weighted average of PE(T_i | Tstart) over event times in
    [Tstart, Thoriz], weights S_C(Tstart) / S_C(T_i) from the
    Kaplan-Meier estimate of the censoring distribution."""
    if Thoriz <= Tstart:
        raise InvalidIntervalError("Thoriz must exceed Tstart")
    T = surv.times()
    delta = surv.events()
    km_c = kaplan_meier(T, 1.0 - delta)
    sel = np.nonzero((delta == 1) & (T >= Tstart) & (T <= Thoriz))[0]
    if sel.size == 0:
        raise DataError("no events inside the integration window")
    sc_t = float(km_c.at(Tstart)[0])
    num = den = 0.0
    for i in sel:
        sc_i = float(km_c.at(T[i])[0])
        if sc_i <= 0:
            continue
        w = sc_t / sc_i
        pe_i = pred_err(model, long, surv, Tstart, float(T[i]), loss=loss,
                        mode=mode, M=M, seed=seed).value
        num += w * pe_i
        den += w
    if den <= 0:
        raise DataError("all integration weights vanished")
    n_risk = int(np.sum(T >= Tstart))
    loss_name = loss if isinstance(loss, str) else "custom"
    return MetricReport(name="prediction error", value=num / den,
                        Tstart=Tstart, Thoriz=Thoriz, n_at_risk=n_risk,
                        loss=loss_name)


# ---------------------------------------------------------------------------
# cross-validation

def _subset(long: LongTable, surv: SurvTable, keep):
    keep = set(keep)
    lt = LongTable(long.frame[long.frame[long.subject_col].isin(keep)]
                   .reset_index(drop=True), subject_col=long.subject_col,
                   time_col=long.time_col, response_col=long.response_col,
                   factor_levels=dict(long.factor_levels))
    st = SurvTable(surv.frame[surv.frame[surv.subject_col].isin(keep)]
                   .reset_index(drop=True), subject_col=surv.subject_col,
                   time_col=surv.time_col, event_col=surv.event_col,
                   factor_levels=dict(surv.factor_levels))
    return lt, st


def cross_validate(long: LongTable, surv: SurvTable, spec, folds: int = 10,
                   Tstart: float = None, Thoriz: float = None,
                   Dt: float | None = None, metrics=("auc", "pe"),
                   mode: str = "first_order", M: int = 200,
                   seed: int | None = None) -> dict:
    """Subject-level V-fold cross-validation: fit on the training split,
    score AUC / prediction error on the held-out subjects, average."""
    if folds < 2:
        raise InvalidSpecError("need at least 2 folds")
    subjects = np.array(surv.subjects, dtype=object)
    n = len(subjects)
    if folds > n:
        raise InvalidSpecError("more folds than subjects")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignments = np.array_split(perm, folds)

    per_fold = {m: [] for m in metrics}
    splits = []
    for f, test_idx in enumerate(assignments):
        test_ids = set(subjects[test_idx])
        train_ids = [s for s in subjects if s not in test_ids]
        splits.append((sorted(train_ids, key=str),
                       sorted(test_ids, key=str)))
        lt_tr, st_tr = _subset(long, surv, train_ids)
        lt_te, st_te = _subset(long, surv, test_ids)
        fitted = fit_joint_model(lt_tr, st_tr, spec,
                                 model_id=f"cv-fold-{f + 1}")
        for m in metrics:
            try:
                if m == "auc":
                    rep = auc_dynamic(fitted, lt_te, st_te, Tstart=Tstart,
                                      Dt=Dt, Thoriz=Thoriz, mode=mode,
                                      M=M, seed=seed)
                elif m == "pe":
                    rep = pred_err(fitted, lt_te, st_te, Tstart=Tstart,
                                   Thoriz=(Thoriz if Thoriz is not None
                                           else Tstart + Dt),
                                   mode=mode, M=M, seed=seed)
                else:
                    raise InvalidSpecError(f"unknown metric {m!r}")
            except DataError:
                continue
            per_fold[m].append(rep.value)

    out = {"folds": folds, "splits": splits, "per_fold": per_fold}
    for m in metrics:
        vals = per_fold[m]
        out[m] = float(np.mean(vals)) if vals else float("nan")
    return out
