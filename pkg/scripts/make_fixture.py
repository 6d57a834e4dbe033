"""Generate the bundled demonstration cohort.

Simulates a 312-subject cohort from a joint model whose parameters match
the published Mayo Clinic primary biliary cirrhosis analysis (log serum
bilirubin trajectory with a natural cubic time spline, treatment and age
in the hazard, time-dependent-value association).  The real cohort is
not redistributable here, so this synthetic stand-in is calibrated to
the same descriptives: 312 subjects, 1945 longitudinal rows, 169 events,
roughly 200 subjects still at risk at year 5, and maximum follow-up
14.3057 years.  Censoring mimics staggered study entry (uniform on
[4, 18] years, capped administratively) and scheduled visits after
baseline are each missed with fixed probability.

Run from the repository root:

    python3 scripts/make_fixture.py

Writes src/jointsurv/datasets/pbc_long.csv and pbc_surv.csv.
"""

import os
import sys

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from jointsurv.basis import gauss_kronrod, natural_cubic_basis  # noqa: E402

# trajectory: log serum bilirubin ~ intercept + 2-df natural spline of year
BETA = np.array([0.48, 2.32, 2.24])
RE_SD = np.array([1.0067, 2.3131, 2.2224])
RE_CORR = np.array([[1.0, .3482, .3250],
                    [.3482, 1.0, .5457],
                    [.3250, .5457, 1.0]])
D = RE_SD[:, None] * RE_CORR * RE_SD[None, :]
SIGMA = 0.302

# hazard: h0 exp(g_d drug + g_a (age-49) + g_da drug (age-49) + alpha m(t))
ALPHA = 1.55
G_DRUG, G_AGE, G_INT = -0.67, 0.040, 0.012
LOG_H0 = -4.35
AGE_MEAN, AGE_SD = 49.0, 10.0
# unobserved per-subject frailty: real event risk is not fully explained
# by the biomarker, so predictive accuracy should not be perfect
FRAILTY_SD = 0.9

TMAX = 14.3057
N = 312
BOUNDARY = (0.0, TMAX)
INTERIOR = (2.0,)
CENS_LO, CENS_HI = 4.0, 18.0   # staggered-entry censoring, capped at TMAX
P_KEEP = 0.72                  # retention probability per scheduled visit
SCHED = np.concatenate([[0.0, 0.5], np.arange(1.0, 15.0)])

TARGET_EVENTS = 169
TARGET_ROWS = 1945

RULE = gauss_kronrod(15)
NODES = np.asarray(RULE.nodes)
WTS = np.asarray(RULE.weights)


def cum_hazard(t, b, lin):
    """H_i(t_i) for per-subject horizons t (vectorized over subjects)."""
    ts = 0.5 * t[:, None] * (NODES[None, :] + 1.0)
    X = natural_cubic_basis(ts.ravel(), 2, BOUNDARY, INTERIOR)
    X = np.column_stack([np.ones(X.shape[0]), X]).reshape(len(t), 15, 3)
    m = X @ BETA + np.einsum("nkj,nj->nk", X, b)
    integrand = np.exp(LOG_H0 + lin[:, None] + ALPHA * m)
    return 0.5 * t * (integrand @ WTS)


def simulate(seed):
    rng = np.random.default_rng(seed)
    drug = rng.binomial(1, 0.5, N).astype(float)
    age = rng.normal(AGE_MEAN, AGE_SD, N)
    b = rng.multivariate_normal(np.zeros(3), D, N)
    lin = (G_DRUG * drug + G_AGE * (age - AGE_MEAN)
           + G_INT * drug * (age - AGE_MEAN)
           + rng.normal(0.0, FRAILTY_SD, N))
    u = rng.exponential(size=N)

    beyond = cum_hazard(np.full(N, TMAX), b, lin) < u
    lo, hi = np.zeros(N), np.full(N, TMAX)
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        less = cum_hazard(mid, b, lin) < u
        lo = np.where(less, mid, lo)
        hi = np.where(less, hi, mid)
    t_event = np.where(beyond, np.inf, 0.5 * (lo + hi))

    c = np.minimum(TMAX, rng.uniform(CENS_LO, CENS_HI, N))
    T = np.minimum(t_event, c)
    delta = (t_event <= c).astype(float)
    keep = rng.uniform(size=(N, len(SCHED))) < P_KEEP
    keep[:, 0] = True          # baseline visit always observed
    return drug, age, b, lin, T, delta, keep, rng


def visit_times(T_i, keep_i):
    v = SCHED[keep_i & (SCHED < T_i)]
    return v if v.size else np.array([0.0])


def count_rows(T, keep):
    return int(sum(len(visit_times(T[i], keep[i])) for i in range(N)))


def balance_rows(T, delta, keep):
    """Nudge censored follow-up times across visit boundaries until the
    longitudinal row count matches the target exactly."""
    T = T.copy()
    rows = count_rows(T, keep)
    tmax_idx = int(np.argmax(T))
    order = np.argsort(-T)
    for i in order:
        if rows == TARGET_ROWS:
            break
        if delta[i] == 1 or i == tmax_idx:
            continue
        kept = SCHED[keep[i]]
        below = kept[kept < T[i]]
        above = kept[kept >= T[i]]
        if rows > TARGET_ROWS and len(below) > 1:
            T[i] = below[-1] - 0.01
            rows -= 1
        elif rows < TARGET_ROWS and len(above) and above[0] < TMAX:
            T[i] = above[0] + 0.01
            rows += 1
    assert rows == TARGET_ROWS, f"could not balance rows ({rows})"
    return T


def find_seed():
    for seed in range(1, 8000):
        drug, age, b, lin, T, delta, keep, rng = simulate(seed)
        ev, rows = int(delta.sum()), count_rows(T, keep)
        if ev == TARGET_EVENTS and abs(rows - TARGET_ROWS) <= 25:
            print(f"seed {seed}: events={ev} rows={rows} "
                  f"at_risk_5={int((T >= 5).sum())}")
            return seed
    raise AssertionError("no seed matched the targets")


def build(chosen):
    drug, age, b, lin, T, delta, keep, rng = simulate(chosen)
    T = balance_rows(T, delta, keep)

    long_rows = []
    for i in range(N):
        visits = visit_times(T[i], keep[i])
        X = natural_cubic_basis(visits, 2, BOUNDARY, INTERIOR)
        X = np.column_stack([np.ones(len(visits)), X])
        m = X @ (BETA + b[i])
        y = m + rng.normal(0.0, SIGMA, len(visits))
        for t, yv in zip(visits, y):
            long_rows.append({"id": i + 1, "year": round(float(t), 4),
                              "logBili": round(float(yv), 4),
                              "drug": int(drug[i]),
                              "age": round(float(age[i]), 2)})

    long_frame = pd.DataFrame(long_rows)
    surv_frame = pd.DataFrame({
        "id": np.arange(1, N + 1),
        "years": np.round(T, 4),
        "status": delta.astype(int),
        "drug": drug.astype(int),
        "age": np.round(age, 2),
    })
    return long_frame, surv_frame


def main():
    long_frame, surv_frame = build(find_seed())
    here = os.path.join(os.path.dirname(__file__), "..", "src", "jointsurv",
                        "datasets")
    os.makedirs(here, exist_ok=True)
    long_frame.to_csv(os.path.join(here, "pbc_long.csv"), index=False)
    surv_frame.to_csv(os.path.join(here, "pbc_surv.csv"), index=False)
    T = surv_frame["years"].to_numpy()
    print(f"subjects={N} rows={len(long_frame)} "
          f"events={int(surv_frame['status'].sum())} maxT={T.max():.4f} "
          f"at_risk_5={int((T >= 5).sum())}")


if __name__ == "__main__":
    main()
