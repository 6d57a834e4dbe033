"""Command-line interface.

Subcommands map one-to-one onto package operations: fit, summary,
survfit, predict, auc, dync, prederr, bma, cv, simulate, serve,
diagnostics.  Exit codes: 0 success, 2 usage/configuration error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import pandas as pd

from ..errors import (ArtifactError, DataError, InvalidIntervalError,
                      InvalidKnotsError, InvalidSpecError, NumericError)
from ..model import fit_joint_model, workspace_for
from ..prediction import (NewSubjectData, bma_combine, bma_weights,
                          predict_longitudinal, subject_marginal_loglik,
                          survfit_dynamic)
from .artifact import load_model, save_model
from .config import config_to_spec, parse_config
from .readers import check_alignment, read_long_csv, read_surv_csv

USAGE_ERRORS = (InvalidSpecError, InvalidIntervalError, InvalidKnotsError)


def _read_config(path: str):
    with open(path) as fh:
        return parse_config(fh.read())


def _load_tables(cfg, long_path, surv_path):
    long = read_long_csv(long_path, subject_col=cfg.subject_col,
                         time_col=cfg.time_col,
                         response_col=cfg.response_col)
    surv = read_surv_csv(surv_path, subject_col=cfg.subject_col,
                         time_col=cfg.surv_time_col,
                         event_col=cfg.surv_event_col)
    check_alignment(long, surv)
    return long, surv


def _new_subject(model, path, last_alive=None) -> NewSubjectData:
    cols = model.columns
    rows = pd.read_csv(path)
    subject_col = cols.get("subject", "id")
    if subject_col in rows.columns:
        ids = rows[subject_col].unique()
        if len(ids) > 1:
            raise DataError("new-data file must describe one subject")
        rows = rows.drop(columns=[subject_col])
    return NewSubjectData(rows, time_col=cols.get("time", "time"),
                          response_col=cols.get("response", "y"),
                          last_known_alive=last_alive)


def _print_result(res):
    frame = res.to_frame()
    print(frame.to_string(index=False,
                          float_format=lambda v: f"{v:.4f}"))


def cmd_fit(args):
    cfg = _read_config(args.config)
    spec = config_to_spec(cfg)
    long, surv = _load_tables(cfg, args.long, args.surv)
    model = fit_joint_model(long, surv, spec, model_id=args.model_id)
    if args.evidence:
        from ..posterior import marginal_loglik_laplace
        ws = workspace_for(model, long, surv)
        model.init_meta["log_evidence"] = marginal_loglik_laplace(
            model.draws, ws, spec.priors)
    for w in model.draws.warnings:
        print(f"warning: {w}", file=sys.stderr)
    save_model(model, args.out)
    print(f"saved model {model.model_id!r} to {args.out}")
    return 0


def cmd_summary(args):
    from ..posterior import summarize
    model = load_model(args.model)
    tab = summarize(model.draws, include_h0=args.h0)
    print(f"Joint model {model.model_id!r}")
    print(f"Number of subjects: {model.fingerprint.get('n_subjects')}")
    print(f"Number of observations: {model.fingerprint.get('n_long_rows')}")
    print()
    print(tab.to_string(float_format=lambda v: f"{v:.4f}"))
    return 0


def cmd_survfit(args):
    model = load_model(args.model)
    subj = _new_subject(model, args.newdata, args.last_alive)
    times = np.array(args.times, dtype=float) if args.times else None
    res = survfit_dynamic(model, subj, times=times, M=args.M,
                          mode=args.mode, seed=args.seed)
    _print_result(res)
    return 0


def cmd_predict(args):
    model = load_model(args.model)
    subj = _new_subject(model, args.newdata, args.last_alive)
    res = predict_longitudinal(model, subj, np.array(args.times, float),
                               type=args.type, interval=args.interval,
                               M=args.M, seed=args.seed)
    _print_result(res)
    return 0


def cmd_auc(args):
    from ..accuracy import auc_dynamic
    model = load_model(args.model)
    cfg_cols = model.columns
    long = read_long_csv(args.long, subject_col=cfg_cols["subject"],
                         time_col=cfg_cols["time"],
                         response_col=cfg_cols["response"])
    surv = read_surv_csv(args.surv, subject_col=cfg_cols["subject"],
                         time_col=cfg_cols["surv_time"],
                         event_col=cfg_cols["surv_event"])
    rep = auc_dynamic(model, long, surv, Tstart=args.tstart, Dt=args.dt,
                      Thoriz=args.thoriz, mode=args.mode, M=args.M,
                      seed=args.seed)
    print(rep)
    return 0


def cmd_dync(args):
    from ..accuracy import dyn_c_index
    model = load_model(args.model)
    cols = model.columns
    long = read_long_csv(args.long, subject_col=cols["subject"],
                         time_col=cols["time"],
                         response_col=cols["response"])
    surv = read_surv_csv(args.surv, subject_col=cols["subject"],
                         time_col=cols["surv_time"],
                         event_col=cols["surv_event"])
    rep = dyn_c_index(model, long, surv, Dt=args.dt, mode=args.mode,
                      M=args.M, seed=args.seed)
    print(rep)
    return 0


def cmd_prederr(args):
    from ..accuracy import int_pred_err, pred_err
    model = load_model(args.model)
    cols = model.columns
    long = read_long_csv(args.long, subject_col=cols["subject"],
                         time_col=cols["time"],
                         response_col=cols["response"])
    surv = read_surv_csv(args.surv, subject_col=cols["subject"],
                         time_col=cols["surv_time"],
                         event_col=cols["surv_event"])
    fn = int_pred_err if args.interval else pred_err
    rep = fn(model, long, surv, Tstart=args.tstart, Thoriz=args.thoriz,
             loss=args.loss, mode=args.mode, M=args.M, seed=args.seed)
    print(rep)
    return 0


def cmd_bma(args):
    models = [load_model(p) for p in args.models]
    subj_ev, data_ev = [], []
    for m in models:
        subj = _new_subject(m, args.newdata, args.last_alive)
        subj_ev.append(subject_marginal_loglik(m, subj))
        ev = m.init_meta.get("log_evidence")
        if ev is None:
            raise DataError(
                f"model {m.model_id!r} lacks a stored data evidence; "
                "refit with --evidence")
        data_ev.append(float(ev))
    w = bma_weights(subj_ev, data_ev)
    results = []
    times = np.array(args.times, dtype=float) if args.times else None
    for m in models:
        subj = _new_subject(m, args.newdata, args.last_alive)
        results.append(survfit_dynamic(m, subj, times=times, M=args.M,
                                       mode=args.mode, seed=args.seed))
    combined = bma_combine(results, w)
    for m, wk in zip(models, w):
        print(f"weight {m.model_id}: {wk:.4f}")
    _print_result(combined)
    return 0


def cmd_cv(args):
    from ..accuracy import cross_validate
    cfg = _read_config(args.config)
    spec = config_to_spec(cfg)
    long, surv = _load_tables(cfg, args.long, args.surv)
    out = cross_validate(long, surv, spec, folds=args.folds,
                         Tstart=args.tstart, Thoriz=args.thoriz,
                         Dt=args.dt, mode=args.mode, M=args.M,
                         seed=args.seed)
    for m in ("auc", "pe"):
        if m in out:
            print(f"cross-validated {m}: {out[m]:.4f} "
                  f"(per fold: {[round(v, 4) for v in out['per_fold'][m]]})")
    return 0


def cmd_simulate(args):
    from .simulate import SimConfig, simulate_joint
    from .config import parse_terms
    with open(args.config) as fh:
        raw = json.load(fh)
    time_col = raw.pop("time_col", "time")
    for key in ("fixed", "random"):
        raw[key] = parse_terms(raw[key], time_col)
    from ..survival import AssociationSpec
    raw["association"] = AssociationSpec(raw.get("association", "td_value"))
    raw["covariates"] = {k: tuple(v) for k, v in raw["covariates"].items()}
    raw["surv_covariates"] = tuple(raw.get("surv_covariates", ()))
    for key in ("beta", "D", "gamma", "alpha", "visit_times", "spline_df"):
        if key in raw:
            raw[key] = tuple(raw[key])
    cfg = SimConfig(**raw)
    long, surv, truth = simulate_joint(cfg, args.seed)
    long.frame.to_csv(args.out_long, index=False)
    surv.frame.to_csv(args.out_surv, index=False)
    print(f"wrote {len(long.frame)} longitudinal rows and "
          f"{len(surv.frame)} survival rows")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app
    app = create_app(args.models)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_diagnostics(args):
    from ..posterior import diagnostics_export
    model = load_model(args.model)
    xs, ys = diagnostics_export(model.draws, args.which, args.param)
    frame = pd.DataFrame({"x": xs, "y": ys})
    if args.out:
        frame.to_csv(args.out, index=False)
        print(f"wrote {len(frame)} rows to {args.out}")
    else:
        print(frame.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="jointsurv",
        description="Bayesian joint models for longitudinal and "
                    "time-to-event data")
    sub = p.add_subparsers(dest="command", required=True)

    def common_pred(sp):
        sp.add_argument("--M", type=int, default=200)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--mode", choices=("mc", "first_order"),
                        default="mc")

    sp = sub.add_parser("fit", help="fit a joint model")
    sp.add_argument("--long", required=True)
    sp.add_argument("--surv", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--model-id", default="model")
    sp.add_argument("--evidence", action="store_true",
                    help="also store the approximate data log evidence")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("summary", help="posterior summary table")
    sp.add_argument("--model", required=True)
    sp.add_argument("--h0", action="store_true",
                    help="include baseline-hazard coefficients")
    sp.set_defaults(func=cmd_summary)

    sp = sub.add_parser("survfit", help="dynamic conditional survival")
    sp.add_argument("--model", required=True)
    sp.add_argument("--newdata", required=True)
    sp.add_argument("--times", type=float, nargs="*", default=None)
    sp.add_argument("--last-alive", type=float, default=None)
    common_pred(sp)
    sp.set_defaults(func=cmd_survfit)

    sp = sub.add_parser("predict", help="longitudinal forecast")
    sp.add_argument("--model", required=True)
    sp.add_argument("--newdata", required=True)
    sp.add_argument("--times", type=float, nargs="+", required=True)
    sp.add_argument("--last-alive", type=float, default=None)
    sp.add_argument("--type", choices=("marginal", "subject"),
                    default="subject")
    sp.add_argument("--interval", choices=("confidence", "prediction"),
                    default="confidence")
    common_pred(sp)
    sp.set_defaults(func=cmd_predict)

    for name, fn in (("auc", cmd_auc), ("dync", cmd_dync)):
        sp = sub.add_parser(name)
        sp.add_argument("--model", required=True)
        sp.add_argument("--long", required=True)
        sp.add_argument("--surv", required=True)
        if name == "auc":
            sp.add_argument("--tstart", type=float, required=True)
            sp.add_argument("--dt", type=float, default=None)
            sp.add_argument("--thoriz", type=float, default=None)
        else:
            sp.add_argument("--dt", type=float, required=True)
        sp.add_argument("--M", type=int, default=200)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--mode", choices=("mc", "first_order"),
                        default="first_order")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("prederr", help="prediction error")
    sp.add_argument("--model", required=True)
    sp.add_argument("--long", required=True)
    sp.add_argument("--surv", required=True)
    sp.add_argument("--tstart", type=float, required=True)
    sp.add_argument("--thoriz", type=float, required=True)
    sp.add_argument("--loss", choices=("square", "absolute"),
                    default="square")
    sp.add_argument("--interval", action="store_true",
                    help="integrated prediction error over the window")
    sp.add_argument("--M", type=int, default=200)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--mode", choices=("mc", "first_order"),
                    default="first_order")
    sp.set_defaults(func=cmd_prederr)

    sp = sub.add_parser("bma", help="model-averaged dynamic survival")
    sp.add_argument("--models", nargs="+", required=True)
    sp.add_argument("--newdata", required=True)
    sp.add_argument("--times", type=float, nargs="*", default=None)
    sp.add_argument("--last-alive", type=float, default=None)
    common_pred(sp)
    sp.set_defaults(func=cmd_bma)

    sp = sub.add_parser("cv", help="cross-validated accuracy metrics")
    sp.add_argument("--long", required=True)
    sp.add_argument("--surv", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--tstart", type=float, required=True)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--thoriz", type=float, default=None)
    sp.add_argument("--M", type=int, default=200)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--mode", choices=("mc", "first_order"),
                    default="first_order")
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("simulate", help="generate synthetic joint data")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-long", required=True)
    sp.add_argument("--out-surv", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("serve", help="HTTP prediction service")
    sp.add_argument("--models", required=True,
                    help="directory of .jmx artifacts")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--host", default="127.0.0.1")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("diagnostics", help="export MCMC diagnostics")
    sp.add_argument("--model", required=True)
    sp.add_argument("--param", required=True)
    sp.add_argument("--which", choices=("trace", "density", "autocorr"),
                    default="trace")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_diagnostics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
