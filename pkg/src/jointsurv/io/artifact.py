"""Model-artifact persistence: versioned structured-text documents.

An artifact is a deterministic JSON document tagged `jmx-1` holding the
model specification (in the configuration grammar), knot vectors, factor
levels, the posterior draws, initialization metadata, and the data
fingerprint.  save -> load -> save is byte-identical; loading yields a
prediction-capable model without the training data.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..basis import KnotVector
from ..errors import ArtifactError
from ..longitudinal import TimeSpline
from ..mcmc import Draws, MCMCControl, PriorSpec
from ..model import FittedJointModel, ModelSpec
from .config import (family_to_text, features_to_text, parse_family,
                     parse_features, parse_terms, terms_to_text)

__all__ = ["save_model", "load_model", "FORMAT_TAG"]

FORMAT_TAG = "jmx-1"


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _spec_payload(spec: ModelSpec, time_col: str) -> dict:
    assoc = spec.association
    out = {
        "fixed": terms_to_text(spec.fixed, time_col),
        "random": terms_to_text(spec.random, time_col),
        "surv": terms_to_text(spec.surv_terms, time_col),
        "family": family_to_text(spec.family),
        "association": assoc.kind,
        "value": features_to_text(assoc.transform_value),
        "extra": features_to_text(assoc.transform_extra),
        "n_basis_h0": spec.n_basis_h0,
        "penalized": spec.penalized,
        "penalty_order": spec.penalty_order,
        "priors": {k: getattr(spec.priors, k)
                   for k in ("v0", "nu0", "r0_scale", "a0", "b0",
                             "tau_shape", "tau_rate")},
        "control": {k: getattr(spec.control, k)
                    for k in ("n_adapt", "n_batch", "n_burnin", "n_iter",
                              "n_thin", "seed", "store_b")},
    }
    if assoc.extra_form is not None:
        ex = assoc.extra_form
        out["extra_form"] = {
            "fixed": terms_to_text(ex.fixed, time_col),
            "random": terms_to_text(ex.random, time_col),
            "ind_fixed": list(ex.ind_fixed),
            "ind_random": list(ex.ind_random),
        }
    return out


def _spec_from_payload(p: dict, time_col: str) -> ModelSpec:
    from ..survival import AssociationSpec, ExtraForm

    extra_form = None
    if "extra_form" in p:
        ef = p["extra_form"]
        extra_form = ExtraForm(
            fixed=parse_terms(ef["fixed"], time_col),
            random=parse_terms(ef["random"], time_col),
            ind_fixed=tuple(ef["ind_fixed"]),
            ind_random=tuple(ef["ind_random"]))
    association = AssociationSpec(
        p["association"], extra_form=extra_form,
        transform_value=parse_features(p["value"]),
        transform_extra=parse_features(p["extra"]))
    return ModelSpec(
        fixed=parse_terms(p["fixed"], time_col),
        random=parse_terms(p["random"], time_col),
        family=parse_family(p["family"]),
        surv_terms=parse_terms(p["surv"], time_col),
        association=association, n_basis_h0=p["n_basis_h0"],
        penalized=p["penalized"], penalty_order=p["penalty_order"],
        priors=PriorSpec(**p["priors"]),
        control=MCMCControl(**p["control"]))


def save_model(model: FittedJointModel, path: str) -> None:
    """Write the fitted model as a jmx-1 document.  The per-iteration
    random-effect draws are not persisted (predictions recompute subject
    random effects from their own data)."""
    d = model.draws
    time_col = model.columns.get("time", "time")
    doc = {
        "format": FORMAT_TAG,
        "model_id": model.model_id,
        "columns": dict(model.columns),
        "spec": _spec_payload(model.spec, time_col),
        "knots": {"interior": list(model.knots.interior),
                  "boundary": list(model.knots.boundary),
                  "degree": model.knots.degree},
        "splines": {str(df): {"df": sp.df, "boundary": list(sp.boundary),
                              "interior": list(sp.interior)}
                    for df, sp in model.splines.items()},
        "long_factor_levels": {k: list(v) for k, v
                               in model.long_factor_levels.items()},
        "surv_factor_levels": {k: list(v) for k, v
                               in model.surv_factor_levels.items()},
        "fingerprint": dict(model.fingerprint),
        "init_meta": model.init_meta,
        "default_times": _arr(model.default_times),
        "draws": {
            "beta": _arr(d.beta), "gamma": _arr(d.gamma),
            "alpha": _arr(d.alpha), "gammas_h0": _arr(d.gammas_h0),
            "D": _arr(d.D), "sigma2": _arr(d.sigma2),
            "tau_h": _arr(d.tau_h), "subj_loglik": _arr(d.subj_loglik),
            "b_mean": _arr(d.b_mean),
            "accept": {k: list(map(float, v)) for k, v in d.accept.items()},
            "scales": {k: float(np.asarray(v).reshape(-1)[0])
                       if np.asarray(v).size == 1 else _arr(v)
                       for k, v in d.scales.items()},
            "names": d.names,
            "provenance": d.provenance,
            "warnings": list(d.warnings),
            "subjects": [str(s) for s in d.subjects],
        },
    }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      default=_json_default)
    with open(path, "w") as fh:
        fh.write(text)
        fh.write("\n")


def _np(x, dtype=float):
    return None if x is None else np.asarray(x, dtype=dtype)


def load_model(path: str) -> FittedJointModel:
    if not os.path.exists(path):
        raise ArtifactError(f"artifact not found: {path}")
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactError(
            f"cannot parse artifact {path}: {exc.msg} at byte {exc.pos}")
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise ArtifactError(
            f"incompatible artifact format {doc.get('format')!r}; "
            f"expected {FORMAT_TAG!r}")
    columns = doc["columns"]
    spec = _spec_from_payload(doc["spec"], columns.get("time", "time"))
    knots = KnotVector(interior=tuple(doc["knots"]["interior"]),
                       boundary=tuple(doc["knots"]["boundary"]),
                       degree=doc["knots"]["degree"])
    splines = {int(df): TimeSpline(df=sp["df"],
                                   boundary=tuple(sp["boundary"]),
                                   interior=tuple(sp["interior"]))
               for df, sp in doc["splines"].items()}
    dd = doc["draws"]
    draws = Draws(
        beta=_np(dd["beta"]), gamma=_np(dd["gamma"]),
        alpha=_np(dd["alpha"]), gammas_h0=_np(dd["gammas_h0"]),
        D=_np(dd["D"]), sigma2=_np(dd["sigma2"]), tau_h=_np(dd["tau_h"]),
        subj_loglik=_np(dd["subj_loglik"]), b_mean=_np(dd["b_mean"]),
        b=None,
        accept={k: list(v) for k, v in dd["accept"].items()},
        scales=dd["scales"], names=dd["names"],
        provenance=dd["provenance"], warnings=list(dd["warnings"]),
        subjects=list(dd["subjects"]))
    return FittedJointModel(
        spec=spec, draws=draws, knots=knots, splines=splines,
        long_factor_levels={k: list(v) for k, v
                            in doc["long_factor_levels"].items()},
        surv_factor_levels={k: list(v) for k, v
                            in doc["surv_factor_levels"].items()},
        fingerprint=doc["fingerprint"], init_meta=doc["init_meta"],
        model_id=doc["model_id"], default_times=_np(doc["default_times"]),
        columns=columns)
