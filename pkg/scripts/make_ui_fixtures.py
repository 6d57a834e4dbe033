"""Record real prediction-service responses as JSON fixtures for the
frontend test suite, so the TypeScript pass-through tests exercise the
actual HTTP contract rather than hand-written payloads.

Run from the repository root after installing the package:

    python3 scripts/make_ui_fixtures.py

Writes frontend/test/fixtures/contract.json.
"""

import json
import os
import sys
import tempfile

from fastapi.testclient import TestClient

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from jointsurv.io import save_model, simulate_joint, SimConfig  # noqa: E402
from jointsurv.io.service import create_app  # noqa: E402
from jointsurv.longitudinal import (Covariate, Family, Intercept,  # noqa: E402
                                    RawTime, TermList)
from jointsurv.mcmc import MCMCControl  # noqa: E402
from jointsurv.model import ModelSpec, fit_joint_model  # noqa: E402
from jointsurv.survival import AssociationSpec  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "frontend", "test",
                   "fixtures", "contract.json")

SUBJECT_V1 = {
    "rows": [{"year": 0.0, "y": 0.6}],
    "baseline": {"x": 1.0},
    "last_known_alive": None,
}
SUBJECT_V2 = {
    "rows": [{"year": 0.0, "y": 0.6}, {"year": 1.0, "y": 0.9}],
    "baseline": {"x": 1.0},
    "last_known_alive": None,
}


def main():
    terms = TermList((Intercept(), RawTime()))
    cfg = SimConfig(
        n_subjects=40, fixed=terms, random=terms, beta=(0.5, -0.2),
        D=(0.4, 0.05, 0.05, 0.1), sigma2=0.25, log_h0=-1.5,
        gamma=(0.5,), alpha=(0.4,),
        covariates={"x": ("binary", 0.5)}, surv_covariates=("x",),
        t_max=10.0)
    long, surv, _ = simulate_joint(cfg, seed=7)
    spec = ModelSpec(
        fixed=terms, random=terms, family=Family("gaussian"),
        surv_terms=TermList((Covariate("x"),)),
        association=AssociationSpec("td_value"), n_basis_h0=6,
        control=MCMCControl(n_adapt=200, n_batch=50, n_burnin=150,
                            n_iter=400, n_thin=4, seed=5))
    model = fit_joint_model(long, surv, spec, model_id="demo")
    model.init_meta["log_evidence"] = -100.0

    with tempfile.TemporaryDirectory() as d:
        save_model(model, os.path.join(d, "demo.jmx"))
        model.model_id = "demo2"
        save_model(model, os.path.join(d, "demo2.jmx"))
        model.model_id = "demo"
        client = TestClient(create_app(d))

        def grab(method, path, payload=None):
            res = (client.get(path) if method == "get"
                   else client.post(path, json=payload))
            assert res.status_code == 200, (path, res.text)
            return {"status": res.status_code, "body": res.json(),
                    "raw": res.text}

        fixtures = {
            "models": grab("get", "/models"),
            "detail_demo": grab("get", "/models/demo"),
            "detail_demo2": grab("get", "/models/demo2"),
            "survfit_v1": grab("post", "/models/demo/survfit", {
                "subject": SUBJECT_V1, "M": 50, "mode": "mc", "seed": 3}),
            "survfit_v2": grab("post", "/models/demo/survfit", {
                "subject": SUBJECT_V2, "M": 50, "mode": "mc", "seed": 3}),
            "predict_long_v1": grab("post", "/models/demo/predict-long", {
                "subject": SUBJECT_V1, "times": [0.5, 1.0, 2.0, 3.0],
                "M": 50, "seed": 3}),
            "predict_long_v2": grab("post", "/models/demo/predict-long", {
                "subject": SUBJECT_V2, "times": [1.5, 2.0, 3.0],
                "M": 50, "seed": 3}),
            "bma_pair_v2": grab("post", "/bma/survfit", {
                "model_ids": ["demo", "demo2"], "subject": SUBJECT_V2,
                "M": 50, "mode": "mc", "seed": 3}),
            "requests": {
                "subject_v1": SUBJECT_V1,
                "subject_v2": SUBJECT_V2,
            },
        }

    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w") as fh:
        json.dump(fixtures, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
