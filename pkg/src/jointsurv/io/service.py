"""HTTP prediction service.

A thin FastAPI layer over saved model artifacts: list models, inspect
one, compute dynamic survival and longitudinal forecasts for a new
subject, and model-averaged survival across several artifacts.  Model
files are loaded lazily from a directory and cached by modification
time.
"""

from __future__ import annotations

import os

import numpy as np
import pandas as pd
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from ..errors import (ArtifactError, DataError, InvalidIntervalError,
                      InvalidSpecError, NumericError)
from ..prediction import (NewSubjectData, bma_combine, bma_weights,
                          predict_longitudinal, subject_marginal_loglik,
                          survfit_dynamic)
from .artifact import load_model

__all__ = ["create_app"]


class SubjectPayload(BaseModel):
    """Measurement history plus baseline covariates for one subject."""

    rows: list[dict] = Field(default_factory=list)
    baseline: dict | None = None
    last_known_alive: float | None = None


class SurvfitRequest(BaseModel):
    subject: SubjectPayload
    times: list[float] | None = None
    M: int = 200
    mode: str = "mc"
    seed: int | None = None


class PredictLongRequest(BaseModel):
    subject: SubjectPayload
    times: list[float]
    type: str = "subject"
    interval: str = "confidence"
    M: int = 200
    seed: int | None = None


class BMARequest(BaseModel):
    model_ids: list[str]
    subject: SubjectPayload
    times: list[float] | None = None
    M: int = 200
    mode: str = "mc"
    seed: int | None = None


class _ModelCache:
    def __init__(self, models_dir: str):
        self.dir = models_dir
        self._cache: dict = {}

    def paths(self) -> dict:
        if not os.path.isdir(self.dir):
            return {}
        out = {}
        for name in sorted(os.listdir(self.dir)):
            if name.endswith((".jmx", ".json")):
                out[os.path.splitext(name)[0]] = os.path.join(self.dir, name)
        return out

    def get(self, model_id: str):
        path = self.paths().get(model_id)
        if path is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown model {model_id!r}")
        mtime = os.path.getmtime(path)
        hit = self._cache.get(model_id)
        if hit is not None and hit[0] == mtime:
            return hit[1]
        model = load_model(path)
        self._cache[model_id] = (mtime, model)
        return model


def _subject(model, payload: SubjectPayload) -> NewSubjectData:
    cols = model.columns
    frame = pd.DataFrame(payload.rows)
    return NewSubjectData(frame, time_col=cols.get("time", "time"),
                          response_col=cols.get("response", "y"),
                          baseline=payload.baseline,
                          last_known_alive=payload.last_known_alive)


def _result_json(res) -> dict:
    return {
        "times": res.times.tolist(),
        "mean": res.mean.tolist(),
        "median": res.median.tolist(),
        "lower": res.lower.tolist(),
        "upper": res.upper.tolist(),
        "M": res.M,
        "kind": res.kind,
    }


def create_app(models_dir: str) -> FastAPI:
    app = FastAPI(title="jointsurv prediction service")
    cache = _ModelCache(models_dir)

    @app.exception_handler(DataError)
    @app.exception_handler(ArtifactError)
    async def _data_error(request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=400,
                            content={"detail": str(exc),
                                     "kind": type(exc).__name__})

    @app.exception_handler(InvalidSpecError)
    @app.exception_handler(InvalidIntervalError)
    async def _spec_error(request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=422,
                            content={"detail": str(exc),
                                     "kind": type(exc).__name__})

    @app.exception_handler(NumericError)
    async def _numeric_error(request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=500,
                            content={"detail": str(exc),
                                     "kind": type(exc).__name__})

    @app.get("/models")
    def list_models():
        out = []
        for model_id in cache.paths():
            m = cache.get(model_id)
            out.append({
                "model_id": m.model_id,
                "n_subjects": m.fingerprint.get("n_subjects"),
                "n_long_rows": m.fingerprint.get("n_long_rows"),
                "family": m.spec.family.kind,
                "association": m.spec.association.kind,
                "columns": m.columns,
            })
        return out

    @app.get("/models/{model_id}")
    def model_detail(model_id: str):
        m = cache.get(model_id)
        return {
            "model_id": m.model_id,
            "columns": m.columns,
            "fingerprint": m.fingerprint,
            "family": m.spec.family.kind,
            "association": m.spec.association.kind,
            "default_times": (m.default_times.tolist()
                              if m.default_times is not None else None),
            "n_draws": int(m.draws.beta.shape[0]),
            "warnings": list(m.draws.warnings),
        }

    @app.post("/models/{model_id}/survfit")
    def survfit(model_id: str, req: SurvfitRequest):
        m = cache.get(model_id)
        subj = _subject(m, req.subject)
        times = np.asarray(req.times, float) if req.times else None
        res = survfit_dynamic(m, subj, times=times, M=req.M, mode=req.mode,
                              seed=req.seed)
        out = _result_json(res)
        out["conditioning_time"] = float(subj.last_known_alive)
        return out

    @app.post("/models/{model_id}/predict-long")
    def predict_long(model_id: str, req: PredictLongRequest):
        m = cache.get(model_id)
        subj = _subject(m, req.subject)
        res = predict_longitudinal(m, subj, np.asarray(req.times, float),
                                   type=req.type, interval=req.interval,
                                   M=req.M, seed=req.seed)
        return _result_json(res)

    @app.post("/bma/survfit")
    def bma_survfit(req: BMARequest):
        models = [cache.get(mid) for mid in req.model_ids]
        subj_ev, data_ev = [], []
        for m in models:
            subj = _subject(m, req.subject)
            subj_ev.append(subject_marginal_loglik(m, subj))
            ev = m.init_meta.get("log_evidence")
            if ev is None:
                raise DataError(f"model {m.model_id!r} lacks a stored data "
                                "evidence; refit with evidence enabled")
            data_ev.append(float(ev))
        w = bma_weights(subj_ev, data_ev)
        results = []
        times = np.asarray(req.times, float) if req.times else None
        for m in models:
            subj = _subject(m, req.subject)
            results.append(survfit_dynamic(m, subj, times=times, M=req.M,
                                           mode=req.mode, seed=req.seed))
        combined = bma_combine(results, w)
        out = _result_json(combined)
        out["weights"] = {m.model_id: float(wk)
                          for m, wk in zip(models, w)}
        return out

    return app
