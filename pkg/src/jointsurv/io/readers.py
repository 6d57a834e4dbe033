"""CSV ingestion for longitudinal and survival tables."""

from __future__ import annotations

import os

import numpy as np
import pandas as pd

from ..errors import DataError
from ..longitudinal import LongTable
from ..survival import SurvTable

__all__ = ["read_long_csv", "read_surv_csv", "read_single_csv",
           "check_alignment"]


def _read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise DataError(f"empty file: {path}")
    except Exception as exc:
        raise DataError(f"cannot parse {path}: {exc}")
    if frame.empty:
        raise DataError(f"no data rows in {path}")
    return frame


def _numeric(frame: pd.DataFrame, col: str, path: str) -> None:
    if col not in frame.columns:
        raise DataError(f"{path}: missing required column {col!r}")
    converted = pd.to_numeric(frame[col], errors="coerce")
    bad = converted.isna() & frame[col].notna()
    if bad.any():
        row = int(np.nonzero(bad.to_numpy())[0][0])
        raise DataError(f"{path}: column {col!r} row {row + 2} is not "
                        f"numeric: {frame[col].iloc[row]!r}")
    if converted.isna().any():
        row = int(np.nonzero(converted.isna().to_numpy())[0][0])
        raise DataError(f"{path}: column {col!r} row {row + 2} is missing")
    frame[col] = converted


def read_long_csv(path: str, subject_col="id", time_col="time",
                  response_col="y", factor_levels=None) -> LongTable:
    frame = _read_frame(path)
    if subject_col not in frame.columns:
        raise DataError(f"{path}: missing required column {subject_col!r}")
    for col in (time_col, response_col):
        _numeric(frame, col, path)
    return LongTable(frame, subject_col=subject_col, time_col=time_col,
                     response_col=response_col, factor_levels=factor_levels)


def read_surv_csv(path: str, subject_col="id", time_col="T",
                  event_col="delta", factor_levels=None) -> SurvTable:
    frame = _read_frame(path)
    if subject_col not in frame.columns:
        raise DataError(f"{path}: missing required column {subject_col!r}")
    for col in (time_col, event_col):
        _numeric(frame, col, path)
    return SurvTable(frame, subject_col=subject_col, time_col=time_col,
                     event_col=event_col, factor_levels=factor_levels)


def read_single_csv(path: str, subject_col="id", time_col="time",
                    response_col="y", surv_time_col="T",
                    event_col="delta"):
    """Convenience single-file mode: the survival columns are repeated on
    every longitudinal row and deduplicated by subject."""
    frame = _read_frame(path)
    for col in (time_col, response_col, surv_time_col, event_col):
        _numeric(frame, col, path)
    surv_frame = (frame.drop(columns=[time_col, response_col])
                  .drop_duplicates(subset=[subject_col])
                  .reset_index(drop=True))
    long_frame = frame.drop(columns=[surv_time_col, event_col])
    long = LongTable(long_frame, subject_col=subject_col, time_col=time_col,
                     response_col=response_col)
    surv = SurvTable(surv_frame, subject_col=subject_col,
                     time_col=surv_time_col, event_col=event_col)
    check_alignment(long, surv)
    return long, surv


def check_alignment(long: LongTable, surv: SurvTable) -> None:
    """Every longitudinal subject must have a survival row and vice versa."""
    long_ids = set(long.subjects)
    surv_ids = set(surv.subjects)
    only_long = sorted(long_ids - surv_ids, key=str)
    only_surv = sorted(surv_ids - long_ids, key=str)
    if only_long:
        raise DataError(f"subjects with longitudinal rows but no survival "
                        f"row: {only_long[:5]}")
    if only_surv:
        raise DataError(f"subjects with a survival row but no longitudinal "
                        f"rows: {only_surv[:5]}")
