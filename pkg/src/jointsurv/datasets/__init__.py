"""Bundled demonstration data.

A synthetic 312-subject cohort modeled on the Mayo Clinic primary
biliary cirrhosis study: yearly log serum bilirubin measurements
(1945 rows), treatment and age at baseline, and a composite
transplantation/death endpoint with 169 observed events over 14.3
years of follow-up.  Generated by scripts/make_fixture.py.
"""

import os

from ..io.readers import read_long_csv, read_surv_csv

__all__ = ["load_pbc"]

_HERE = os.path.dirname(__file__)


def load_pbc():
    """Return (LongTable, SurvTable) for the demonstration cohort.

    Longitudinal columns: id, year, logBili, drug, age.
    Survival columns: id, years, status, drug, age.
    """
    long = read_long_csv(os.path.join(_HERE, "pbc_long.csv"),
                         subject_col="id", time_col="year",
                         response_col="logBili")
    surv = read_surv_csv(os.path.join(_HERE, "pbc_surv.csv"),
                         subject_col="id", time_col="years",
                         event_col="status")
    return long, surv
