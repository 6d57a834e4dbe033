"""Bayesian joint models for longitudinal and time-to-event data.

Fits shared-random-effects joint models by MCMC, produces dynamic
subject-specific predictions of survival and biomarker trajectories,
combines predictions across models by Bayesian model averaging, and
scores predictions with censoring-corrected discrimination and
calibration metrics.
"""

from .accuracy import (auc_dynamic, cross_validate, dyn_c_index,
                       int_pred_err, kaplan_meier, pred_err)
from .basis import (KnotVector, QuadratureRule, bspline_basis,
                    bspline_design, gauss_kronrod, gauss_legendre, integrate,
                    natural_cubic_basis, natural_cubic_deriv,
                    natural_cubic_integral, percentile_knots)
from .errors import (ArtifactError, DataError, InvalidIntervalError,
                     InvalidKnotsError, InvalidSpecError, JointsurvError,
                     NumericError)
from .longitudinal import (Covariate, DnsTime, Family, InsTime, Intercept,
                           Interaction, LongTable, NsTime, RawTime, TermList,
                           TimeSpline)
from .mcmc import Draws, MCMCControl, PriorSpec
from .model import (FittedJointModel, ModelSpec, build_splines,
                    fit_joint_model, workspace_for)
from .posterior import (compare_models, diagnostics_export, dic,
                        hazard_ratio_contrast, lpml, marginal_loglik_laplace,
                        model_fit_stats, summarize)
from .prediction import (NewSubjectData, PredictionResult, bma_combine,
                         bma_weights, posterior_random_effects,
                         predict_longitudinal, subject_marginal_loglik,
                         survfit_dynamic)
from .survival import (AssociationSpec, ExtraForm, FeatureList, Identity,
                       InteractWith, Power, SurvTable)
from .datasets import load_pbc

__all__ = [
    "load_pbc",
    "auc_dynamic", "cross_validate", "dyn_c_index", "int_pred_err",
    "kaplan_meier", "pred_err",
    "KnotVector", "QuadratureRule", "bspline_basis", "bspline_design",
    "gauss_kronrod", "gauss_legendre", "integrate", "natural_cubic_basis",
    "natural_cubic_deriv", "natural_cubic_integral", "percentile_knots",
    "ArtifactError", "DataError", "InvalidIntervalError",
    "InvalidKnotsError", "InvalidSpecError", "JointsurvError",
    "NumericError",
    "Covariate", "DnsTime", "Family", "InsTime", "Intercept", "Interaction",
    "LongTable", "NsTime", "RawTime", "TermList", "TimeSpline",
    "Draws", "MCMCControl", "PriorSpec",
    "FittedJointModel", "ModelSpec", "build_splines", "fit_joint_model",
    "workspace_for",
    "compare_models", "diagnostics_export", "dic", "hazard_ratio_contrast",
    "lpml", "marginal_loglik_laplace", "model_fit_stats", "summarize",
    "NewSubjectData", "PredictionResult", "bma_combine", "bma_weights",
    "posterior_random_effects", "predict_longitudinal",
    "subject_marginal_loglik", "survfit_dynamic",
    "AssociationSpec", "ExtraForm", "FeatureList", "Identity",
    "InteractWith", "Power", "SurvTable",
]

__version__ = "0.1.0"
