"""Data ingestion, persistence, configuration, CLI, simulation, and the
HTTP prediction service."""

from .artifact import FORMAT_TAG, load_model, save_model
from .config import (ModelConfig, config_to_spec, family_to_text,
                     features_to_text, parse_config, parse_family,
                     parse_features, parse_terms, terms_to_text)
from .readers import (check_alignment, read_long_csv, read_single_csv,
                      read_surv_csv)
from .simulate import SimConfig, simulate_joint

__all__ = [
    "FORMAT_TAG", "load_model", "save_model",
    "ModelConfig", "config_to_spec", "family_to_text", "features_to_text",
    "parse_config", "parse_family", "parse_features", "parse_terms",
    "terms_to_text",
    "check_alignment", "read_long_csv", "read_single_csv", "read_surv_csv",
    "SimConfig", "simulate_joint",
]
