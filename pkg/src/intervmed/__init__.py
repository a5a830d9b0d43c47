"""Interventional direct and indirect effects for many mediators."""

__version__ = "0.1.0"

from .data import Dataset, load_csv, parse_schema
from .effects import (EffectDecomposition, MediationEstimator, build_duplicated_rows,
                      compute_effects, estimate_effects, estimate_estimands)
from .glm import TermSpec, fit
from .inference import BootstrapResult, bootstrap

__all__ = [
    "Dataset", "load_csv", "parse_schema", "EffectDecomposition", "MediationEstimator",
    "build_duplicated_rows", "compute_effects", "estimate_effects", "estimate_estimands",
    "TermSpec", "fit", "BootstrapResult", "bootstrap", "__version__",
]
