"""Bayesian variable selection for Cox proportional hazards models.

Nonlocal coefficient priors, Laplace-approximated model scores and an
annealed, screened stochastic search over models.
"""

from .data import SurvivalDataset, ingest_dataset, sort_by_time
from .exceptions import BVSurvError, DataValidationError, NumericalError
from .posterior import ScoredModel, score_model
from .priors import PriorSpec
from .search import ModelPool, SearchConfig, run_search, summaries

__version__ = "0.1.0"

__all__ = [
    "BVSurvError", "DataValidationError", "ModelPool", "NumericalError", "PriorSpec",
    "ScoredModel", "SearchConfig", "SurvivalDataset", "ingest_dataset", "run_search",
    "score_model", "sort_by_time", "summaries",
]
