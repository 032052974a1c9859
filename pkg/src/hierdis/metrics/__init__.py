from .structure import purity, coverage, h_error, matching_pairs
from .gbt import GBTRegressor, GBTClassifier, PiecewiseConstant, make_model, quantile_edges
from .disentangle import (
    LOW_SUPPORT, MIN_OVERLAP, R2Result, R4Result, R4cResult, r2_score, r2_bidirectional,
    r4, r4c, pairwise_conditional, pair_seed,
)
from .report import ScoreReport, REPORT_VERSION

__all__ = [
    "purity", "coverage", "h_error", "matching_pairs", "GBTRegressor", "GBTClassifier",
    "PiecewiseConstant", "make_model", "quantile_edges", "LOW_SUPPORT", "MIN_OVERLAP",
    "R2Result", "R4Result", "R4cResult", "r2_score", "r2_bidirectional", "r4", "r4c",
    "pairwise_conditional", "pair_seed", "ScoreReport", "REPORT_VERSION",
]
