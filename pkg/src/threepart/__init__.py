"""Endogenous three-part demand model: access, extensive and intensive margins
with incidental truncation, estimated by a data-augmented Gibbs sampler.
"""

from .data import (ColumnSpec, CovarianceState, Dataset, DesignInfo,
                   GroupPartition, ObservationRecord, PriorSpec, RegressorSpec,
                   build_dataset, identify, leading_block)
from .diagnostics import (DiagnosticReport, diagnose_chain, effective_sample_size,
                          geweke, heidelberger_welch, raftery_lewis)
from .distributions import (NEGATIVE_HALF_LINE, POSITIVE_HALF_LINE,
                            TruncationInterval, normal_cdf, normal_quantile,
                            sample_inverse_gamma, sample_inverse_wishart,
                            sample_matrix_normal, sample_truncated_normal)
from .estimator import ThreePartGibbs
from .policy import (PredictiveResult, Scenario, conditional_moments, elasticity,
                     legalize_delta, population_delta, predict_individual,
                     tax_revenue)
from .sampler import ChainConfig, ChainStore, GibbsSampler, LatentState, run_chain
from .synthetic import GeneratorSpec, generate
from .univariate import AugmentedProbitGibbs, ConjugateLinearGibbs

__version__ = "0.1.0"

__all__ = [
    "AugmentedProbitGibbs", "ChainConfig", "ChainStore", "ColumnSpec",
    "ConjugateLinearGibbs", "CovarianceState", "Dataset", "DesignInfo",
    "DiagnosticReport", "GeneratorSpec", "GibbsSampler", "GroupPartition",
    "LatentState", "NEGATIVE_HALF_LINE", "ObservationRecord", "POSITIVE_HALF_LINE",
    "PredictiveResult", "PriorSpec", "RegressorSpec", "Scenario", "ThreePartGibbs",
    "TruncationInterval", "build_dataset", "conditional_moments", "diagnose_chain",
    "effective_sample_size", "elasticity", "generate", "geweke",
    "heidelberger_welch", "identify", "leading_block", "legalize_delta",
    "normal_cdf", "normal_quantile", "population_delta", "predict_individual",
    "raftery_lewis", "run_chain", "sample_inverse_gamma", "sample_inverse_wishart",
    "sample_matrix_normal", "sample_truncated_normal", "tax_revenue",
]
