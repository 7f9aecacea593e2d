"""STRIDE: orthogonal functional decomposition of tabular predictors.

Decomposes a black-box model's outputs into a baseline, per-feature main
effects, and selected pairwise interaction components that are mutually
orthogonal under the background measure, then derives attributions,
synergy scores, what-if deltas, and component surgery from the parts.
"""

from .analysis import (
    AttributionVector,
    SurgeryReport,
    SynergyMatrix,
    WhatIfReport,
    component_surgery,
    fidelity_r2,
    most_impactful_pair,
    shapley_aggregate,
    shapley_batch,
    spearman_rank_agreement,
    synergy_matrix,
    what_if,
)
from .anova import DiscreteGridFunction, compare_to_engine, exact_anova
from .centered import (
    CenteredKernelMatrix,
    SubsetId,
    centered_kernel_matrix,
    cross_orthogonality,
    empirical_cross_orthogonality,
    partial_mean_check,
    product_kernel_matrix,
)
from .data import Dataset, load_csv
from .decomposition import (
    Component,
    DecompositionModel,
    FitConfig,
    evaluate,
    fit,
    load_model,
    save_model,
)
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    ModelVersionError,
    NumericalError,
    SchemaError,
    StrideError,
)
from .kernels import (
    FeatureMap,
    KernelSpec,
    Landmarks,
    apply_feature_map,
    build_feature_map,
    eval_kernel,
    median_bandwidth,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionVector",
    "CenteredKernelMatrix",
    "Component",
    "ConfigError",
    "DataError",
    "Dataset",
    "DecompositionModel",
    "DiscreteGridFunction",
    "DomainError",
    "FeatureMap",
    "FitConfig",
    "KernelSpec",
    "Landmarks",
    "ModelVersionError",
    "NumericalError",
    "SchemaError",
    "StrideError",
    "SubsetId",
    "SurgeryReport",
    "SynergyMatrix",
    "WhatIfReport",
    "apply_feature_map",
    "build_feature_map",
    "centered_kernel_matrix",
    "compare_to_engine",
    "component_surgery",
    "cross_orthogonality",
    "empirical_cross_orthogonality",
    "eval_kernel",
    "evaluate",
    "exact_anova",
    "fidelity_r2",
    "fit",
    "load_csv",
    "load_model",
    "median_bandwidth",
    "most_impactful_pair",
    "partial_mean_check",
    "product_kernel_matrix",
    "save_model",
    "shapley_aggregate",
    "shapley_batch",
    "spearman_rank_agreement",
    "synergy_matrix",
    "what_if",
]
