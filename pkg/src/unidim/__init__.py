"""Shared-dimension analysis of vision-model representations.

The package turns per-model feature matrices into nonnegative
similarity embeddings, matches embedding dimensions across models with
permutation-null calibration, and evaluates what the recurring
dimensions encode and predict.
"""

from .artifacts import (
    CategoryIndex,
    Embedding,
    FeatureMatrix,
    ModelManifest,
    RunConfig,
    SimilarityMatrix,
    UniversalityReport,
    load_category_index,
    load_embedding,
    load_feature_matrix,
    load_manifest,
    load_report,
    load_similarity,
    persist_artifact,
)
from .errors import NumericalError, UnidimError, ValidationError
from .kernel import rbf_similarity, kernel_grid, validate_similarity
from .npy import read_npy, write_npy
from .snmf import (
    explained_variance,
    fit_seeds,
    select_bandwidth,
    snmf_fit,
    stability,
)
from .universality import (
    calibrate,
    cka_linear,
    cos2,
    match_models,
    null_thresholds,
    raw_universality,
    resample_universality,
    score_ensemble,
    stability_ceiling,
)

__version__ = "0.1.0"

__all__ = [
    "CategoryIndex",
    "Embedding",
    "FeatureMatrix",
    "ModelManifest",
    "NumericalError",
    "RunConfig",
    "SimilarityMatrix",
    "UnidimError",
    "UniversalityReport",
    "ValidationError",
    "calibrate",
    "cka_linear",
    "cos2",
    "explained_variance",
    "fit_seeds",
    "kernel_grid",
    "load_category_index",
    "load_embedding",
    "load_feature_matrix",
    "load_manifest",
    "load_report",
    "load_similarity",
    "match_models",
    "null_thresholds",
    "persist_artifact",
    "raw_universality",
    "rbf_similarity",
    "read_npy",
    "resample_universality",
    "score_ensemble",
    "select_bandwidth",
    "snmf_fit",
    "stability",
    "stability_ceiling",
    "validate_similarity",
    "write_npy",
    "__version__",
]
