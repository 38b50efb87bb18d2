"""Penultimate-layer activation extraction for vision models.

Dumps one N x d float32 NPY per model over a shared image directory and
maintains a manifest JSON describing the run, in the exact on-disk
format the unidim analysis pipeline consumes.
"""

from .errors import ExtractionError
from .registry import REGISTRY, ModelSpec, resolve_model
from .runner import ExtractionJob, run_extraction

__all__ = [
    "ExtractionError",
    "ExtractionJob",
    "ModelSpec",
    "REGISTRY",
    "resolve_model",
    "run_extraction",
]
