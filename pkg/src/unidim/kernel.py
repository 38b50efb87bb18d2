"""RBF similarity matrices with median-heuristic bandwidths.

S_ij = exp(-||z_i - z_j||^2 / (2 sigma^2)) with sigma = alpha * median
pairwise Euclidean distance. Distances use the inner-product expansion
with a clamp at zero and 64-bit accumulation; the matrix is assembled in
blocked tiles so peak memory beyond S itself stays O(block^2). The
diagonal is pinned to exactly 1 and the upper triangle is mirrored so
symmetry holds bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .artifacts import FeatureMatrix, SimilarityMatrix
from .errors import NumericalError, ValidationError

DEFAULT_BLOCK = 256


def _as_features(features) -> tuple[str, np.ndarray]:
    if isinstance(features, FeatureMatrix):
        return features.model_id, np.asarray(features.values, dtype=np.float64)
    values = np.asarray(features, dtype=np.float64)
    return "anonymous", values


def standardize_features(values: np.ndarray) -> np.ndarray:
    """Column-wise z-scoring; constant columns become all zeros."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    sd = values.std(axis=0)
    out = values - mean
    nonzero = sd > 0
    out[:, nonzero] /= sd[nonzero]
    out[:, ~nonzero] = 0.0
    return out


def pairwise_sq_dists(values: np.ndarray, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """Full N x N squared-distance matrix, computed in tiles."""
    z = np.asarray(values, dtype=np.float64)
    n = z.shape[0]
    sq = np.einsum("ij,ij->i", z, z)
    out = np.zeros((n, n), dtype=np.float64)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        for j0 in range(i0, n, block):
            j1 = min(j0 + block, n)
            tile = sq[i0:i1, None] + sq[None, j0:j1] - 2.0 * (z[i0:i1] @ z[j0:j1].T)
            np.clip(tile, 0.0, None, out=tile)
            out[i0:i1, j0:j1] = tile
            if j0 > i0:
                out[j0:j1, i0:i1] = tile.T
    np.fill_diagonal(out, 0.0)
    return out


def median_pairwise_distance(features) -> float:
    """Median of the N(N-1)/2 distinct pairwise Euclidean distances.

    Even counts average the two central order statistics. A zero median
    (all rows identical) has no usable bandwidth and is an error.
    """
    _, values = _as_features(features)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValidationError("median distance needs an (N>=2) x d matrix")
    if not np.isfinite(values).all():
        raise ValidationError("features contain non-finite values")
    d2 = pairwise_sq_dists(values)
    iu = np.triu_indices(values.shape[0], k=1)
    distances = np.sqrt(d2[iu])
    median = float(np.median(distances))
    if median <= 0.0:
        raise NumericalError(
            "median pairwise distance is zero; bandwidth would be degenerate"
        )
    return median


def rbf_similarity(
    features,
    alpha: float,
    *,
    median_distance: float | None = None,
    standardize: bool = False,
    block: int = DEFAULT_BLOCK,
) -> SimilarityMatrix:
    """Similarity matrix at bandwidth sigma = alpha * median distance."""
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    model_id, values = _as_features(features)
    if standardize:
        values = standardize_features(values)
    if median_distance is None:
        median_distance = median_pairwise_distance(values)
    if median_distance <= 0:
        raise NumericalError("degenerate bandwidth: median distance is zero")
    sigma = float(alpha) * float(median_distance)
    d2 = pairwise_sq_dists(values, block=block)
    S = np.exp(d2 / (-2.0 * sigma * sigma))
    np.fill_diagonal(S, 1.0)
    return SimilarityMatrix(
        model_id=model_id,
        values=S,
        alpha=float(alpha),
        sigma=sigma,
        median_distance=float(median_distance),
    )


def kernel_grid(
    features,
    alpha_grid,
    *,
    standardize: bool = False,
    block: int = DEFAULT_BLOCK,
) -> list[SimilarityMatrix]:
    """One similarity matrix per multiplier of a strictly ascending grid."""
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ValidationError("alpha grid must be non-empty")
    if any(a <= 0 for a in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("alpha grid must be strictly ascending positive reals")
    model_id, values = _as_features(features)
    if standardize:
        values = standardize_features(values)
    median = median_pairwise_distance(values)
    out = []
    for alpha in grid:
        sim = rbf_similarity(
            values, alpha, median_distance=median, standardize=False, block=block
        )
        sim.model_id = model_id
        out.append(sim)
    return out


def validate_similarity(sim: SimilarityMatrix, *, check_psd: bool = False) -> None:
    """Assert the similarity-matrix invariants; raise on violation."""
    S = np.asarray(sim.values, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError("similarity matrix must be square")
    asym = np.abs(S - S.T).max()
    scale = max(1.0, float(np.abs(S).max()))
    if asym > 1e-6 * scale:
        raise ValidationError(f"similarity matrix asymmetric beyond tolerance ({asym})")
    if not np.all(np.diag(S) == 1.0):
        raise ValidationError("similarity diagonal must be exactly 1")
    if S.min() < 0.0 or S.max() > 1.0:
        raise ValidationError("similarity entries must lie in [0, 1]")
    if check_psd:
        eigenvalues = np.linalg.eigvalsh((S + S.T) / 2.0)
        lam_max = float(eigenvalues.max())
        if float(eigenvalues.min()) < -1e-6 * max(lam_max, np.finfo(float).tiny):
            raise NumericalError(
                f"similarity matrix is not PSD within tolerance "
                f"(min eigenvalue {eigenvalues.min():g})"
            )
