"""What each dimension encodes: category consistency via a one-way
sum-of-squares decomposition, between/within variance pooled by
recurrence-score decile, and the reconstruction importance of removing
one dimension from the low-rank fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import CategoryIndex
from .errors import ValidationError
from .snmf import explained_variance
from .stats import spearman


@dataclass
class DimensionContent:
    model_id: str
    dim: int
    eta2: float | None
    ss_between: float
    ss_within: float
    ss_total: float
    delta_r2: float | None = None
    universality_calibrated: float | None = None

    @property
    def degenerate(self) -> bool:
        return self.eta2 is None


def eta_squared(
    w: np.ndarray,
    categories,
    *,
    image_ids: list[str] | None = None,
    model_id: str = "anonymous",
    dim: int = 0,
) -> DimensionContent:
    """Fraction of loading variance explained by category membership.

    categories may be a CategoryIndex (then image_ids gives the loading
    order) or an integer label array aligned with w. A constant loading
    vector has no variance to decompose and is flagged as degenerate.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    if isinstance(categories, CategoryIndex):
        if image_ids is None:
            raise ValidationError("image_ids are required with a CategoryIndex")
        labels = categories.labels_for(image_ids)
        if categories.balanced:
            counts = np.bincount(labels)
            if len(set(counts.tolist())) != 1:
                raise ValidationError(
                    "balanced mode is set but category sizes differ"
                )
    else:
        labels = np.asarray(categories)
    if labels.shape[0] != w.shape[0]:
        raise ValidationError("loadings and category labels differ in length")
    codes, inverse = np.unique(labels, return_inverse=True)
    if len(codes) < 2:
        raise ValidationError("need at least two categories")
    grand = w.mean()
    ss_total = float(((w - grand) ** 2).sum())
    group_sums = np.bincount(inverse, weights=w)
    group_counts = np.bincount(inverse).astype(np.float64)
    group_means = group_sums / group_counts
    ss_between = float((group_counts * (group_means - grand) ** 2).sum())
    ss_within = float(((w - group_means[inverse]) ** 2).sum())
    # A constant loading leaves only accumulated round-off in ss_total;
    # scale the zero test accordingly instead of comparing exactly.
    eps = float(np.finfo(np.float64).eps)
    degenerate_floor = eps * eps * max(float(w @ w), 1.0) * w.size
    if ss_total <= degenerate_floor:
        return DimensionContent(
            model_id=model_id,
            dim=dim,
            eta2=None,
            ss_between=0.0,
            ss_within=0.0,
            ss_total=0.0,
        )
    return DimensionContent(
        model_id=model_id,
        dim=dim,
        eta2=ss_between / ss_total,
        ss_between=ss_between,
        ss_within=ss_within,
        ss_total=ss_total,
    )


def variance_fraction_by_decile(
    contents: list[DimensionContent],
    universality_scores: list[float],
    *,
    per_dimension_mean: bool = False,
) -> list[dict]:
    """Between/within variance fractions per recurrence-score decile.

    Default pools summed SS within each decile; the per-dimension-mean
    variant averages each dimension's own fractions instead. Deciles are
    filled lowest score first, sizes differing by at most one.
    """
    if len(contents) != len(universality_scores):
        raise ValidationError("contents and scores must align")
    usable = [
        (score, content)
        for score, content in zip(universality_scores, contents)
        if not content.degenerate
    ]
    if len(usable) < 10:
        raise ValidationError("decile table needs at least 10 usable dimensions")
    order = sorted(range(len(usable)), key=lambda i: (usable[i][0], i))
    buckets = np.array_split(np.array(order), 10)
    rows = []
    for decile, bucket in enumerate(buckets):
        items = [usable[i][1] for i in bucket]
        if per_dimension_mean:
            between = float(np.mean([c.ss_between / c.ss_total for c in items]))
            within = float(np.mean([c.ss_within / c.ss_total for c in items]))
        else:
            total = sum(c.ss_total for c in items)
            between = sum(c.ss_between for c in items) / total
            within = sum(c.ss_within for c in items) / total
        rows.append(
            {
                "decile": decile + 1,
                "n_dimensions": len(items),
                "between_fraction": float(between),
                "within_fraction": float(within),
            }
        )
    return rows


def reconstruction_importance(S, W: np.ndarray, k: int) -> float:
    """Drop in explained variance when dimension k's column is zeroed."""
    W = np.asarray(W, dtype=np.float64)
    if not (0 <= k < W.shape[1]):
        raise ValidationError(f"dimension {k} out of range for rank {W.shape[1]}")
    full = explained_variance(S, W)
    reduced = W.copy()
    reduced[:, k] = 0.0
    return float(full - explained_variance(S, reduced))


def all_reconstruction_importances(S, W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    return np.array(
        [reconstruction_importance(S, W, k) for k in range(W.shape[1])]
    )


def content_universality_correlations(
    contents: list[DimensionContent],
) -> dict:
    """Rank correlations of category consistency and reconstruction
    importance with the calibrated recurrence score.

    Degenerate dimensions are excluded and counted. The importance
    correlation is reported both pooled and as the median of per-model
    coefficients.
    """
    usable = [
        c
        for c in contents
        if not c.degenerate and c.universality_calibrated is not None
    ]
    excluded = len(contents) - len(usable)
    if len(usable) < 3:
        raise ValidationError("need at least three non-degenerate dimensions")
    uni = [c.universality_calibrated for c in usable]
    eta = [c.eta2 for c in usable]
    out = {
        "rho_eta2": spearman(eta, uni).coefficient,
        "excluded_dimensions": excluded,
    }
    with_dr2 = [c for c in usable if c.delta_r2 is not None]
    if len(with_dr2) >= 3:
        out["rho_delta_r2_pooled"] = spearman(
            [c.delta_r2 for c in with_dr2],
            [c.universality_calibrated for c in with_dr2],
        ).coefficient
        per_model: dict[str, list[DimensionContent]] = {}
        for c in with_dr2:
            per_model.setdefault(c.model_id, []).append(c)
        rhos = []
        for items in per_model.values():
            if len(items) >= 3:
                rhos.append(
                    spearman(
                        [c.delta_r2 for c in items],
                        [c.universality_calibrated for c in items],
                    ).coefficient
                )
        if rhos:
            out["rho_delta_r2_per_model_median"] = float(np.median(rhos))
    return out


def label_crosstab(
    labels: dict[int, str], universality_scores: list[float], n_bins: int = 4
) -> list[dict]:
    """Cross-tabulate human dimension labels against recurrence-score
    bins. Labels arrive as {dimension_index: label}; dimensions without
    a label are skipped."""
    allowed = {"semantic", "visual", "both", "neither"}
    bad = {v for v in labels.values() if v not in allowed}
    if bad:
        raise ValidationError(f"unknown dimension labels {sorted(bad)}")
    pairs = [
        (universality_scores[k], label)
        for k, label in labels.items()
        if 0 <= k < len(universality_scores)
    ]
    if not pairs:
        return []
    scores = np.array([p[0] for p in pairs])
    edges = np.quantile(scores, np.linspace(0.0, 1.0, n_bins + 1))
    rows = []
    for b in range(n_bins):
        lo, hi = edges[b], edges[b + 1]
        if b < n_bins - 1:
            mask = (scores >= lo) & (scores < hi)
        else:
            mask = (scores >= lo) & (scores <= hi)
        counts = {label: 0 for label in sorted(allowed)}
        for i in np.flatnonzero(mask):
            counts[pairs[i][1]] += 1
        rows.append(
            {
                "bin": b + 1,
                "score_low": float(lo),
                "score_high": float(hi),
                **counts,
            }
        )
    return rows
