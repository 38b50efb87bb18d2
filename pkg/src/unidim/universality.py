"""Cross-model dimension recurrence scoring.

For every ordered model pair, columns are matched one-to-one by squared
cosine similarity through an exact assignment solver; a dimension's raw
score is its mean matched agreement across all other models. Because
nonnegative loadings give unrelated dimensions a positive similarity
floor, raw scores are calibrated against a permutation null: partner
rows are shuffled, the matching is re-solved per draw, and the
per-dimension threshold is an upper percentile of the null partner-mean
scores. Adjusted scores are clipped to [0, 1] per pair and averaged.

Also here: the greedy-matching diagnostic, the nonnegative-cone
projection diagnostic, linear CKA for convergent validity, the
within-model seed-stability ceiling, and ranking-robustness resampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import Embedding
from .assignment import nnls, solve_assignment
from .errors import NumericalError, ValidationError
from .rng import PURPOSE_NULL, PURPOSE_RESAMPLE, derive_rng


def _loading_matrix(obj) -> np.ndarray:
    W = obj.W if isinstance(obj, Embedding) else obj
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValidationError(f"expected an N x r loading matrix, got shape {W.shape}")
    return W


def cos2(u: np.ndarray, v: np.ndarray) -> float:
    """Squared cosine similarity of two loading vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValidationError("vectors must have equal length")
    nu = float(u @ u)
    nv = float(v @ v)
    if nu == 0.0 or nv == 0.0:
        raise NumericalError("squared cosine of a zero vector is undefined")
    dot = float(u @ v)
    return min(1.0, (dot * dot) / (nu * nv))


def _normalized_columns(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->j", W, W))
    zero = norms == 0.0
    out = W / np.where(zero, 1.0, norms)
    return out, zero


def cos2_matrix(A, B) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All-pairs squared cosine profits plus zero-column flags.

    Zero columns contribute zero profit everywhere but still occupy an
    assignment slot, so one-to-one matching stays well defined.
    """
    Wa = _loading_matrix(A)
    Wb = _loading_matrix(B)
    if Wa.shape != Wb.shape:
        raise ValidationError(f"shape mismatch: {Wa.shape} vs {Wb.shape}")
    An, za = _normalized_columns(Wa)
    Bn, zb = _normalized_columns(Wb)
    M = An.T @ Bn
    profits = np.clip(M * M, 0.0, 1.0)
    return profits, za, zb


@dataclass
class MatchResult:
    source_model: str
    target_model: str
    permutation: np.ndarray
    scores: np.ndarray
    zero_flags: np.ndarray


def match_models(A, B) -> MatchResult:
    """Optimal one-to-one column matching by total squared cosine."""
    profits, za, zb = cos2_matrix(A, B)
    perm, _ = solve_assignment(profits)
    scores = profits[np.arange(profits.shape[0]), perm]
    return MatchResult(
        source_model=A.model_id if isinstance(A, Embedding) else "source",
        target_model=B.model_id if isinstance(B, Embedding) else "target",
        permutation=perm,
        scores=scores,
        zero_flags=za | zb[perm],
    )


@dataclass
class GreedyResult:
    chosen_source: np.ndarray
    unselected_fraction: float


def greedy_match_diagnostic(A, B) -> GreedyResult:
    """Each target column takes its single best source column, without
    any exclusivity; reports the fraction of source columns that are
    never anyone's best match. Diagnostic only."""
    profits, _, _ = cos2_matrix(A, B)
    chosen = profits.argmax(axis=0)
    r = profits.shape[0]
    unselected = 1.0 - len(np.unique(chosen)) / r
    return GreedyResult(chosen_source=chosen, unselected_fraction=float(unselected))


def raw_universality(m, others: list) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean matched squared cosine across all other models.

    Returns (means, pair_scores) with pair_scores of shape
    (len(others), r) in the given partner order.
    """
    if not others:
        raise ValidationError("universality needs at least one other model")
    rows = [match_models(m, other).scores for other in others]
    pair_scores = np.stack(rows)
    return pair_scores.mean(axis=0), pair_scores


def null_thresholds(
    m,
    others: list,
    b_perm: int,
    percentile: float,
    rng_seed,
    *,
    return_null: bool = False,
):
    """Per-dimension null thresholds from row-shuffled partners.

    For each of b_perm draws, every partner's rows are shuffled with an
    independent stream keyed by (seed, partner, draw); the matching is
    re-solved and the partner-mean matched score recorded. The threshold
    is the requested empirical percentile of those null means.
    """
    if b_perm < 2:
        raise ValidationError("at least two permutation draws are required")
    if not (0.0 < percentile < 1.0):
        raise ValidationError("percentile must lie in (0, 1)")
    if not others:
        raise ValidationError("null thresholds need at least one other model")
    seed_parts = rng_seed if isinstance(rng_seed, tuple) else (rng_seed,)
    Wm = _loading_matrix(m)
    n, r = Wm.shape
    An, _ = _normalized_columns(Wm)
    null_sums = np.zeros((b_perm, r))
    dims = np.arange(r)
    chunk = max(1, min(b_perm, 512))
    for p_idx, other in enumerate(others):
        Wo = _loading_matrix(other)
        if Wo.shape != Wm.shape:
            raise ValidationError("all embeddings must share N and r")
        Bn, _ = _normalized_columns(Wo)
        for start in range(0, b_perm, chunk):
            stop = min(start + chunk, b_perm)
            perms = np.stack(
                [
                    derive_rng(*seed_parts, PURPOSE_NULL, p_idx, b).permutation(n)
                    for b in range(start, stop)
                ]
            )
            grams = np.matmul(An.T[None, :, :], Bn[perms])
            profits = grams * grams
            for t in range(stop - start):
                perm, _ = solve_assignment(profits[t])
                null_sums[start + t] += profits[t][dims, perm]
    null_means = null_sums / len(others)
    thresholds = np.quantile(null_means, percentile, axis=0)
    if return_null:
        return thresholds, null_means
    return thresholds


def calibrate(
    pair_scores: np.ndarray, thresholds: np.ndarray
) -> tuple[np.ndarray, float]:
    """Null-adjust matched scores: ((s - a) / (1 - a)) clipped to [0, 1]
    per pair, averaged over partner models; plus the model-level mean."""
    pair_scores = np.atleast_2d(np.asarray(pair_scores, dtype=np.float64))
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if pair_scores.shape[1] != thresholds.shape[0]:
        raise ValidationError("pair scores and thresholds disagree on r")
    if (thresholds < 0.0).any() or (thresholds >= 1.0).any():
        raise NumericalError("null thresholds must lie in [0, 1)")
    adjusted = np.clip((pair_scores - thresholds) / (1.0 - thresholds), 0.0, 1.0)
    calibrated = adjusted.mean(axis=0)
    return calibrated, float(calibrated.mean())


def exceedance_rate(pair_scores: np.ndarray, thresholds: np.ndarray) -> float:
    """Fraction of per-pair raw scores exceeding their dimension's
    threshold, before any clipping."""
    pair_scores = np.atleast_2d(np.asarray(pair_scores, dtype=np.float64))
    return float((pair_scores > np.asarray(thresholds)).mean())


def relabel_to_reference(reference, embedding) -> np.ndarray:
    """Return the embedding's loadings with columns permuted into the
    reference's dimension order (squared-cosine optimal)."""
    result = match_models(reference, embedding)
    W = _loading_matrix(embedding)
    return W[:, result.permutation]


def stability_ceiling(
    seed_embeddings: list,
    thresholds: np.ndarray,
    *,
    central_seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Within-model agreement ceiling across seed refits.

    Every seed's columns are first relabeled into the retained central
    seed's dimension order; per-dimension squared cosines are averaged
    over all seed pairs and calibrated with the same thresholds used for
    cross-model scores. Returns (raw, calibrated) per dimension.
    """
    if len(seed_embeddings) < 2:
        raise ValidationError("stability ceiling needs at least two seeds")
    central = None
    for emb in seed_embeddings:
        if emb.seed == central_seed:
            central = emb
            break
    if central is None:
        raise ValidationError(f"central seed {central_seed} not among the refits")
    relabeled = [
        _loading_matrix(central)
        if emb is central
        else relabel_to_reference(central, emb)
        for emb in seed_embeddings
    ]
    pairs = []
    for i in range(len(relabeled)):
        for j in range(i + 1, len(relabeled)):
            Ai, _ = _normalized_columns(relabeled[i])
            Aj, _ = _normalized_columns(relabeled[j])
            dots = np.einsum("nk,nk->k", Ai, Aj)
            pairs.append(np.clip(dots * dots, 0.0, 1.0))
    pair_scores = np.stack(pairs)
    raw = pair_scores.mean(axis=0)
    calibrated, _ = calibrate(pair_scores, thresholds)
    return raw, calibrated


def cone_projection_score(w: np.ndarray, W_target) -> float:
    """Fraction of a dimension's variance captured by the nonnegative
    span of another model's dimensions. Diagnostic only."""
    w = np.asarray(w, dtype=np.float64).ravel()
    norm_sq = float(w @ w)
    if norm_sq == 0.0:
        raise NumericalError("cone projection of a zero vector is undefined")
    W = _loading_matrix(W_target)
    if W.shape[0] != w.shape[0]:
        raise ValidationError("vector length must match the target's row count")
    _, residual = nnls(W, w)
    score = 1.0 - (residual * residual) / norm_sq
    return float(min(1.0, max(0.0, score)))


def _double_center(K: np.ndarray) -> np.ndarray:
    row = K.mean(axis=0, keepdims=True)
    col = K.mean(axis=1, keepdims=True)
    return K - row - col + K.mean()


def cka_linear(a, b, *, kind: str = "features") -> float:
    """Linear centered-kernel alignment between two representations.

    kind="features": inputs are N x d activation matrices (gram built
    internally). kind="gram": inputs are N x N gram matrices.
    """
    A = np.asarray(a.values if hasattr(a, "values") else a, dtype=np.float64)
    B = np.asarray(b.values if hasattr(b, "values") else b, dtype=np.float64)
    if kind == "features":
        if A.shape[0] != B.shape[0]:
            raise ValidationError("feature matrices must share N")
        Ka = A @ A.T
        Kb = B @ B.T
    elif kind == "gram":
        if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("gram matrices must be square and equal-shaped")
        Ka, Kb = A, B
    else:
        raise ValidationError(f"unknown input kind {kind!r}")
    Kac = _double_center(Ka)
    Kbc = _double_center(Kb)
    na = float(np.sqrt(np.einsum("ij,ij->", Kac, Kac)))
    nb = float(np.sqrt(np.einsum("ij,ij->", Kbc, Kbc)))
    if na == 0.0 or nb == 0.0:
        raise NumericalError("CKA undefined for a constant representation")
    value = float(np.einsum("ij,ij->", Kac, Kbc)) / (na * nb)
    return float(min(1.0, max(0.0, value)))


# ---------------------------------------------------------------------------
# Ensemble-level scoring and resampling


@dataclass
class EnsembleScores:
    model_ids: list[str]
    partner_ids: list[list[str]]
    pair_scores: list[np.ndarray]
    thresholds: list[np.ndarray]
    raw: list[np.ndarray]
    calibrated: list[np.ndarray]
    model_means: np.ndarray
    permutations: int
    percentile: float

    def means_within(self, keep: set[str]) -> dict[str, float]:
        """Model-level means recomputed over a model subset with the
        full-set thresholds held fixed."""
        out: dict[str, float] = {}
        for i, model_id in enumerate(self.model_ids):
            if model_id not in keep:
                continue
            mask = np.array([pid in keep for pid in self.partner_ids[i]])
            if not mask.any():
                continue
            _, mean = calibrate(self.pair_scores[i][mask], self.thresholds[i])
            out[model_id] = mean
        return out


def score_one_model(payload):
    """One model's scoring pass, shaped for pool.map: payload is
    (embeddings, i, permutations, percentile, rng_seed)."""
    embeddings, i, permutations, percentile, rng_seed = payload
    emb = embeddings[i]
    others = [e for j, e in enumerate(embeddings) if j != i]
    raw_i, pairs_i = raw_universality(emb, others)
    thr_i = null_thresholds(
        emb, others, permutations, percentile, (rng_seed, i)
    )
    cal_i, mean_i = calibrate(pairs_i, thr_i)
    return [o.model_id for o in others], pairs_i, thr_i, raw_i, cal_i, mean_i


def score_ensemble(
    embeddings: list[Embedding],
    *,
    permutations: int,
    percentile: float,
    rng_seed: int,
    mapper=None,
) -> EnsembleScores:
    """Raw, null-calibrated, and model-level scores for a whole ensemble.

    mapper, when given, is a map-like callable (e.g. a process pool's
    .map) used to fan the per-model passes out; results are identical to
    the serial path because every model derives its own seed stream.
    """
    if len(embeddings) < 2:
        raise ValidationError("ensemble scoring needs at least two models")
    ids = [e.model_id for e in embeddings]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate model ids in the ensemble")
    payloads = [
        (embeddings, i, permutations, percentile, rng_seed)
        for i in range(len(embeddings))
    ]
    results = list((mapper or map)(score_one_model, payloads))
    partner_ids: list[list[str]] = []
    pair_scores: list[np.ndarray] = []
    thresholds: list[np.ndarray] = []
    raw: list[np.ndarray] = []
    calibrated: list[np.ndarray] = []
    means = np.zeros(len(embeddings))
    for i, (pids, pairs_i, thr_i, raw_i, cal_i, mean_i) in enumerate(results):
        partner_ids.append(pids)
        pair_scores.append(pairs_i)
        thresholds.append(thr_i)
        raw.append(raw_i)
        calibrated.append(cal_i)
        means[i] = mean_i
    return EnsembleScores(
        model_ids=ids,
        partner_ids=partner_ids,
        pair_scores=pair_scores,
        thresholds=thresholds,
        raw=raw,
        calibrated=calibrated,
        model_means=means,
        permutations=permutations,
        percentile=percentile,
    )


def resample_universality(
    scores: EnsembleScores,
    families: dict[str, str] | None,
    mode: str,
    *,
    fraction: float = 0.5,
    iters: int = 200,
    rng_seed: int = 0,
) -> list[dict]:
    """Ranking robustness of model-level scores under model resampling.

    mode="bootstrap_subsample": repeatedly keep a random model subset of
    the given fraction and correlate subset rankings with the full-set
    ranking. mode="leave_family_out": rescore every model using only
    partners from other families; one correlation for the whole set.
    """
    from .stats import spearman

    full = dict(zip(scores.model_ids, scores.model_means))
    rows: list[dict] = []
    if mode == "bootstrap_subsample":
        if not (0.0 < fraction <= 1.0):
            raise ValidationError("fraction must lie in (0, 1]")
        if iters < 1:
            raise ValidationError("iters must be positive")
        m = len(scores.model_ids)
        size = max(2, int(round(fraction * m)))
        rng = derive_rng(rng_seed, PURPOSE_RESAMPLE)
        rhos = []
        for _ in range(iters):
            chosen = rng.choice(m, size=size, replace=False)
            keep = {scores.model_ids[i] for i in chosen}
            resampled = scores.means_within(keep)
            if len(resampled) < 3:
                continue
            ids = sorted(resampled)
            rho = spearman(
                [full[i] for i in ids], [resampled[i] for i in ids]
            ).coefficient
            rhos.append(rho)
        if not rhos:
            raise NumericalError("no resample produced enough models to rank")
        rhos_arr = np.array(rhos)
        rows.append(
            {
                "mode": "bootstrap_subsample",
                "fraction": float(fraction),
                "iters": int(iters),
                "n_used": len(rhos),
                "rho_median": float(np.median(rhos_arr)),
                "rho_low": float(np.quantile(rhos_arr, 0.025)),
                "rho_high": float(np.quantile(rhos_arr, 0.975)),
            }
        )
    elif mode == "leave_family_out":
        if not families:
            raise ValidationError("leave-family-out needs family labels")
        resampled: dict[str, float] = {}
        skipped = 0
        for i, model_id in enumerate(scores.model_ids):
            fam = families.get(model_id)
            if fam is None:
                raise ValidationError(f"model {model_id!r} has no family label")
            keep = {
                pid
                for pid in scores.partner_ids[i]
                if families.get(pid) != fam
            }
            keep.add(model_id)
            means = scores.means_within(keep)
            if model_id in means:
                resampled[model_id] = means[model_id]
            else:
                skipped += 1
        if len(resampled) < 3:
            raise NumericalError(
                "fewer than three models have out-of-family partners"
            )
        ids = sorted(resampled)
        rho = spearman(
            [full[i] for i in ids], [resampled[i] for i in ids]
        ).coefficient
        rows.append(
            {
                "mode": "leave_family_out",
                "fraction": None,
                "iters": None,
                "n_used": len(resampled),
                "rho_median": float(rho),
                "rho_low": None,
                "rho_high": None,
            }
        )
        if skipped:
            rows[-1]["skipped"] = skipped
    else:
        raise ValidationError(f"unknown resampling mode {mode!r}")
    return rows
