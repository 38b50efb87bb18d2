"""Evaluation of embeddings against reference data: cross-validated
ridge encoding of per-channel neural responses with reliability
filtering and noise ceilings, and triplet odd-one-out accuracy with
half-masked embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .artifacts import read_csv
from .errors import NumericalError, ValidationError
from .npy import read_npy
from .rng import PURPOSE_FOLDS, derive_rng

RELIABILITY_THRESHOLD = 0.3


@dataclass
class NeuralDataset:
    """Pre-averaged, z-scored responses: one column per channel."""

    responses: np.ndarray
    channel_ids: list[str]
    reliabilities: np.ndarray
    subject_id: str

    def __post_init__(self) -> None:
        self.responses = np.asarray(self.responses, dtype=np.float64)
        self.reliabilities = np.asarray(self.reliabilities, dtype=np.float64)
        if self.responses.ndim != 2:
            raise ValidationError("responses must be a 2-D matrix")
        p = self.responses.shape[1]
        if len(self.channel_ids) != p or self.reliabilities.shape[0] != p:
            raise ValidationError("channel metadata does not match responses")
        if np.any(self.reliabilities < -1.0) or np.any(self.reliabilities > 1.0):
            raise ValidationError("reliabilities must lie in [-1, 1]")

    def retained(self, threshold: float = RELIABILITY_THRESHOLD) -> np.ndarray:
        return np.flatnonzero(self.reliabilities > threshold)


def load_neural_data(npy_path, csv_path) -> list[NeuralDataset]:
    """Response NPY plus channel CSV -> one dataset per subject.

    CSV rows align with response columns in file order; subjects keep
    their first-appearance order.
    """
    responses = read_npy(npy_path).astype(np.float64)
    columns, rows = read_csv(csv_path)
    required = {"channel_id", "reliability", "subject"}
    if not required.issubset(columns):
        raise ValidationError(
            f"channel table must provide columns {sorted(required)}"
        )
    if responses.ndim != 2 or responses.shape[1] != len(rows):
        raise ValidationError("channel table does not match response columns")
    by_subject: dict[str, list[int]] = {}
    for idx, row in enumerate(rows):
        by_subject.setdefault(row["subject"], []).append(idx)
    datasets = []
    for subject, indices in by_subject.items():
        datasets.append(
            NeuralDataset(
                responses=responses[:, indices],
                channel_ids=[rows[i]["channel_id"] for i in indices],
                reliabilities=np.array(
                    [float(rows[i]["reliability"]) for i in indices]
                ),
                subject_id=subject,
            )
        )
    return datasets


def fold_indices(n: int, folds: int, rng_seed: int) -> list[np.ndarray]:
    """Deterministic disjoint fold assignment covering range(n)."""
    if folds < 2:
        raise ValidationError("need at least two folds")
    if n < 2 * folds:
        raise ValidationError(f"{n} rows cannot support {folds} folds")
    perm = derive_rng(rng_seed, PURPOSE_FOLDS).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def ridge_solve(x: np.ndarray, y: np.ndarray, penalty: float) -> np.ndarray:
    """Closed-form ridge coefficients, no intercept or centering."""
    r = x.shape[1]
    gram = x.T @ x + penalty * np.eye(r)
    return np.linalg.solve(gram, x.T @ y)


def select_penalty(
    x_train: np.ndarray, y_train: np.ndarray, ridge_grid
) -> float:
    """Pick the grid penalty minimizing MSE on a single 80/20 split of
    the training rows (last fifth validates). First minimum wins."""
    grid = [float(g) for g in ridge_grid]
    if not grid:
        raise ValidationError("ridge grid is empty")
    n_tr = x_train.shape[0]
    n_val = max(1, round(0.2 * n_tr))
    if n_val >= n_tr:
        raise ValidationError("training fold too small for penalty selection")
    x_inner, y_inner = x_train[:-n_val], y_train[:-n_val]
    x_val, y_val = x_train[-n_val:], y_train[-n_val:]
    best_penalty, best_mse = grid[0], np.inf
    for penalty in grid:
        beta = ridge_solve(x_inner, y_inner, penalty)
        mse = float(np.mean((x_val @ beta - y_val) ** 2))
        if mse < best_mse:
            best_penalty, best_mse = penalty, mse
    return best_penalty


def fold_fit(
    x: np.ndarray,
    y: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    ridge_grid,
) -> tuple[float, np.ndarray, np.ndarray]:
    """One fold: penalty from the training rows only, then fit and
    predict. Returns (penalty, coefficients, held-out predictions)."""
    penalty = select_penalty(x[train_idx], y[train_idx], ridge_grid)
    beta = ridge_solve(x[train_idx], y[train_idx], penalty)
    return penalty, beta, x[test_idx] @ beta


def _pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def ridge_encode(
    w, y: np.ndarray, folds: int, ridge_grid, rng_seed: int
) -> float:
    """Held-out Pearson r of cross-validated ridge predictions."""
    x = np.asarray(getattr(w, "values", w), dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise ValidationError("embedding rows and response length differ")
    if float(np.var(y)) == 0.0:
        raise NumericalError("response has zero variance; score undefined")
    predictions = np.empty_like(y)
    all_idx = np.arange(x.shape[0])
    for test_idx in fold_indices(x.shape[0], folds, rng_seed):
        train_idx = np.setdiff1d(all_idx, test_idx)
        _, _, preds = fold_fit(x, y, train_idx, test_idx, ridge_grid)
        predictions[test_idx] = preds
    return _pearson_r(predictions, y)


@dataclass
class EncodingResult:
    score: float
    subject_means: dict[str, float]
    per_neuron: list[dict] = field(default_factory=list)
    dropped_channels: int = 0


def encoding_score(
    w,
    datasets,
    *,
    folds: int = 5,
    ridge_grid=None,
    rng_seed: int = 0,
    reliability_threshold: float = RELIABILITY_THRESHOLD,
) -> EncodingResult:
    """Mean held-out r over reliable channels, then over subjects."""
    if ridge_grid is None:
        ridge_grid = np.logspace(-2.0, 6.0, 20)
    if isinstance(datasets, NeuralDataset):
        datasets = [datasets]
    if not datasets:
        raise ValidationError("no neural datasets supplied")
    x = np.asarray(getattr(w, "values", w), dtype=np.float64)
    per_neuron = []
    subject_means: dict[str, float] = {}
    dropped = 0
    for dataset in datasets:
        if dataset.responses.shape[0] != x.shape[0]:
            raise ValidationError(
                f"subject {dataset.subject_id} rows do not match embedding"
            )
        keep = dataset.retained(reliability_threshold)
        dropped += dataset.responses.shape[1] - keep.size
        if keep.size == 0:
            raise ValidationError(
                f"subject {dataset.subject_id} has no reliable channels"
            )
        scores = []
        for col in keep:
            reliability = float(dataset.reliabilities[col])
            r = ridge_encode(
                x, dataset.responses[:, col], folds, ridge_grid, rng_seed
            )
            scores.append(r)
            per_neuron.append(
                {
                    "subject": dataset.subject_id,
                    "channel_id": dataset.channel_ids[col],
                    "reliability": reliability,
                    "ceiling": float(np.sqrt(reliability)),
                    "held_out_r": r,
                }
            )
        subject_means[dataset.subject_id] = float(np.mean(scores))
    return EncodingResult(
        score=float(np.mean(list(subject_means.values()))),
        subject_means=subject_means,
        per_neuron=per_neuron,
        dropped_channels=dropped,
    )


@dataclass
class TripletResult:
    accuracy: float
    evaluated: int
    skipped: int
    ties: int


def triplet_accuracy(category_embedding, triplets) -> TripletResult:
    """Fraction of triplets where the most-similar embedding pair is the
    human-chosen pair (i, j). Indices are 0-based with k the odd one
    out; tie on the maximum counts the human pair as predicted."""
    e = np.asarray(
        getattr(category_embedding, "values", category_embedding),
        dtype=np.float64,
    )
    if e.ndim != 2:
        raise ValidationError("category embedding must be 2-D")
    c = e.shape[0]
    norms = np.linalg.norm(e, axis=1)
    correct = skipped = ties = 0
    evaluated = 0
    for i, j, k in triplets:
        if len({i, j, k}) != 3:
            raise ValidationError(f"triplet ({i}, {j}, {k}) repeats an index")
        if not all(0 <= t < c for t in (i, j, k)):
            raise ValidationError(f"triplet ({i}, {j}, {k}) out of range")
        if norms[i] == 0.0 or norms[j] == 0.0 or norms[k] == 0.0:
            skipped += 1
            continue
        sims = np.array(
            [
                e[i] @ e[j] / (norms[i] * norms[j]),
                e[i] @ e[k] / (norms[i] * norms[k]),
                e[j] @ e[k] / (norms[j] * norms[k]),
            ]
        )
        if np.count_nonzero(sims == sims.max()) > 1:
            ties += 1
        if int(np.argmax(sims)) == 0:
            correct += 1
        evaluated += 1
    if evaluated == 0:
        raise ValidationError("no evaluable triplets")
    return TripletResult(
        accuracy=correct / evaluated,
        evaluated=evaluated,
        skipped=skipped,
        ties=ties,
    )


def load_triplets(path) -> list[tuple[int, int, int]]:
    """Triplet CSV with 1-based (i, j, k_odd_one_out) -> 0-based tuples."""
    columns, rows = read_csv(path)
    required = ["i", "j", "k_odd_one_out"]
    if list(columns) != required:
        raise ValidationError(f"triplet table must have columns {required}")
    out = []
    for row in rows:
        try:
            i, j, k = (int(row[c]) for c in required)
        except ValueError as exc:
            raise ValidationError(f"non-integer triplet row {row}") from exc
        if min(i, j, k) < 1:
            raise ValidationError("triplet indices are 1-based")
        out.append((i - 1, j - 1, k - 1))
    return out


def half_mask(calibrated_scores) -> tuple[np.ndarray, np.ndarray]:
    """Split dimensions at the median calibrated score.

    Sorting by score descending (index ascending on ties) and taking the
    first ceil(r/2) sends median-tied dimensions to the universal half;
    halves are disjoint and differ in size by at most one.
    """
    scores = np.asarray(calibrated_scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] < 2:
        raise ValidationError("need at least two dimension scores")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("calibrated scores must be finite")
    r = scores.shape[0]
    order = sorted(range(r), key=lambda k: (-scores[k], k))
    cut = (r + 1) // 2
    universal = np.sort(np.array(order[:cut]))
    specific = np.sort(np.array(order[cut:]))
    return universal, specific


def half_masked_evaluation(matrix, calibrated_scores, evaluate) -> dict:
    """Zero the complementary columns and rerun the evaluator on each
    half. The two masked matrices sum to the original elementwise."""
    m = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    scores = np.asarray(calibrated_scores, dtype=np.float64)
    if m.shape[1] != scores.shape[0]:
        raise ValidationError("scores do not cover the embedding columns")
    universal, specific = half_mask(scores)
    masked_u = np.zeros_like(m)
    masked_u[:, universal] = m[:, universal]
    masked_s = m - masked_u
    return {
        "universal_half_score": evaluate(masked_u),
        "specific_half_score": evaluate(masked_s),
        "universal_dims": universal.tolist(),
        "specific_dims": specific.tolist(),
    }


def alignment_universality_correlation(model_scores, u_values):
    """Pearson r (with two-sided p) between per-model evaluation scores
    and model-level universality."""
    from .stats import pearson

    if len(model_scores) < 3:
        raise ValidationError("need at least three models")
    return pearson(model_scores, u_values)
