"""Symmetric nonnegative matrix factorization and fit selection.

Minimizes 0.5 * ||S - W W^T||_F^2 over W >= 0 by cyclic column-block
updates: each column takes a projected-gradient step under an adaptive
quadratic majorizer whose curvature is doubled until the exactly
evaluated block objective does not increase. Accepted iterates therefore
never increase the objective, nonnegativity is preserved by the
projection, and the whole trajectory is deterministic for a fixed seed.

Multi-seed refits, the stability/explained-variance bandwidth selection,
and central-seed choice live here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import Embedding, SimilarityMatrix
from .errors import NumericalError, ValidationError

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 500


def _as_matrix(S) -> tuple[np.ndarray, str, float]:
    if isinstance(S, SimilarityMatrix):
        return (
            np.asarray(S.values, dtype=np.float64),
            S.model_id,
            float(S.alpha),
        )
    return np.asarray(S, dtype=np.float64), "anonymous", 0.0


def check_factorizable(S: np.ndarray, *, psd_tol: float = 1e-6) -> None:
    """Validate that S is square, symmetric, nonnegative, and PSD within
    tolerance. Raises ValidationError otherwise."""
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {S.shape}")
    scale = max(1.0, float(np.abs(S).max()))
    if float(np.abs(S - S.T).max()) > 1e-6 * scale:
        raise ValidationError("input matrix is not symmetric within tolerance")
    if float(S.min()) < -1e-12 * scale:
        raise ValidationError("input matrix has negative entries")
    eigenvalues = np.linalg.eigvalsh((S + S.T) / 2.0)
    lam_max = max(float(eigenvalues.max()), np.finfo(float).tiny)
    if float(eigenvalues.min()) < -psd_tol * lam_max:
        raise ValidationError(
            f"input matrix is not PSD within tolerance "
            f"(min eigenvalue {eigenvalues.min():g}, max {lam_max:g})"
        )


def _objective(S: np.ndarray, W: np.ndarray) -> float:
    residual = S - W @ W.T
    return 0.5 * float(np.einsum("ij,ij->", residual, residual))


def snmf_fit(
    S,
    r: int,
    seed: int,
    *,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    check_psd: bool = True,
    model_id: str | None = None,
    alpha: float | None = None,
    trace_out: list | None = None,
) -> Embedding:
    """Fit W >= 0 of the given rank to a symmetric nonnegative matrix.

    Terminates when the relative objective decrease falls below tol or
    after max_iters sweeps; non-convergence is reported through the
    returned record, never silently. Pass a list as trace_out to receive
    the per-sweep objective values.
    """
    S, inferred_id, inferred_alpha = _as_matrix(S)
    if model_id is None:
        model_id = inferred_id
    if alpha is None:
        alpha = inferred_alpha
    n = S.shape[0] if S.ndim == 2 else 0
    if not (1 <= r < n):
        raise ValidationError(f"rank must satisfy 1 <= r < N, got r={r}, N={n}")
    if check_psd:
        check_factorizable(S)
    if tol <= 0 or max_iters < 1:
        raise ValidationError("tol must be positive and max_iters at least 1")

    rng = np.random.default_rng(seed)
    mean_s = float(S.mean())
    init_scale = np.sqrt(max(mean_s, np.finfo(float).tiny) / r)
    # Uniform on (0, init_scale]: 1 - random() lies in (0, 1].
    W = (1.0 - rng.random((n, r))) * init_scale

    G = W.T @ W
    SW = S @ W
    L_init = max(1e-8, 2.0 * float(np.linalg.norm(S)))
    L_cols = np.full(r, L_init)
    trace = [_objective(S, W)]
    converged = False
    iterations = 0

    for sweep in range(1, max_iters + 1):
        W_prev = W.copy()
        G_prev = G.copy()
        SW_prev = SW.copy()
        for k in range(r):
            w = W[:, k]
            grad = 2.0 * (W @ G[:, k] - SW[:, k])
            h_current = (
                -float(w @ SW[:, k])
                + float(G[:, k] @ G[:, k])
                - 0.5 * float(G[k, k]) ** 2
            )
            L = L_cols[k]
            accepted = False
            for _ in range(200):
                x = np.maximum(0.0, w - grad / L)
                if np.array_equal(x, w):
                    # The step vanished at working precision: the column
                    # is stationary; keep the state untouched.
                    accepted = True
                    break
                sx = S @ x
                u = W.T @ x
                nn = float(x @ x)
                h_candidate = (
                    -float(x @ sx)
                    + float(u @ u)
                    - float(u[k]) ** 2
                    + 0.5 * nn * nn
                )
                if h_candidate <= h_current:
                    W[:, k] = x
                    SW[:, k] = sx
                    u[k] = nn
                    G[:, k] = u
                    G[k, :] = u
                    L_cols[k] = max(1e-8, 0.5 * L)
                    accepted = True
                    break
                L *= 2.0
            if not accepted:
                # No improving step at any tried curvature: leave the
                # column unchanged and reset the runaway estimate.
                L_cols[k] = L_init
        f_new = _objective(S, W)
        f_prev = trace[-1]
        if f_new > f_prev:
            # Round-off level increase at stationarity: reject the sweep.
            W, G, SW = W_prev, G_prev, SW_prev
            converged = True
            iterations = sweep - 1
            break
        trace.append(f_new)
        iterations = sweep
        if (f_prev - f_new) <= tol * max(f_prev, np.finfo(float).tiny):
            converged = True
            break

    if trace_out is not None:
        trace_out.extend(trace)
    objective = trace[-1]
    return Embedding(
        model_id=model_id,
        W=W,
        rank=r,
        seed=int(seed),
        alpha=float(alpha),
        objective=float(objective),
        explained_variance=explained_variance(S, W),
        iterations=iterations,
        converged=converged,
    )


def explained_variance(S, W: np.ndarray) -> float:
    """1 - ||S - W W^T||_F^2 / ||S||_F^2, clamped to [0, 1] for reporting."""
    S, _, _ = _as_matrix(S)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != S.shape[0]:
        raise ValidationError(f"shape mismatch: S {S.shape}, W {W.shape}")
    total = float(np.einsum("ij,ij->", S, S))
    if total == 0.0:
        return 0.0
    residual = S - W @ W.T
    ratio = float(np.einsum("ij,ij->", residual, residual)) / total
    return float(min(1.0, max(0.0, 1.0 - ratio)))


@dataclass
class AlignResult:
    permutation: np.ndarray
    correlations: np.ndarray
    zero_variance: np.ndarray


def _standardized_columns(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    W = np.asarray(W, dtype=np.float64)
    centered = W - W.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    flagged = norms == 0
    safe = np.where(flagged, 1.0, norms)
    return centered / safe, flagged


def align_embeddings(A, B) -> AlignResult:
    """Match columns one-to-one, maximizing total Pearson correlation.

    Returns the permutation (column of B matched to each column of A),
    the r matched correlations, and flags marking pairs involving a
    zero-variance column (their correlation is defined as 0).
    """
    from .assignment import solve_assignment

    Wa = A.W if isinstance(A, Embedding) else np.asarray(A)
    Wb = B.W if isinstance(B, Embedding) else np.asarray(B)
    if Wa.shape != Wb.shape:
        raise ValidationError(f"shape mismatch: {Wa.shape} vs {Wb.shape}")
    Za, flag_a = _standardized_columns(Wa)
    Zb, flag_b = _standardized_columns(Wb)
    corr = Za.T @ Zb
    corr[flag_a, :] = 0.0
    corr[:, flag_b] = 0.0
    perm, _ = solve_assignment(corr)
    matched = corr[np.arange(corr.shape[0]), perm]
    flags = flag_a | flag_b[perm]
    return AlignResult(
        permutation=perm, correlations=matched, zero_variance=flags
    )


def stability(embeddings: list) -> float:
    """Mean over all seed pairs of the mean matched column correlation.

    May be negative on noise; the bandwidth-selection step clamps at 0.
    """
    if len(embeddings) < 2:
        raise ValidationError("stability needs at least two embeddings")
    values = []
    for i in range(len(embeddings)):
        for j in range(i + 1, len(embeddings)):
            result = align_embeddings(embeddings[i], embeddings[j])
            values.append(float(result.correlations.mean()))
    return float(np.mean(values))


def central_seed_index(embeddings: list) -> int:
    """Index of the seed whose dimensions agree most, on average, with
    every other seed's matched dimensions. Lowest index wins ties."""
    b = len(embeddings)
    if b == 1:
        return 0
    means = np.zeros(b)
    for i in range(b):
        totals = [
            float(align_embeddings(embeddings[i], embeddings[j]).correlations.mean())
            for j in range(b)
            if j != i
        ]
        means[i] = np.mean(totals)
    return int(np.argmax(means))


@dataclass
class FitSelection:
    chosen_alpha: float
    per_alpha: list[dict]
    central_seed: int

    def to_dict(self) -> dict:
        return {
            "chosen_alpha": self.chosen_alpha,
            "per_alpha": self.per_alpha,
            "central_seed": self.central_seed,
        }


def harmonic_mean(a: float, b: float) -> float:
    if a <= 0.0 or b <= 0.0:
        return 0.0
    return 2.0 * a * b / (a + b)


def select_bandwidth(per_alpha: list[tuple[float, list[Embedding]]]) -> FitSelection:
    """Choose the bandwidth multiplier maximizing the harmonic mean of
    seed stability and mean explained variance; ties go to the smaller
    multiplier. Also picks the central seed within the winner."""
    if not per_alpha:
        raise ValidationError("bandwidth selection needs at least one grid point")
    alphas = [alpha for alpha, _ in per_alpha]
    if alphas != sorted(alphas):
        raise ValidationError("per-alpha fits must be in ascending alpha order")
    rows = []
    for alpha, embeddings in per_alpha:
        if not embeddings:
            raise ValidationError(f"no embeddings for alpha={alpha}")
        if len(embeddings) >= 2:
            stab = max(0.0, min(1.0, stability(embeddings)))
        else:
            stab = 1.0
        ev = float(np.mean([e.explained_variance for e in embeddings]))
        rows.append(
            {
                "alpha": float(alpha),
                "stability": stab,
                "explained_variance": ev,
                "harmonic_mean": harmonic_mean(stab, ev),
            }
        )
    values = [row["harmonic_mean"] for row in rows]
    if max(values) <= 0.0:
        raise NumericalError(
            "every grid point is degenerate (harmonic mean 0 throughout)"
        )
    best = int(np.argmax(values))  # first maximum: ties favor smaller alpha
    winner_embeddings = per_alpha[best][1]
    central = central_seed_index(winner_embeddings)
    return FitSelection(
        chosen_alpha=rows[best]["alpha"],
        per_alpha=rows,
        central_seed=int(winner_embeddings[central].seed),
    )


def fit_seeds(
    S,
    r: int,
    seeds: list[int],
    *,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    check_psd: bool = True,
    model_id: str | None = None,
    alpha: float | None = None,
) -> list[Embedding]:
    """Independent restarts over the given seeds; validates S once."""
    matrix, inferred_id, inferred_alpha = _as_matrix(S)
    if check_psd:
        check_factorizable(matrix)
    return [
        snmf_fit(
            matrix,
            r,
            seed,
            tol=tol,
            max_iters=max_iters,
            check_psd=False,
            model_id=model_id if model_id is not None else inferred_id,
            alpha=alpha if alpha is not None else inferred_alpha,
        )
        for seed in seeds
    ]


def rank_sweep(
    S,
    ranks: list[int],
    seeds: list[int],
    *,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> dict[int, list[Embedding]]:
    """Full multi-seed fit per rank, with the seed list shared across
    ranks so per-rank results are comparable."""
    matrix, model_id, alpha = _as_matrix(S)
    check_factorizable(matrix)
    out: dict[int, list[Embedding]] = {}
    for rank in ranks:
        out[rank] = fit_seeds(
            matrix,
            rank,
            seeds,
            tol=tol,
            max_iters=max_iters,
            check_psd=False,
            model_id=model_id,
            alpha=alpha,
        )
    return out
