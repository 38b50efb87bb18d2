"""Linear assignment and nonnegative least squares.

Both solvers are small, exact, and deterministic. The assignment solver
is the shortest-augmenting-path formulation with row/column potentials,
O(n^3); ties are resolved toward the lowest column index. It maximizes
total profit by minimizing the negated matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def solve_assignment(profit: np.ndarray) -> tuple[np.ndarray, float]:
    """Maximum-total-profit one-to-one assignment on a square matrix.

    Returns (cols, total) where cols[i] is the column assigned to row i
    and total = profit[range(n), cols].sum().
    """
    a = np.asarray(profit, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"assignment needs a square matrix, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError("assignment profits must be finite")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    cost = -a
    u = np.zeros(n)
    v = np.zeros(n + 1)
    # match[j] = row currently assigned to column j; index n is the virtual
    # start column of each augmenting search.
    match = np.full(n + 1, -1, dtype=np.int64)
    for i in range(n):
        match[n] = i
        j0 = n
        minv = np.full(n, np.inf)
        way = np.full(n, n, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[:n]
            reduced = cost[i0, free] - u[i0] - v[:n][free]
            idx = np.flatnonzero(free)
            better = reduced < minv[idx]
            upd = idx[better]
            minv[upd] = reduced[better]
            way[upd] = j0
            j1 = idx[np.argmin(minv[idx])]
            delta = minv[j1]
            used_cols = np.flatnonzero(used)
            u[match[used_cols]] += delta
            v[used_cols] -= delta
            minv[~used[:n]] -= delta
            j0 = j1
            if match[j0] == -1:
                break
        while j0 != n:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    cols = np.empty(n, dtype=np.int64)
    cols[match[:n]] = np.arange(n)
    total = float(a[np.arange(n), cols].sum())
    return cols, total


def brute_force_assignment(profit: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Exhaustive assignment maximum; exponential, for verification only."""
    from itertools import permutations

    a = np.asarray(profit, dtype=np.float64)
    n = a.shape[0]
    best_perm: tuple[int, ...] = tuple(range(n))
    best_total = -np.inf
    rows = np.arange(n)
    for perm in permutations(range(n)):
        total = float(a[rows, list(perm)].sum())
        if total > best_total:
            best_total = total
            best_perm = perm
    return best_perm, best_total


def nnls(A: np.ndarray, b: np.ndarray, *, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Solve min_x ||A x - b||_2 subject to x >= 0 by active-set iteration.

    Returns (x, residual_norm). Deterministic: the most-violating
    coordinate enters the passive set first, lowest index on ties.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise ValidationError(f"nnls shape mismatch: A {A.shape}, b {b.shape}")
    m, n = A.shape
    if max_iter is None:
        max_iter = 10 * n + 30
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    scale = float(np.abs(A.T @ b).max()) if n else 0.0
    tol = max(1e-12, 1e-12 * scale)
    for _ in range(max_iter):
        w = A.T @ (b - A @ x)
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if w[j] <= tol:
            break
        passive[j] = True
        for _ in range(n + 5):
            cols = np.flatnonzero(passive)
            z = np.zeros(n)
            sol, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
            z[cols] = sol
            if (z[cols] > 0).all():
                x = z
                break
            mask = passive & (z <= 0)
            denom = x - z
            steps = np.full(n, np.inf)
            ok = mask & (denom > 0)
            steps[ok] = x[ok] / denom[ok]
            alpha = float(steps.min())
            if not np.isfinite(alpha):
                # Degenerate geometry; keep the feasible part and stop.
                x = np.clip(z, 0.0, None)
                passive = x > 0
                break
            x = x + alpha * (z - x)
            floor = max(1e-16, 1e-14 * float(x.max(initial=0.0)))
            passive &= x > floor
            x[~passive] = 0.0
    residual = float(np.linalg.norm(A @ x - b))
    return x, residual
