"""Assignment solver and nonnegative least squares."""

import itertools

import numpy as np
import pytest

from unidim.assignment import brute_force_assignment, nnls, solve_assignment
from unidim.errors import ValidationError


def test_identity_profit():
    profit = np.eye(4)
    perm, total = solve_assignment(profit)
    np.testing.assert_array_equal(perm, np.arange(4))
    assert total == pytest.approx(4.0)


def test_known_small_instance():
    # Max-profit matching: 0->1 (8), 1->0 (7), 2->2 (6) beats greedy.
    profit = np.array(
        [
            [1.0, 8.0, 2.0],
            [7.0, 9.0, 3.0],
            [4.0, 5.0, 6.0],
        ]
    )
    perm, total = solve_assignment(profit)
    assert total == pytest.approx(8.0 + 7.0 + 6.0)
    np.testing.assert_array_equal(perm, [1, 0, 2])


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(25):
        r = int(rng.integers(2, 7))
        profit = rng.random((r, r))
        perm, total = solve_assignment(profit)
        bf_perm, bf_total = brute_force_assignment(profit)
        assert total == pytest.approx(bf_total, abs=1e-12)
        assert tuple(perm) == bf_perm


def test_brute_force_is_the_true_maximum():
    rng = np.random.default_rng(8)
    profit = rng.random((5, 5))
    _, best = brute_force_assignment(profit)
    totals = [
        sum(profit[i, p[i]] for i in range(5))
        for p in itertools.permutations(range(5))
    ]
    assert best == pytest.approx(max(totals))


def test_permutation_output_is_a_bijection():
    rng = np.random.default_rng(9)
    profit = rng.random((8, 8))
    perm, _ = solve_assignment(profit)
    assert sorted(perm) == list(range(8))


def test_nonsquare_rejected():
    with pytest.raises(ValidationError):
        solve_assignment(np.ones((2, 3)))


def test_nnls_recovers_nonnegative_solution():
    rng = np.random.default_rng(10)
    A = rng.random((30, 4))
    x_true = np.array([0.5, 0.0, 2.0, 1.25])
    b = A @ x_true
    x, residual = nnls(A, b)
    np.testing.assert_allclose(x, x_true, atol=1e-8)
    assert residual == pytest.approx(0.0, abs=1e-8)


def test_nnls_clamps_negative_least_squares():
    # Unconstrained solution is negative; NNLS must return x = 0 with
    # residual ||b||.
    A = np.array([[1.0], [1.0]])
    b = np.array([-1.0, -2.0])
    x, residual = nnls(A, b)
    assert x[0] == pytest.approx(0.0)
    assert residual == pytest.approx(np.linalg.norm(b))


def test_nnls_residual_definition():
    rng = np.random.default_rng(11)
    A = rng.random((12, 3))
    b = rng.random(12)
    x, residual = nnls(A, b)
    assert (x >= 0).all()
    assert residual == pytest.approx(np.linalg.norm(A @ x - b), abs=1e-10)
