"""Seed derivation: deterministic, order-sensitive, collision-resistant."""

import numpy as np

from unidim.rng import derive_rng, derive_seed, stable_key


def test_derive_seed_deterministic_and_order_sensitive():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(3, 2, 1)
    # Trailing zeros are absorbed by the underlying seed sequence, so
    # every derivation path in the package uses a fixed arity per
    # purpose; nonzero suffixes must still separate streams.
    assert derive_seed(7, 1) != derive_seed(7)


def test_derive_rng_streams_are_independent():
    a = derive_rng(42, 1).random(5)
    b = derive_rng(42, 2).random(5)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, derive_rng(42, 1).random(5))


def test_stable_key_is_process_independent():
    # The key must come from the name's bytes, not from Python's
    # randomized hash().
    assert stable_key("model_a") == stable_key("model_a")
    assert stable_key("model_a") != stable_key("model_b")
    # Frozen value guards against accidental algorithm changes that
    # would silently reshuffle all persisted seeds.
    assert stable_key("m") == int.from_bytes(
        __import__("hashlib").sha256(b"m").digest()[:8], "big"
    )


def test_no_collisions_over_small_grid():
    seen = {derive_seed(i, j) for i in range(50) for j in range(50)}
    assert len(seen) == 2500
