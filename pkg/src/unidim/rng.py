"""Deterministic RNG derivation.

Every stochastic step derives its generator from the run seed plus a
purpose code plus position indices (model, partner, draw). Streams are
therefore independent, reproducible, and safe to consume from parallel
workers in any order.
"""

from __future__ import annotations

import hashlib

import numpy as np

PURPOSE_SNMF = 1
PURPOSE_NULL = 2
PURPOSE_FOLDS = 3
PURPOSE_OMEGA_CI = 4
PURPOSE_SD_BOOTSTRAP = 5
PURPOSE_RESAMPLE = 6
PURPOSE_FIXTURES = 7

_MASK = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    """A 32-bit seed derived from the given integer path, for recording."""
    seq = np.random.SeedSequence([int(p) & _MASK for p in parts])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def derive_rng(*parts: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(p) & _MASK for p in parts])
    return np.random.default_rng(seq)


def stable_key(name: str) -> int:
    """A 64-bit integer derived from a string, stable across runs and
    list orderings, for use as a derive_* part."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
