"""Synthetic planted-structure generators: block-support factors for
recovery checks, shared/private ensembles with known universal
dimensions, and a complete on-disk fixture workspace for the CLI
pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import Embedding, RunConfig, dump_json, write_csv
from .errors import ValidationError
from .npy import write_npy
from .rng import PURPOSE_FIXTURES, derive_rng

ARCHITECTURES = ("convolutional", "transformer", "mlp-mixer", "hybrid")


def _rng_of(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return derive_rng(int(seed_or_rng), PURPOSE_FIXTURES)


def exponential_embedding(n: int, r: int, seed_or_rng) -> np.ndarray:
    """Nonnegative random embedding with i.i.d. Exponential(1) entries.

    Heavier-tailed than uniform noise, so pairs of independent columns
    keep their cos² comfortably below the random-overlap bounds used in
    the tests.
    """
    rng = _rng_of(seed_or_rng)
    return rng.exponential(1.0, size=(n, r))


def planted_blocks(
    n: int,
    r: int,
    seed_or_rng,
    *,
    low: float = 0.5,
    high: float = 1.5,
    noise: float = 0.01,
) -> np.ndarray:
    """Ground-truth factor matrix with r disjoint row-support blocks.

    On-support values are uniform in [low, high]; everywhere else a
    small uniform floor in [0, noise] keeps entries strictly positive
    without creating meaningful column overlap.
    """
    if r < 1 or n < r:
        raise ValidationError("need at least one row per planted block")
    rng = _rng_of(seed_or_rng)
    w = rng.uniform(0.0, noise, size=(n, r))
    for k, block in enumerate(np.array_split(np.arange(n), r)):
        w[block, k] = rng.uniform(low, high, size=block.size)
    return w


def max_column_cos2(w: np.ndarray) -> float:
    """Largest pairwise cos² between distinct columns."""
    w = np.asarray(w, dtype=np.float64)
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms == 0.0):
        raise ValidationError("zero column has no direction")
    g = (w / norms).T @ (w / norms)
    np.fill_diagonal(g, 0.0)
    return float(np.max(g**2))


@dataclass
class EnsembleFixture:
    """Synthetic model ensemble with known shared dimensions.

    shared_masks[m] marks which columns of embeddings[m].W carry the
    shared prototypes after that model's column shuffle; prototypes
    holds the unshuffled n×n_shared ground truth.
    """

    embeddings: list[Embedding]
    shared_masks: list[np.ndarray]
    prototypes: np.ndarray

    @property
    def block_of_row(self) -> np.ndarray:
        return np.argmax(self.prototypes, axis=1)


def shared_private_ensemble(
    n: int,
    n_models: int,
    n_shared: int,
    n_private: int,
    rng_seed: int,
    *,
    jitter: float = 0.05,
    grades=None,
) -> EnsembleFixture:
    """Models that agree on n_shared sparse prototype dimensions and
    disagree on n_private dense random dimensions.

    Prototype k lives on its own contiguous row block (blocks tile all
    rows). Each model multiplies the prototypes by (1 + jitter·u) noise
    elementwise, optionally adds grades[m]·Exponential(1) dense noise so
    universality degrades model by model, appends private Exponential(1)
    columns, and shuffles its column order.
    """
    if n_shared < 1 or n_private < 0 or n_models < 2:
        raise ValidationError("ensemble needs >=2 models and >=1 shared dim")
    rng = _rng_of(rng_seed)
    r = n_shared + n_private
    prototypes = np.zeros((n, n_shared))
    for k, block in enumerate(np.array_split(np.arange(n), n_shared)):
        prototypes[block, k] = rng.uniform(0.5, 1.5, size=block.size)
    if grades is None:
        grades = np.zeros(n_models)
    grades = np.asarray(grades, dtype=np.float64)
    if grades.shape != (n_models,):
        raise ValidationError("grades must give one noise scale per model")
    embeddings = []
    shared_masks = []
    for m in range(n_models):
        wobble = 1.0 + jitter * rng.uniform(-1.0, 1.0, size=prototypes.shape)
        shared = prototypes * wobble
        if grades[m] > 0.0:
            shared = shared + grades[m] * rng.exponential(1.0, size=shared.shape)
        private = rng.exponential(1.0, size=(n, n_private))
        w = np.concatenate([shared, private], axis=1)
        order = rng.permutation(r)
        mask = np.zeros(r, dtype=bool)
        mask[: n_shared] = True
        embeddings.append(
            Embedding(
                model_id=f"model_{m:02d}",
                W=w[:, order],
                rank=r,
                seed=0,
                alpha=0.5,
                objective=0.0,
                explained_variance=1.0,
                iterations=0,
                converged=True,
            )
        )
        shared_masks.append(mask[order])
    return EnsembleFixture(
        embeddings=embeddings, shared_masks=shared_masks, prototypes=prototypes
    )


def graded_ensemble(
    n: int,
    n_models: int,
    n_shared: int,
    n_private: int,
    rng_seed: int,
    *,
    max_grade: float = 0.8,
) -> EnsembleFixture:
    """Shared/private ensemble whose models get progressively noisier,
    so model-level universality is strictly graded and rankings are
    stable under resampling."""
    grades = np.linspace(0.0, max_grade, n_models)
    return shared_private_ensemble(
        n, n_models, n_shared, n_private, rng_seed, grades=grades
    )


def block_triplets(
    prototypes: np.ndarray,
    n_triplets: int,
    seed_or_rng,
    *,
    easy_fraction: float = 1.0,
) -> list[tuple[int, int, int]]:
    """Odd-one-out triplets over prototype rows with ground truth from
    the prototype cosine argmax.

    An easy triplet pairs two rows from one support block against one
    from another (the same-block pair wins by a wide margin); the
    remaining fraction draws all three rows from distinct blocks, where
    only fine prototype differences decide.
    """
    if not (0.0 <= easy_fraction <= 1.0):
        raise ValidationError("easy_fraction must lie in [0, 1]")
    rng = _rng_of(seed_or_rng)
    p = np.asarray(prototypes, dtype=np.float64)
    blocks = np.argmax(p, axis=1)
    members = {b: np.flatnonzero(blocks == b) for b in np.unique(blocks)}
    usable = [b for b, rows in members.items() if rows.size >= 2]
    if len(usable) < 2:
        raise ValidationError("need two blocks with >=2 members for triplets")
    all_blocks = sorted(members)
    norms = np.linalg.norm(p, axis=1)
    triplets = []
    while len(triplets) < n_triplets:
        if rng.random() < easy_fraction:
            b_in = usable[rng.integers(len(usable))]
            a, b = (int(v) for v in rng.choice(members[b_in], 2, replace=False))
            b_out = usable[rng.integers(len(usable))]
            if b_out == b_in:
                continue
            c = int(rng.choice(members[b_out]))
        else:
            if len(all_blocks) < 3:
                continue
            chosen = rng.choice(len(all_blocks), size=3, replace=False)
            a, b, c = (
                int(rng.choice(members[all_blocks[i]])) for i in chosen
            )
        sims = np.array(
            [
                p[a] @ p[b] / (norms[a] * norms[b]),
                p[a] @ p[c] / (norms[a] * norms[c]),
                p[b] @ p[c] / (norms[b] * norms[c]),
            ]
        )
        best = int(np.argmax(sims))
        trio = [(a, b, c), (a, c, b), (b, c, a)]
        triplets.append(trio[best])
    return triplets


def random_triplets(
    n_categories: int, n_triplets: int, seed_or_rng
) -> list[tuple[int, int, int]]:
    rng = _rng_of(seed_or_rng)
    out = []
    for _ in range(n_triplets):
        i, j, k = rng.choice(n_categories, size=3, replace=False)
        out.append((int(i), int(j), int(k)))
    return out


# ---------------------------------------------------------------------------
# On-disk workspace for the CLI pipeline

_FAMILIES = (
    "resnet", "resnet", "resnet",
    "vit", "vit", "vit",
    "mixer", "mixer",
    "hybridnet", "hybridnet",
)

_RELIABILITIES = (
    0.82, 0.66, 0.25, 0.74, 0.51, 0.12,
    0.88, 0.43, 0.29, 0.61, 0.77, 0.35,
)


def write_fixture_workspace(
    workspace,
    *,
    n_models: int = 10,
    n_categories: int = 50,
    images_per_category: int = 6,
    rank: int = 8,
    seeds: int = 3,
    permutations: int = 200,
    alpha_grid=(0.4, 0.6),
    n_triplets: int = 400,
    rng_seed: int = 20260815,
) -> dict:
    """Generate a complete synthetic input workspace.

    Ten models view the same latent category structure through random
    projections, so the pipeline has real shared dimensions to find.
    Writes features, manifest, categories, neural responses, triplets,
    dimension labels, contrast specs, and a ready-to-run config file;
    returns the path map.
    """
    workspace = Path(workspace)
    inputs = workspace / "inputs"
    (inputs / "features").mkdir(parents=True, exist_ok=True)
    rng = derive_rng(rng_seed, PURPOSE_FIXTURES)

    c, j, k = n_categories, images_per_category, rank
    n = c * j
    clusters = np.arange(c) % k
    protos = 0.05 * rng.random((c, k))
    protos[np.arange(c), clusters] += 1.0 + 0.5 * rng.random(c)
    wobble = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=(n, k))
    latents = protos[np.repeat(np.arange(c), j)] * wobble
    latents += 0.02 * rng.random((n, k))

    image_ids = [f"img_{i:04d}" for i in range(n)]
    cat_names = [f"cat_{ci:02d}" for ci in range(c)]
    cat_of_image = {
        image_ids[i]: cat_names[i // j] for i in range(n)
    }
    representatives = {cat_names[ci]: image_ids[ci * j] for ci in range(c)}

    models = []
    for m in range(n_models):
        model_id = f"model_{m:02d}"
        width = 40 + 8 * (m % 4)
        # Noise grows with the model index so universality, encoding,
        # and triplet scores are graded rather than saturated.
        noise_scale = 0.08 + 0.6 * m / max(1, n_models - 1)
        projection = rng.normal(size=(k, width))
        features = latents @ projection
        features += noise_scale * rng.normal(size=(n, width))
        write_npy(
            inputs / "features" / f"{model_id}.npy",
            features.astype(np.float32),
        )
        entry = {
            "model_id": model_id,
            "features": f"features/{model_id}.npy",
            "architecture_class": ARCHITECTURES[m % len(ARCHITECTURES)],
            "family": _FAMILIES[m % len(_FAMILIES)],
            "objective": "supervised" if m < n_models // 2 else "contrastive",
            "training_data": "set_x" if m % 2 == 0 else "set_y",
            "imagenet_top1": round(0.6 + 0.02 * m, 4),
        }
        if m % 2 == 0:
            entry["parameter_count"] = 1_000_000 * (m + 5)
        models.append(entry)

    dump_json(
        inputs / "manifest.json",
        {"schema_version": "1", "images": image_ids, "models": models},
    )
    dump_json(
        inputs / "categories.json",
        {
            "schema_version": "1",
            "categories": cat_of_image,
            "representatives": representatives,
        },
    )

    n_channels = len(_RELIABILITIES)
    readouts = rng.normal(size=(k, n_channels))
    responses = latents @ readouts
    responses += 0.3 * rng.normal(size=responses.shape)
    responses -= responses.mean(axis=0)
    responses /= responses.std(axis=0)
    write_npy(inputs / "neural_responses.npy", responses.astype(np.float64))
    write_csv(
        inputs / "neural_channels.csv",
        ["channel_id", "reliability", "subject"],
        [
            (f"ch_{p:02d}", _RELIABILITIES[p],
             "subj_a" if p < n_channels // 2 else "subj_b")
            for p in range(n_channels)
        ],
    )

    triplets = block_triplets(protos, n_triplets, rng, easy_fraction=0.5)
    write_csv(
        inputs / "triplets.csv",
        ["i", "j", "k_odd_one_out"],
        [(a + 1, b + 1, o + 1) for a, b, o in triplets],
    )

    label_cycle = ("semantic", "visual", "both", "neither")
    write_csv(
        inputs / "dimension_labels.csv",
        ["dimension_id", "label"],
        [(d, label_cycle[d % 4]) for d in range(rank)],
    )

    dump_json(
        inputs / "contrasts.json",
        {
            "schema_version": "1",
            "contrasts": [
                {"name": "objective_welch", "group_by": "objective"},
                {"name": "family_anova", "group_by": "family"},
                {
                    "name": "model_descriptive",
                    "group_by": "model_id",
                    "filter": {"family": ["resnet", "mixer"]},
                },
                {
                    "name": "data_within_supervised",
                    "group_by": "training_data",
                    "filter": {"objective": "supervised"},
                },
            ],
        },
    )

    run = RunConfig(
        rank=rank,
        seeds=seeds,
        alpha_grid=tuple(alpha_grid),
        permutations=permutations,
        rng_seed=rng_seed,
    ).validate()
    paths = {
        "manifest": "inputs/manifest.json",
        "categories": "inputs/categories.json",
        "neural_responses": "inputs/neural_responses.npy",
        "neural_channels": "inputs/neural_channels.csv",
        "triplets": "inputs/triplets.csv",
        "dimension_labels": "inputs/dimension_labels.csv",
        "contrasts": "inputs/contrasts.json",
    }
    dump_json(
        workspace / "config.json",
        {"schema_version": "1", "run": run.to_dict(), "paths": paths},
    )
    return {
        "workspace": str(workspace),
        "config": str(workspace / "config.json"),
        **{key: str(workspace / rel) for key, rel in paths.items()},
    }
