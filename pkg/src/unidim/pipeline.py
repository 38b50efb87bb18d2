"""Workspace-based stage orchestration.

Each stage reads its inputs from the workspace, writes its artifacts
under a stage directory, and records a content digest so unchanged work
is skipped on rerun. Per-model stages fan out over a process pool when
jobs > 1; results are independent of the worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .alignment import (
    alignment_universality_correlation,
    encoding_score,
    half_masked_evaluation,
    load_neural_data,
    load_triplets,
    triplet_accuracy,
)
from .artifacts import (
    RunConfig,
    Table,
    UniversalityReport,
    check_schema_version,
    dump_json,
    load_category_index,
    load_embedding,
    load_feature_matrix,
    load_json,
    load_manifest,
    load_report,
    load_similarity,
    persist_artifact,
    read_csv,
)
from .content import (
    all_reconstruction_importances,
    content_universality_correlations,
    eta_squared,
    label_crosstab,
    variance_fraction_by_decile,
)
from .errors import NumericalError, ValidationError
from .kernel import kernel_grid
from .rng import PURPOSE_SNMF, derive_seed, stable_key
from .snmf import fit_seeds, select_bandwidth
from .stats import average_ranks, run_contrasts
from .universality import (
    cka_linear,
    resample_universality,
    score_ensemble,
    score_one_model,
    stability_ceiling,
)

WORKSPACE_ENV = "UNIDIM_WORKSPACE"
STAGES = (
    "kernel",
    "factorize",
    "universality",
    "content",
    "align",
    "contrast",
    "report",
)


@dataclass
class PipelineContext:
    workspace: Path
    run: RunConfig
    input_paths: dict[str, str]
    jobs: int = 1
    force: bool = False

    def resolve(self, key: str) -> Path:
        if key not in self.input_paths:
            raise ValidationError(f"config paths section has no {key!r} entry")
        path = self.workspace / self.input_paths[key]
        if not path.exists():
            raise ValidationError(f"input file not found: {path}")
        return path

    def has_input(self, key: str) -> bool:
        return key in self.input_paths and (
            self.workspace / self.input_paths[key]
        ).exists()

    def stage_dir(self, stage: str) -> Path:
        out = self.workspace / stage
        out.mkdir(parents=True, exist_ok=True)
        return out


def load_context(
    config_path=None,
    *,
    workspace=None,
    seed: int | None = None,
    jobs: int = 1,
    force: bool = False,
) -> PipelineContext:
    """Resolve config file and workspace root from flags and environment."""
    if workspace is None and config_path is None:
        workspace = os.environ.get(WORKSPACE_ENV)
        if workspace is None:
            raise ValidationError(
                "no --config or --workspace given and UNIDIM_WORKSPACE is unset"
            )
    if config_path is None:
        config_path = Path(workspace) / "config.json"
    config_path = Path(config_path)
    if not config_path.exists():
        raise ValidationError(f"config file not found: {config_path}")
    payload = load_json(config_path)
    check_schema_version(config_path, payload)
    run = RunConfig.from_dict(payload.get("run", {}))
    paths = payload.get("paths", {})
    if not isinstance(paths, dict) or not all(
        isinstance(v, str) for v in paths.values()
    ):
        raise ValidationError(f"{config_path}: paths must map names to strings")
    root = Path(workspace) if workspace is not None else config_path.parent
    if seed is not None:
        run = replace(run, rng_seed=int(seed)).validate()
    if jobs < 1:
        raise ValidationError("--jobs must be at least 1")
    ctx = PipelineContext(
        workspace=root, run=run, input_paths=dict(paths), jobs=jobs, force=force
    )
    ctx.workspace.mkdir(parents=True, exist_ok=True)
    dump_json(
        ctx.workspace / "config.effective.json",
        {
            "schema_version": "1",
            "run": run.to_dict(),
            "paths": dict(paths),
        },
    )
    return ctx


def log_event(ctx: PipelineContext, stage: str, event: str, **fields) -> None:
    log_dir = ctx.workspace / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    record = {"ts": round(time.time(), 3), "stage": stage, "event": event}
    record.update(fields)
    with open(log_dir / "run.log", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Stage markers


def _markers_path(ctx: PipelineContext) -> Path:
    return ctx.workspace / "state" / "markers.json"


def _load_markers(ctx: PipelineContext) -> dict:
    path = _markers_path(ctx)
    if not path.exists():
        return {}
    return load_json(path)


def _save_markers(ctx: PipelineContext, markers: dict) -> None:
    path = _markers_path(ctx)
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(path, markers)


def _digest(ctx: PipelineContext, parts: dict, files: list[Path]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(parts, sort_keys=True).encode("utf-8"))
    for path in files:
        path = Path(path)
        try:
            rel = str(path.relative_to(ctx.workspace))
        except ValueError:
            rel = str(path)
        h.update(rel.encode("utf-8"))
        if path.exists():
            h.update(path.read_bytes())
        else:
            h.update(b"<missing>")
    return h.hexdigest()


def _fresh(
    ctx: PipelineContext, markers: dict, key: str, digest: str, outputs
) -> bool:
    if ctx.force:
        return False
    if markers.get(key) != digest:
        return False
    return all(Path(p).exists() for p in outputs)


# ---------------------------------------------------------------------------
# Kernel stage


def _kernel_worker(payload):
    (feature_path, model_id, image_ids, alphas, float_width, out_dir) = payload
    features = load_feature_matrix(
        feature_path,
        model_id=model_id,
        image_ids=list(image_ids),
        float_width=float_width,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sims = kernel_grid(features, alphas)
    for idx, sim in enumerate(sims):
        persist_artifact(
            sim, out_dir / f"alpha_{idx:02d}.npy", float_width=float_width
        )
    return model_id, float(sims[0].median_distance)


def run_kernel(ctx: PipelineContext) -> dict:
    manifest = load_manifest(ctx.resolve("manifest"))
    markers = _load_markers(ctx)
    out_root = ctx.stage_dir("kernel")
    grid = list(ctx.run.alpha_grid)
    payloads = []
    skipped = 0
    config_part = {
        "alpha_grid": grid,
        "float_width": ctx.run.float_width,
        "images": manifest.images,
    }
    for entry in manifest.entries:
        out_dir = out_root / entry.model_id
        outputs = [out_dir / f"alpha_{i:02d}.npy" for i in range(len(grid))]
        digest = _digest(
            ctx, config_part, [manifest.features_path(entry.model_id)]
        )
        key = f"kernel/{entry.model_id}"
        if _fresh(ctx, markers, key, digest, outputs):
            skipped += 1
            continue
        payloads.append(
            (
                (
                    str(manifest.features_path(entry.model_id)),
                    entry.model_id,
                    tuple(manifest.images),
                    tuple(grid),
                    ctx.run.float_width,
                    str(out_dir),
                ),
                key,
                digest,
            )
        )
    results = _run_tasks(ctx, _kernel_worker, [p[0] for p in payloads])
    for (_, key, digest), (model_id, median) in zip(payloads, results):
        markers[key] = digest
        log_event(ctx, "kernel", "computed", model=model_id, median=median)
    _save_markers(ctx, markers)
    return {
        "stage": "kernel",
        "models": len(manifest.entries),
        "computed": len(payloads),
        "skipped": skipped,
    }


def _run_tasks(ctx: PipelineContext, worker, payloads: list):
    if not payloads:
        return []
    if ctx.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=ctx.jobs) as pool:
            return list(pool.map(worker, payloads))
    return [worker(p) for p in payloads]


# ---------------------------------------------------------------------------
# Factorize stage


def _factorize_worker(payload):
    (
        model_id,
        kernel_dir,
        alphas,
        rank,
        n_seeds,
        rng_seed,
        float_width,
        out_dir,
    ) = payload
    kernel_dir = Path(kernel_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_key = stable_key(model_id)
    per_alpha = []
    seed_lists = []
    for a_idx, alpha in enumerate(alphas):
        sim = load_similarity(kernel_dir / f"alpha_{a_idx:02d}.npy")
        seeds = [
            derive_seed(rng_seed, PURPOSE_SNMF, model_key, a_idx, s)
            for s in range(n_seeds)
        ]
        seed_lists.append(seeds)
        embeddings = fit_seeds(sim, rank, seeds)
        per_alpha.append((alpha, embeddings))
        for s_idx, emb in enumerate(embeddings):
            persist_artifact(
                emb,
                out_dir / f"alpha_{a_idx:02d}_seed_{s_idx}.npy",
                float_width=float_width,
            )
    selection = select_bandwidth(per_alpha)
    chosen_idx = list(alphas).index(selection.chosen_alpha)
    central_idx = seed_lists[chosen_idx].index(selection.central_seed)
    record = {"schema_version": "1", "model_id": model_id}
    record.update(selection.to_dict())
    record["chosen_alpha_index"] = chosen_idx
    record["central_seed_index"] = central_idx
    dump_json(out_dir / "selection.json", record)
    converged = all(
        emb.converged for _, embeddings in per_alpha for emb in embeddings
    )
    return model_id, selection.chosen_alpha, converged


def run_factorize(ctx: PipelineContext) -> dict:
    manifest = load_manifest(ctx.resolve("manifest"))
    markers = _load_markers(ctx)
    kernel_root = ctx.workspace / "kernel"
    out_root = ctx.stage_dir("embeddings")
    grid = list(ctx.run.alpha_grid)
    config_part = {
        "rank": ctx.run.rank,
        "seeds": ctx.run.seeds,
        "alpha_grid": grid,
        "rng_seed": ctx.run.rng_seed,
        "float_width": ctx.run.float_width,
    }
    payloads = []
    skipped = 0
    for entry in manifest.entries:
        kernel_dir = kernel_root / entry.model_id
        inputs = [kernel_dir / f"alpha_{i:02d}.npy" for i in range(len(grid))]
        for path in inputs:
            if not path.exists():
                raise ValidationError(
                    f"kernel output missing for model {entry.model_id!r} "
                    f"({path.name}): run the kernel stage first"
                )
        out_dir = out_root / entry.model_id
        outputs = [out_dir / "selection.json"] + [
            out_dir / f"alpha_{a:02d}_seed_{s}.npy"
            for a in range(len(grid))
            for s in range(ctx.run.seeds)
        ]
        digest = _digest(ctx, config_part, inputs)
        key = f"factorize/{entry.model_id}"
        if _fresh(ctx, markers, key, digest, outputs):
            skipped += 1
            continue
        payloads.append(
            (
                (
                    entry.model_id,
                    str(kernel_dir),
                    tuple(grid),
                    ctx.run.rank,
                    ctx.run.seeds,
                    ctx.run.rng_seed,
                    ctx.run.float_width,
                    str(out_dir),
                ),
                key,
                digest,
            )
        )
    results = _run_tasks(ctx, _factorize_worker, [p[0] for p in payloads])
    for (_, key, digest), (model_id, alpha, converged) in zip(
        payloads, results
    ):
        markers[key] = digest
        log_event(
            ctx,
            "factorize",
            "computed",
            model=model_id,
            chosen_alpha=alpha,
            converged=converged,
        )
    _save_markers(ctx, markers)
    return {
        "stage": "factorize",
        "models": len(manifest.entries),
        "computed": len(payloads),
        "skipped": skipped,
    }


# ---------------------------------------------------------------------------
# Universality stage


def _load_selection(ctx: PipelineContext, model_id: str) -> dict:
    path = ctx.workspace / "embeddings" / model_id / "selection.json"
    if not path.exists():
        raise ValidationError(
            f"embeddings missing for model {model_id!r}: "
            "run the factorize stage first"
        )
    record = load_json(path)
    check_schema_version(path, record)
    return record


def _central_path(ctx: PipelineContext, model_id: str, selection: dict) -> Path:
    return (
        ctx.workspace
        / "embeddings"
        / model_id
        / (
            f"alpha_{int(selection['chosen_alpha_index']):02d}"
            f"_seed_{int(selection['central_seed_index'])}.npy"
        )
    )


def _seed_paths(ctx: PipelineContext, model_id: str, selection: dict):
    a_idx = int(selection["chosen_alpha_index"])
    return [
        ctx.workspace
        / "embeddings"
        / model_id
        / f"alpha_{a_idx:02d}_seed_{s}.npy"
        for s in range(ctx.run.seeds)
    ]


def run_universality(ctx: PipelineContext) -> dict:
    manifest = load_manifest(ctx.resolve("manifest"))
    model_ids = manifest.model_ids()
    if len(model_ids) < 2:
        raise ValidationError("universality needs at least two models")
    selections = {mid: _load_selection(ctx, mid) for mid in model_ids}
    markers = _load_markers(ctx)
    out_root = ctx.stage_dir("universality")
    input_files = []
    for mid in model_ids:
        input_files.append(
            ctx.workspace / "embeddings" / mid / "selection.json"
        )
        input_files.extend(_seed_paths(ctx, mid, selections[mid]))
    config_part = {
        "permutations": ctx.run.permutations,
        "null_percentile": ctx.run.null_percentile,
        "rng_seed": ctx.run.rng_seed,
        "models": model_ids,
    }
    digest = _digest(ctx, config_part, input_files)
    outputs = [out_root / f"{mid}.csv" for mid in model_ids] + [
        out_root / "ceiling.csv",
        out_root / "models.csv",
        out_root / "resampling.csv",
    ]
    if _fresh(ctx, markers, "universality", digest, outputs):
        return {"stage": "universality", "models": len(model_ids), "skipped": 1}

    centrals = [
        load_embedding(_central_path(ctx, mid, selections[mid]))
        for mid in model_ids
    ]
    if ctx.jobs > 1:
        with ProcessPoolExecutor(max_workers=ctx.jobs) as pool:
            scores = score_ensemble(
                centrals,
                permutations=ctx.run.permutations,
                percentile=ctx.run.null_percentile,
                rng_seed=ctx.run.rng_seed,
                mapper=lambda fn, payloads: list(pool.map(fn, payloads)),
            )
    else:
        scores = score_ensemble(
            centrals,
            permutations=ctx.run.permutations,
            percentile=ctx.run.null_percentile,
            rng_seed=ctx.run.rng_seed,
        )

    for i, mid in enumerate(model_ids):
        report = UniversalityReport(
            model_id=mid,
            raw=scores.raw[i],
            thresholds=scores.thresholds[i],
            calibrated=scores.calibrated[i],
            model_mean=float(scores.model_means[i]),
        )
        persist_artifact(report, out_root / f"{mid}.csv")

    ceiling_rows = []
    for i, mid in enumerate(model_ids):
        seed_embeddings = [
            load_embedding(p) for p in _seed_paths(ctx, mid, selections[mid])
        ]
        raw_ceiling, calibrated_ceiling = stability_ceiling(
            seed_embeddings,
            scores.thresholds[i],
            central_seed=int(selections[mid]["central_seed"]),
        )
        for k in range(ctx.run.rank):
            ceiling_rows.append(
                (mid, k, float(raw_ceiling[k]), float(calibrated_ceiling[k]))
            )
    persist_artifact(
        Table(
            kind="stability_ceiling",
            columns=["model_id", "dim", "raw_ceiling", "calibrated_ceiling"],
            rows=ceiling_rows,
        ),
        out_root / "ceiling.csv",
    )

    sims = []
    for mid in model_ids:
        a_idx = int(selections[mid]["chosen_alpha_index"])
        sims.append(
            load_similarity(
                ctx.workspace / "kernel" / mid / f"alpha_{a_idx:02d}.npy"
            )
        )
    cka_means = []
    for i in range(len(model_ids)):
        vals = [
            cka_linear(sims[i].values, sims[j].values, kind="gram")
            for j in range(len(model_ids))
            if j != i
        ]
        cka_means.append(float(np.mean(vals)))
    cka_rank = average_ranks([-v for v in cka_means])
    persist_artifact(
        Table(
            kind="model_universality",
            columns=["model_id", "u_m", "cka_mean", "cka_mean_rank"],
            rows=[
                (
                    mid,
                    float(scores.model_means[i]),
                    cka_means[i],
                    float(cka_rank[i]),
                )
                for i, mid in enumerate(model_ids)
            ],
        ),
        out_root / "models.csv",
    )

    families = {e.model_id: e.family for e in manifest.entries}
    resample_rows = resample_universality(
        scores,
        None,
        "bootstrap_subsample",
        fraction=0.5,
        iters=200,
        rng_seed=ctx.run.rng_seed,
    )
    resample_rows += resample_universality(
        scores, families, "leave_family_out", rng_seed=ctx.run.rng_seed
    )
    persist_artifact(
        Table(
            kind="resampling",
            columns=[
                "mode",
                "fraction",
                "iters",
                "n_used",
                "rho_median",
                "rho_low",
                "rho_high",
                "skipped",
            ],
            rows=[
                (
                    row["mode"],
                    row.get("fraction"),
                    row.get("iters"),
                    row.get("n_used"),
                    row.get("rho_median"),
                    row.get("rho_low"),
                    row.get("rho_high"),
                    row.get("skipped", 0),
                )
                for row in resample_rows
            ],
        ),
        out_root / "resampling.csv",
    )

    markers["universality"] = digest
    _save_markers(ctx, markers)
    log_event(ctx, "universality", "computed", models=len(model_ids))
    return {"stage": "universality", "models": len(model_ids), "skipped": 0}


# ---------------------------------------------------------------------------
# Content stage


def _require_universality(ctx: PipelineContext, model_ids: list[str]) -> None:
    for mid in model_ids:
        if not (ctx.workspace / "universality" / f"{mid}.csv").exists():
            raise ValidationError(
                f"universality report missing for model {mid!r}: "
                "run the universality stage first"
            )


def run_content(ctx: PipelineContext) -> dict:
    manifest = load_manifest(ctx.resolve("manifest"))
    model_ids = manifest.model_ids()
    categories = load_category_index(ctx.resolve("categories"))
    selections = {mid: _load_selection(ctx, mid) for mid in model_ids}
    _require_universality(ctx, model_ids)
    markers = _load_markers(ctx)
    out_root = ctx.stage_dir("content")

    input_files = [ctx.resolve("categories")]
    for mid in model_ids:
        input_files.append(_central_path(ctx, mid, selections[mid]))
        input_files.append(ctx.workspace / "universality" / f"{mid}.csv")
    has_labels = ctx.has_input("dimension_labels")
    if has_labels:
        input_files.append(ctx.resolve("dimension_labels"))
    config_part = {"rank": ctx.run.rank, "models": model_ids}
    digest = _digest(ctx, config_part, input_files)
    outputs = [
        out_root / "dimensions.csv",
        out_root / "deciles.csv",
        out_root / "correlations.csv",
    ]
    if has_labels:
        outputs.append(out_root / "labels_crosstab.csv")
    if _fresh(ctx, markers, "content", digest, outputs):
        return {"stage": "content", "models": len(model_ids), "skipped": 1}

    contents = []
    dim_rows = []
    for mid in model_ids:
        selection = selections[mid]
        central = load_embedding(_central_path(ctx, mid, selection))
        a_idx = int(selection["chosen_alpha_index"])
        sim = load_similarity(
            ctx.workspace / "kernel" / mid / f"alpha_{a_idx:02d}.npy"
        )
        report = load_report(ctx.workspace / "universality" / f"{mid}.csv")
        importances = all_reconstruction_importances(sim.values, central.W)
        for k in range(ctx.run.rank):
            content = eta_squared(
                central.W[:, k],
                categories,
                image_ids=manifest.images,
                model_id=mid,
                dim=k,
            )
            content.delta_r2 = float(importances[k])
            content.universality_calibrated = float(report.calibrated[k])
            contents.append(content)
            dim_rows.append(
                (
                    mid,
                    k,
                    content.eta2,
                    content.ss_between,
                    content.ss_within,
                    content.ss_total,
                    content.delta_r2,
                    content.universality_calibrated,
                )
            )
    persist_artifact(
        Table(
            kind="dimension_content",
            columns=[
                "model_id",
                "dim",
                "eta2",
                "ss_between",
                "ss_within",
                "ss_total",
                "delta_r2",
                "calibrated",
            ],
            rows=dim_rows,
        ),
        out_root / "dimensions.csv",
    )

    calibrated_all = [c.universality_calibrated for c in contents]
    deciles = variance_fraction_by_decile(contents, calibrated_all)
    persist_artifact(
        Table(
            kind="variance_deciles",
            columns=[
                "decile",
                "n_dimensions",
                "between_fraction",
                "within_fraction",
            ],
            rows=[
                (
                    row["decile"],
                    row["n_dimensions"],
                    row["between_fraction"],
                    row["within_fraction"],
                )
                for row in deciles
            ],
        ),
        out_root / "deciles.csv",
    )

    correlations = content_universality_correlations(contents)
    persist_artifact(
        Table(
            kind="content_correlations",
            columns=["metric", "value"],
            rows=sorted(correlations.items()),
        ),
        out_root / "correlations.csv",
    )

    if has_labels:
        columns, rows = read_csv(ctx.resolve("dimension_labels"))
        if list(columns) != ["dimension_id", "label"]:
            raise ValidationError(
                "dimension label table must have columns [dimension_id, label]"
            )
        label_of = {int(r["dimension_id"]): r["label"] for r in rows}
        flat_labels = {}
        flat_scores = []
        for idx, content in enumerate(contents):
            flat_scores.append(content.universality_calibrated)
            if content.dim in label_of:
                flat_labels[idx] = label_of[content.dim]
        crosstab = label_crosstab(flat_labels, flat_scores)
        persist_artifact(
            Table(
                kind="label_crosstab",
                columns=[
                    "bin",
                    "score_low",
                    "score_high",
                    "both",
                    "neither",
                    "semantic",
                    "visual",
                ],
                rows=[
                    (
                        row["bin"],
                        row["score_low"],
                        row["score_high"],
                        row["both"],
                        row["neither"],
                        row["semantic"],
                        row["visual"],
                    )
                    for row in crosstab
                ],
            ),
            out_root / "labels_crosstab.csv",
        )

    markers["content"] = digest
    _save_markers(ctx, markers)
    log_event(ctx, "content", "computed", models=len(model_ids))
    return {"stage": "content", "models": len(model_ids), "skipped": 0}


# ---------------------------------------------------------------------------
# Align stage


def run_align(ctx: PipelineContext) -> dict:
    manifest = load_manifest(ctx.resolve("manifest"))
    model_ids = manifest.model_ids()
    selections = {mid: _load_selection(ctx, mid) for mid in model_ids}
    _require_universality(ctx, model_ids)
    markers = _load_markers(ctx)
    out_root = ctx.stage_dir("align")

    input_files = [
        ctx.resolve("neural_responses"),
        ctx.resolve("neural_channels"),
        ctx.resolve("triplets"),
        ctx.resolve("categories"),
    ]
    for mid in model_ids:
        input_files.append(_central_path(ctx, mid, selections[mid]))
        input_files.append(ctx.workspace / "universality" / f"{mid}.csv")
    config_part = {
        "cv_folds": ctx.run.cv_folds,
        "ridge_grid": list(ctx.run.ridge_grid),
        "rng_seed": ctx.run.rng_seed,
        "models": model_ids,
    }
    digest = _digest(ctx, config_part, input_files)
    outputs = [
        out_root / "encoding.csv",
        out_root / "encoding_subjects.csv",
        out_root / "neurons.csv",
        out_root / "triplets.csv",
        out_root / "correlations.csv",
    ]
    if _fresh(ctx, markers, "align", digest, outputs):
        return {"stage": "align", "models": len(model_ids), "skipped": 1}

    datasets = load_neural_data(
        ctx.resolve("neural_responses"), ctx.resolve("neural_channels")
    )
    triplets = load_triplets(ctx.resolve("triplets"))
    categories = load_category_index(ctx.resolve("categories"))
    cat_names = categories.categories()
    missing = [c for c in cat_names if c not in categories.representatives]
    if missing:
        raise ValidationError(
            f"categories without representative images: {missing[:5]}"
        )
    image_row = {img: i for i, img in enumerate(manifest.images)}
    rep_rows = []
    for cat in cat_names:
        rep = categories.representatives[cat]
        if rep not in image_row:
            raise ValidationError(
                f"representative image {rep!r} is not in the manifest"
            )
        rep_rows.append(image_row[rep])
    rep_rows = np.array(rep_rows)

    encoding_rows = []
    subject_rows = []
    neuron_rows = []
    triplet_rows = []
    encoding_scores = []
    triplet_scores = []
    u_values = []
    for mid in model_ids:
        central = load_embedding(_central_path(ctx, mid, selections[mid]))
        report = load_report(ctx.workspace / "universality" / f"{mid}.csv")
        u_values.append(float(report.model_mean))
        calibrated = report.calibrated

        def encode(matrix):
            return encoding_score(
                matrix,
                datasets,
                folds=ctx.run.cv_folds,
                ridge_grid=ctx.run.ridge_grid,
                rng_seed=ctx.run.rng_seed,
            ).score

        enc = encoding_score(
            central.W,
            datasets,
            folds=ctx.run.cv_folds,
            ridge_grid=ctx.run.ridge_grid,
            rng_seed=ctx.run.rng_seed,
        )
        halves_enc = half_masked_evaluation(central.W, calibrated, encode)
        encoding_rows.append(
            (
                mid,
                enc.score,
                halves_enc["universal_half_score"],
                halves_enc["specific_half_score"],
                enc.dropped_channels,
            )
        )
        for subject, mean_r in sorted(enc.subject_means.items()):
            subject_rows.append((mid, subject, mean_r))
        for row in enc.per_neuron:
            neuron_rows.append(
                (
                    mid,
                    row["subject"],
                    row["channel_id"],
                    row["reliability"],
                    row["ceiling"],
                    row["held_out_r"],
                )
            )
        encoding_scores.append(enc.score)

        category_embedding = central.W[rep_rows, :]
        trip = triplet_accuracy(category_embedding, triplets)
        halves_trip = half_masked_evaluation(
            category_embedding,
            calibrated,
            lambda m: triplet_accuracy(m, triplets).accuracy,
        )
        triplet_rows.append(
            (
                mid,
                trip.accuracy,
                trip.evaluated,
                trip.skipped,
                trip.ties,
                halves_trip["universal_half_score"],
                halves_trip["specific_half_score"],
            )
        )
        triplet_scores.append(trip.accuracy)

    persist_artifact(
        Table(
            kind="encoding",
            columns=[
                "model_id",
                "score",
                "universal_half",
                "specific_half",
                "dropped_channels",
            ],
            rows=encoding_rows,
        ),
        out_root / "encoding.csv",
    )
    persist_artifact(
        Table(
            kind="encoding_subjects",
            columns=["model_id", "subject", "mean_r"],
            rows=subject_rows,
        ),
        out_root / "encoding_subjects.csv",
    )
    persist_artifact(
        Table(
            kind="encoding_neurons",
            columns=[
                "model_id",
                "subject",
                "channel_id",
                "reliability",
                "ceiling",
                "held_out_r",
            ],
            rows=neuron_rows,
        ),
        out_root / "neurons.csv",
    )
    persist_artifact(
        Table(
            kind="triplets",
            columns=[
                "model_id",
                "accuracy",
                "evaluated",
                "skipped",
                "ties",
                "universal_half",
                "specific_half",
            ],
            rows=triplet_rows,
        ),
        out_root / "triplets.csv",
    )

    corr_rows = []
    for name, values in (
        ("encoding", encoding_scores),
        ("triplets", triplet_scores),
    ):
        try:
            corr = alignment_universality_correlation(values, u_values)
            corr_rows.append((name, corr.coefficient, corr.p, corr.n))
        except NumericalError:
            # Constant scores leave the correlation undefined; record
            # the row rather than failing the stage.
            corr_rows.append((name, None, None, len(values)))
    persist_artifact(
        Table(
            kind="alignment_correlations",
            columns=["evaluator", "r", "p", "n"],
            rows=corr_rows,
        ),
        out_root / "correlations.csv",
    )

    markers["align"] = digest
    _save_markers(ctx, markers)
    log_event(ctx, "align", "computed", models=len(model_ids))
    return {"stage": "align", "models": len(model_ids), "skipped": 0}


# ---------------------------------------------------------------------------
# Contrast stage


def run_contrast(ctx: PipelineContext) -> dict:
    manifest = load_manifest(ctx.resolve("manifest"))
    models_csv = ctx.workspace / "universality" / "models.csv"
    if not models_csv.exists():
        raise ValidationError(
            "model universality table missing: run the universality stage first"
        )
    specs_path = ctx.resolve("contrasts")
    payload = load_json(specs_path)
    check_schema_version(specs_path, payload)
    specs = payload.get("contrasts")
    if not isinstance(specs, list) or not specs:
        raise ValidationError(f"{specs_path}: contrasts must be a non-empty list")

    markers = _load_markers(ctx)
    out_root = ctx.stage_dir("contrast")
    input_files = [ctx.resolve("manifest"), specs_path, models_csv]
    config_part = {"rng_seed": ctx.run.rng_seed}
    digest = _digest(ctx, config_part, input_files)
    outputs = [out_root / "contrasts.csv"]
    if _fresh(ctx, markers, "contrast", digest, outputs):
        return {"stage": "contrast", "contrasts": len(specs), "skipped": 1}

    _, rows = read_csv(models_csv)
    model_scores = {row["model_id"]: float(row["u_m"]) for row in rows}
    results = run_contrasts(
        manifest, model_scores, specs, rng_seed=ctx.run.rng_seed
    )
    table_rows = []
    for res in results:
        lo, hi = res.effect_ci if res.effect_ci is not None else (None, None)
        table_rows.append(
            (
                res.contrast_name,
                res.test,
                res.statistic,
                res.p_raw,
                res.p_corrected,
                res.effect_size,
                lo,
                hi,
                len(res.group_summaries),
                res.detail,
            )
        )
    persist_artifact(
        Table(
            kind="contrasts",
            columns=[
                "contrast_name",
                "test",
                "statistic",
                "p_raw",
                "p_corrected",
                "effect_size",
                "effect_low",
                "effect_high",
                "n_groups",
                "detail",
            ],
            rows=table_rows,
        ),
        out_root / "contrasts.csv",
    )
    markers["contrast"] = digest
    _save_markers(ctx, markers)
    log_event(ctx, "contrast", "computed", contrasts=len(specs))
    return {"stage": "contrast", "contrasts": len(specs), "skipped": 0}


# ---------------------------------------------------------------------------
# Report stage


def _require_file(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ValidationError(
            f"{path.name} missing: run the {stage} stage first"
        )
    return path


def run_report(ctx: PipelineContext) -> dict:
    manifest = load_manifest(ctx.resolve("manifest"))
    model_ids = manifest.model_ids()
    uni_root = ctx.workspace / "universality"
    for mid in model_ids:
        _require_file(uni_root / f"{mid}.csv", "universality")
    models_csv = _require_file(uni_root / "models.csv", "universality")
    ceiling_csv = _require_file(uni_root / "ceiling.csv", "universality")
    dims_csv = _require_file(
        ctx.workspace / "content" / "dimensions.csv", "content"
    )
    deciles_csv = _require_file(
        ctx.workspace / "content" / "deciles.csv", "content"
    )
    encoding_csv = _require_file(
        ctx.workspace / "align" / "encoding.csv", "align"
    )
    triplets_csv = _require_file(
        ctx.workspace / "align" / "triplets.csv", "align"
    )
    contrasts_csv = _require_file(
        ctx.workspace / "contrast" / "contrasts.csv", "contrast"
    )

    markers = _load_markers(ctx)
    out_root = ctx.stage_dir("report")
    input_files = [uni_root / f"{mid}.csv" for mid in model_ids] + [
        models_csv,
        ceiling_csv,
        dims_csv,
        deciles_csv,
        encoding_csv,
        triplets_csv,
        contrasts_csv,
    ]
    digest = _digest(ctx, {"models": model_ids}, input_files)
    outputs = [
        out_root / "per_model.csv",
        out_root / "per_dimension.csv",
        out_root / "histogram_universality.csv",
        out_root / "deciles_variance.csv",
        out_root / "scatter_content.csv",
        out_root / "scatter_alignment.csv",
    ]
    if _fresh(ctx, markers, "report", digest, outputs):
        return {"stage": "report", "models": len(model_ids), "skipped": 1}

    _, model_rows = read_csv(models_csv)
    u_of = {r["model_id"]: r["u_m"] for r in model_rows}
    cka_rank_of = {r["model_id"]: r["cka_mean_rank"] for r in model_rows}
    _, enc_rows = read_csv(encoding_csv)
    enc_of = {r["model_id"]: r for r in enc_rows}
    _, trip_rows = read_csv(triplets_csv)
    trip_of = {r["model_id"]: r for r in trip_rows}

    per_model_rows = []
    for mid in model_ids:
        enc = enc_of.get(mid)
        trip = trip_of.get(mid)
        if enc is None or trip is None:
            raise ValidationError(
                f"alignment rows missing for model {mid!r}: "
                "run the align stage first"
            )
        per_model_rows.append(
            (
                mid,
                float(u_of[mid]),
                float(cka_rank_of[mid]),
                float(enc["score"]),
                float(enc["universal_half"]),
                float(enc["specific_half"]),
                float(trip["accuracy"]),
                float(trip["universal_half"]),
                float(trip["specific_half"]),
            )
        )
    persist_artifact(
        Table(
            kind="report_per_model",
            columns=[
                "model_id",
                "u_m",
                "cka_mean_rank",
                "encoding_score",
                "encoding_universal_half",
                "encoding_specific_half",
                "triplet_accuracy",
                "triplet_universal_half",
                "triplet_specific_half",
            ],
            rows=per_model_rows,
        ),
        out_root / "per_model.csv",
    )

    _, ceiling_rows = read_csv(ceiling_csv)
    ceiling_of = {
        (r["model_id"], int(r["dim"])): r["calibrated_ceiling"]
        for r in ceiling_rows
    }
    _, content_rows = read_csv(dims_csv)
    content_of = {(r["model_id"], int(r["dim"])): r for r in content_rows}

    per_dim_rows = []
    scatter_rows = []
    calibrated_pool = []
    for mid in model_ids:
        report = load_report(uni_root / f"{mid}.csv")
        for k in range(ctx.run.rank):
            content = content_of.get((mid, k))
            if content is None:
                raise ValidationError(
                    f"content row missing for ({mid}, dim {k}): "
                    "run the content stage first"
                )
            eta2 = None if content["eta2"] == "" else float(content["eta2"])
            calibrated = float(report.calibrated[k])
            calibrated_pool.append(calibrated)
            per_dim_rows.append(
                (
                    mid,
                    k,
                    float(report.raw[k]),
                    float(report.thresholds[k]),
                    calibrated,
                    float(ceiling_of[(mid, k)]),
                    eta2,
                    float(content["delta_r2"]),
                )
            )
            scatter_rows.append(
                (mid, k, calibrated, eta2, float(content["delta_r2"]))
            )
    persist_artifact(
        Table(
            kind="report_per_dimension",
            columns=[
                "model_id",
                "dim",
                "raw",
                "threshold",
                "calibrated",
                "ceiling",
                "eta2",
                "delta_r2",
            ],
            rows=per_dim_rows,
        ),
        out_root / "per_dimension.csv",
    )

    counts, edges = np.histogram(
        np.array(calibrated_pool), bins=20, range=(0.0, 1.0)
    )
    persist_artifact(
        Table(
            kind="universality_histogram",
            columns=["bin_low", "bin_high", "count"],
            rows=[
                (float(edges[i]), float(edges[i + 1]), int(counts[i]))
                for i in range(len(counts))
            ],
        ),
        out_root / "histogram_universality.csv",
    )

    decile_cols, decile_rows = read_csv(deciles_csv)
    persist_artifact(
        Table(
            kind="deciles_variance",
            columns=list(decile_cols),
            rows=[tuple(r[c] for c in decile_cols) for r in decile_rows],
        ),
        out_root / "deciles_variance.csv",
    )

    persist_artifact(
        Table(
            kind="scatter_content",
            columns=["model_id", "dim", "calibrated", "eta2", "delta_r2"],
            rows=scatter_rows,
        ),
        out_root / "scatter_content.csv",
    )
    persist_artifact(
        Table(
            kind="scatter_alignment",
            columns=["model_id", "u_m", "encoding_score", "triplet_accuracy"],
            rows=[
                (mid, float(u_of[mid]), float(enc_of[mid]["score"]),
                 float(trip_of[mid]["accuracy"]))
                for mid in model_ids
            ],
        ),
        out_root / "scatter_alignment.csv",
    )

    markers["report"] = digest
    _save_markers(ctx, markers)
    log_event(ctx, "report", "computed", models=len(model_ids))
    return {"stage": "report", "models": len(model_ids), "skipped": 0}


STAGE_RUNNERS = {
    "kernel": run_kernel,
    "factorize": run_factorize,
    "universality": run_universality,
    "content": run_content,
    "align": run_align,
    "contrast": run_contrast,
    "report": run_report,
}
