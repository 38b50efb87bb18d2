"""End-to-end checks of the staged workspace pipeline.

Runs the whole stage chain on a small synthetic workspace, then checks
output shape, rerun skipping, byte-level determinism across independent
workspaces and worker counts, and the dependency errors between stages.
"""

import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from unidim import pipeline
from unidim.artifacts import RunConfig, load_json, read_csv
from unidim.errors import ValidationError
from unidim.fixtures import write_fixture_workspace
from unidim.npy import read_npy, write_npy
from unidim.pipeline import PipelineContext, STAGE_RUNNERS, STAGES, load_context

# Eight models is the smallest fixture where every pre-registered
# contrast has validly sized groups and half-ensemble subsampling still
# leaves three models to rank.
MODELS = 8
RANK = 3
SEEDS = 2
CATEGORIES = 12
IMAGES_PER = 4
PERMUTATIONS = 50
TRIPLETS = 80
FIXTURE_SEED = 424242
N_ALPHAS = 2

MODEL_IDS = [f"model_{m:02d}" for m in range(MODELS)]
REPORT_FILES = (
    "per_model.csv",
    "per_dimension.csv",
    "histogram_universality.csv",
    "deciles_variance.csv",
    "scatter_content.csv",
    "scatter_alignment.csv",
)
COMPARE_FILES = tuple(f"report/{name}" for name in REPORT_FILES) + (
    "universality/models.csv",
    "universality/resampling.csv",
    "content/correlations.csv",
    "align/correlations.csv",
    "contrast/contrasts.csv",
)


def _generate(root: Path) -> Path:
    write_fixture_workspace(
        root,
        n_models=MODELS,
        n_categories=CATEGORIES,
        images_per_category=IMAGES_PER,
        rank=RANK,
        seeds=SEEDS,
        permutations=PERMUTATIONS,
        n_triplets=TRIPLETS,
        rng_seed=FIXTURE_SEED,
    )
    return root


def _run_all(root: Path, jobs: int = 1) -> list[dict]:
    summaries = []
    for stage in STAGES:
        ctx = load_context(workspace=root, jobs=jobs)
        summaries.append(STAGE_RUNNERS[stage](ctx))
    return summaries


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _tiny_inputs(root: Path) -> Path:
    """Fixture inputs only, no stages run; for dependency-error tests."""
    write_fixture_workspace(
        root,
        n_models=2,
        n_categories=4,
        images_per_category=2,
        rank=2,
        seeds=2,
        permutations=5,
        n_triplets=8,
        rng_seed=5,
    )
    return root


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = _generate(tmp_path_factory.mktemp("pipeline") / "main")
    summaries = _run_all(root)
    shas = {name: _sha(root / "report" / name) for name in REPORT_FILES}
    return {"root": root, "summaries": summaries, "shas": shas}


@pytest.fixture(scope="module")
def twin(tmp_path_factory):
    # Same fixture seed, separate directory, two worker processes: the
    # comparison below covers both rerun determinism and independence
    # from the worker count.
    root = _generate(tmp_path_factory.mktemp("pipeline") / "twin")
    _run_all(root, jobs=2)
    return root


def test_first_run_computes_every_stage(ws):
    by_stage = {s["stage"]: s for s in ws["summaries"]}
    assert set(by_stage) == set(STAGES)
    assert by_stage["kernel"] == {
        "stage": "kernel",
        "models": MODELS,
        "computed": MODELS,
        "skipped": 0,
    }
    assert by_stage["factorize"]["computed"] == MODELS
    assert by_stage["contrast"]["contrasts"] == 4
    for stage in ("universality", "content", "align", "report"):
        assert by_stage[stage]["models"] == MODELS
        assert by_stage[stage]["skipped"] == 0


def test_stage_outputs_exist(ws):
    root = ws["root"]
    for mid in MODEL_IDS:
        for a in range(N_ALPHAS):
            assert (root / "kernel" / mid / f"alpha_{a:02d}.npy").exists()
            for s in range(SEEDS):
                name = f"alpha_{a:02d}_seed_{s}.npy"
                assert (root / "embeddings" / mid / name).exists()
        assert (root / "embeddings" / mid / "selection.json").exists()
        assert (root / "universality" / f"{mid}.csv").exists()
    for name in ("models.csv", "ceiling.csv", "resampling.csv"):
        assert (root / "universality" / name).exists()
    for name in (
        "dimensions.csv",
        "deciles.csv",
        "correlations.csv",
        "labels_crosstab.csv",
    ):
        assert (root / "content" / name).exists()
    for name in (
        "encoding.csv",
        "encoding_subjects.csv",
        "neurons.csv",
        "triplets.csv",
        "correlations.csv",
    ):
        assert (root / "align" / name).exists()
    assert (root / "contrast" / "contrasts.csv").exists()
    for name in REPORT_FILES:
        assert (root / "report" / name).exists()


def test_selection_records_choice_within_grid(ws):
    root = ws["root"]
    grid = load_json(root / "config.json")["run"]["alpha_grid"]
    for mid in MODEL_IDS:
        record = load_json(root / "embeddings" / mid / "selection.json")
        assert record["model_id"] == mid
        assert record["chosen_alpha"] in grid
        assert record["chosen_alpha_index"] == grid.index(record["chosen_alpha"])
        assert 0 <= record["central_seed_index"] < SEEDS


def test_report_row_counts(ws):
    root = ws["root"]
    _, dim_rows = read_csv(root / "report" / "per_dimension.csv")
    assert len(dim_rows) == MODELS * RANK
    _, model_rows = read_csv(root / "report" / "per_model.csv")
    assert len(model_rows) == MODELS
    assert [r["model_id"] for r in model_rows] == MODEL_IDS
    _, hist_rows = read_csv(root / "report" / "histogram_universality.csv")
    assert len(hist_rows) == 20
    assert sum(int(r["count"]) for r in hist_rows) == MODELS * RANK
    _, ceiling_rows = read_csv(root / "universality" / "ceiling.csv")
    assert len(ceiling_rows) == MODELS * RANK


def test_per_dimension_scores_are_calibrated(ws):
    _, rows = read_csv(ws["root"] / "report" / "per_dimension.csv")
    for row in rows:
        assert 0.0 <= float(row["raw"]) <= 1.0
        assert 0.0 <= float(row["threshold"]) < 1.0
        assert 0.0 <= float(row["calibrated"]) <= 1.0


def test_decile_table_partitions_variance(ws):
    _, rows = read_csv(ws["root"] / "content" / "deciles.csv")
    assert [int(r["decile"]) for r in rows] == list(range(1, 11))
    assert 0 < sum(int(r["n_dimensions"]) for r in rows) <= MODELS * RANK
    for row in rows:
        if row["between_fraction"] == "":
            continue
        total = float(row["between_fraction"]) + float(row["within_fraction"])
        assert total == pytest.approx(1.0, abs=1e-9)


def test_contrast_table_applies_family_correction(ws):
    _, rows = read_csv(ws["root"] / "contrast" / "contrasts.csv")
    names = {r["contrast_name"] for r in rows}
    assert {
        "objective_welch",
        "family_anova",
        "model_descriptive",
        "data_within_supervised",
    } <= names
    # The correction multiplier is the number of pre-registered
    # contrasts, not the number of emitted rows.
    for row in rows:
        if row["p_raw"] == "":
            continue
        expected = min(1.0, float(row["p_raw"]) * 4)
        assert float(row["p_corrected"]) == pytest.approx(expected, rel=1e-12)
    spread = [r for r in rows if r["contrast_name"].endswith("_spread")]
    assert spread
    assert all(r["test"] == "sd_bootstrap" for r in spread)


def test_resampling_modes_present(ws):
    _, rows = read_csv(ws["root"] / "universality" / "resampling.csv")
    modes = [r["mode"] for r in rows]
    assert modes.count("bootstrap_subsample") == 1
    assert modes.count("leave_family_out") == 1
    boot = next(r for r in rows if r["mode"] == "bootstrap_subsample")
    assert int(boot["n_used"]) > 0
    low, mid, high = (
        float(boot["rho_low"]),
        float(boot["rho_median"]),
        float(boot["rho_high"]),
    )
    assert low <= mid <= high


def test_effective_config_written(ws):
    payload = load_json(ws["root"] / "config.effective.json")
    run = RunConfig.from_dict(payload["run"]).validate()
    assert run.rng_seed == FIXTURE_SEED
    assert run.rank == RANK
    assert run.seeds == SEEDS
    assert payload["paths"]["manifest"] == "inputs/manifest.json"


def test_markers_cover_stages(ws):
    markers = load_json(ws["root"] / "state" / "markers.json")
    for mid in MODEL_IDS:
        assert f"kernel/{mid}" in markers
        assert f"factorize/{mid}" in markers
    for key in ("universality", "content", "align", "contrast", "report"):
        assert key in markers


def test_log_records_stage_events(ws):
    lines = (ws["root"] / "logs" / "run.log").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert all({"ts", "stage", "event"} <= set(r) for r in records)
    assert {r["stage"] for r in records} >= set(STAGES)


def test_rerun_skips_and_preserves_outputs(ws):
    root = ws["root"]
    for summary in _run_all(root):
        if "computed" in summary:
            assert summary["computed"] == 0
            assert summary["skipped"] == MODELS
        else:
            assert summary["skipped"] == 1
    for name, sha in ws["shas"].items():
        assert _sha(root / "report" / name) == sha


def test_independent_parallel_run_is_byte_identical(ws, twin):
    root = ws["root"]
    for rel in COMPARE_FILES:
        assert (root / rel).read_bytes() == (twin / rel).read_bytes(), rel


def test_force_recomputes_same_bytes(ws, tmp_path):
    root = ws["root"]
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    ctx = load_context(workspace=copy, force=True)
    summary = pipeline.run_kernel(ctx)
    assert summary["computed"] == MODELS
    assert summary["skipped"] == 0
    for mid in MODEL_IDS:
        rel = Path("kernel") / mid / "alpha_00.npy"
        assert (copy / rel).read_bytes() == (root / rel).read_bytes()


def test_changed_features_recompute_only_that_model(ws, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(ws["root"], copy)
    target = copy / "inputs" / "features" / "model_03.npy"
    features = read_npy(target)
    write_npy(target, (features + 1e-3).astype(np.float32))
    summary = pipeline.run_kernel(load_context(workspace=copy))
    assert summary == {
        "stage": "kernel",
        "models": MODELS,
        "computed": 1,
        "skipped": MODELS - 1,
    }


def test_seed_override_changes_effective_config(ws, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(ws["root"], copy)
    load_context(workspace=copy, seed=31)
    assert load_json(copy / "config.effective.json")["run"]["rng_seed"] == 31
    assert load_json(copy / "config.json")["run"]["rng_seed"] == FIXTURE_SEED


# ---------------------------------------------------------------------------
# Dependency and configuration errors


def test_factorize_requires_kernel_outputs(tmp_path):
    ctx = load_context(workspace=_tiny_inputs(tmp_path / "ws"))
    with pytest.raises(ValidationError, match="kernel stage"):
        pipeline.run_factorize(ctx)


def test_universality_requires_factorize(tmp_path):
    ctx = load_context(workspace=_tiny_inputs(tmp_path / "ws"))
    with pytest.raises(ValidationError, match="factorize stage"):
        pipeline.run_universality(ctx)


def test_contrast_requires_universality(tmp_path):
    ctx = load_context(workspace=_tiny_inputs(tmp_path / "ws"))
    with pytest.raises(ValidationError, match="universality stage"):
        pipeline.run_contrast(ctx)


def test_content_requires_universality_reports(ws, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(ws["root"], copy)
    (copy / "universality" / "model_00.csv").unlink()
    with pytest.raises(ValidationError, match="universality report missing"):
        pipeline.run_content(load_context(workspace=copy))


def test_report_requires_contrast_outputs(ws, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(ws["root"], copy)
    (copy / "contrast" / "contrasts.csv").unlink()
    with pytest.raises(ValidationError, match="contrast stage"):
        pipeline.run_report(load_context(workspace=copy))


def test_content_rejects_malformed_label_table(ws, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(ws["root"], copy)
    bad = copy / "inputs" / "dimension_labels.csv"
    bad.write_text("dim,name\r\n0,semantic\r\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="dimension label table"):
        pipeline.run_content(load_context(workspace=copy))


def test_load_context_requires_some_location(monkeypatch):
    monkeypatch.delenv(pipeline.WORKSPACE_ENV, raising=False)
    with pytest.raises(ValidationError, match="UNIDIM_WORKSPACE"):
        load_context()


def test_load_context_env_fallback(ws, monkeypatch):
    monkeypatch.setenv(pipeline.WORKSPACE_ENV, str(ws["root"]))
    ctx = load_context()
    assert ctx.workspace == ws["root"]
    assert ctx.run.rng_seed == FIXTURE_SEED


def test_load_context_missing_config(tmp_path):
    with pytest.raises(ValidationError, match="config file not found"):
        load_context(workspace=tmp_path)


def test_load_context_rejects_nonstring_paths(tmp_path):
    (tmp_path / "config.json").write_text(
        json.dumps({"schema_version": "1", "run": {}, "paths": {"manifest": 3}}),
        encoding="utf-8",
    )
    with pytest.raises(ValidationError, match="paths must map names to strings"):
        load_context(workspace=tmp_path)


def test_load_context_rejects_unknown_schema(tmp_path):
    (tmp_path / "config.json").write_text(
        json.dumps({"schema_version": "9", "run": {}, "paths": {}}),
        encoding="utf-8",
    )
    with pytest.raises(ValidationError, match="schema_version"):
        load_context(workspace=tmp_path)


def test_load_context_rejects_bad_jobs(ws):
    with pytest.raises(ValidationError, match="--jobs"):
        load_context(workspace=ws["root"], jobs=0)


def test_resolve_unknown_and_missing_inputs(ws):
    ctx = load_context(workspace=ws["root"])
    with pytest.raises(ValidationError, match="has no 'nonexistent' entry"):
        ctx.resolve("nonexistent")
    bare = PipelineContext(
        workspace=ws["root"], run=ctx.run, input_paths={"manifest": "gone.json"}
    )
    assert not bare.has_input("manifest")
    with pytest.raises(ValidationError, match="input file not found"):
        bare.resolve("manifest")
