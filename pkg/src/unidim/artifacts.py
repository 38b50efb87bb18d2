"""Dataset artifacts and their on-disk representation.

Matrices travel as NPY files; metadata and report tables travel as JSON
and RFC-4180 CSV, each carrying a schema-version field so that
forward-incompatible files are rejected instead of silently coerced.
Every writer here is deterministic: identical values produce identical
bytes, which is what makes pipeline reruns comparable byte-for-byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .npy import read_npy, write_npy

SCHEMA_VERSION = "1"

ARCHITECTURE_CLASSES = ("convolutional", "transformer", "mlp-mixer", "hybrid")

_WIDTH_DTYPES = {32: np.float32, 64: np.float64}


# ---------------------------------------------------------------------------
# JSON / CSV primitives


def dump_json(path: str | Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=2)
    path.write_text(text + "\n", encoding="utf-8")


def load_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise ValidationError(f"{path}: top-level JSON value must be an object")
    return payload


def check_schema_version(path: str | Path, payload: dict) -> None:
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(
            f"{path}: schema_version {version!r} is not supported "
            f"(expected {SCHEMA_VERSION!r})"
        )


def format_cell(value) -> str:
    """Render one CSV cell deterministically.

    Floats use repr of the exact double value, so equal numbers always
    produce equal bytes and parse back without loss.
    """
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    raise ValidationError(f"cannot format CSV cell of type {type(value).__name__}")


def write_csv(path: str | Path, columns: list[str], rows: list[tuple]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValidationError(
                f"{path}: row of width {len(row)} does not match "
                f"{len(columns)} columns"
            )
        writer.writerow([format_cell(cell) for cell in row])
    path.write_text(buffer.getvalue(), encoding="utf-8")


def read_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        columns = next(reader)
    except StopIteration:
        raise ValidationError(f"{path}: empty CSV, header row is mandatory")
    rows = [dict(zip(columns, row)) for row in reader if row]
    return columns, rows


# ---------------------------------------------------------------------------
# Feature matrices and manifests


@dataclass
class FeatureMatrix:
    model_id: str
    values: np.ndarray
    image_ids: list[str]


def load_feature_matrix(
    path: str | Path,
    *,
    model_id: str | None = None,
    image_ids: list[str] | None = None,
    float_width: int = 32,
) -> FeatureMatrix:
    """Load one model's activation matrix, validating shape and finiteness.

    When image_ids is supplied (normally from the manifest), the row count
    must match it; rows are taken to be in that order.
    """
    if float_width not in _WIDTH_DTYPES:
        raise ValidationError(f"float_width must be 32 or 64, got {float_width}")
    path = Path(path)
    values = read_npy(path)
    if values.ndim != 2:
        raise ValidationError(f"{path}: expected a 2-D array, got {values.ndim}-D")
    n, d = values.shape
    if n < 2 or d < 1:
        raise ValidationError(f"{path}: shape {values.shape} is too small (need N>=2, d>=1)")
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ValidationError(
            f"{path}: non-finite value at row {int(row)}, column {int(col)}"
        )
    if image_ids is not None and len(image_ids) != n:
        raise ValidationError(
            f"{path}: {n} rows but the manifest lists {len(image_ids)} images"
        )
    if image_ids is None:
        image_ids = [str(i) for i in range(n)]
    if len(set(image_ids)) != len(image_ids):
        raise ValidationError(f"{path}: image_ids are not unique")
    values = values.astype(_WIDTH_DTYPES[float_width], copy=False)
    return FeatureMatrix(
        model_id=model_id if model_id is not None else path.stem,
        values=values,
        image_ids=list(image_ids),
    )


@dataclass(frozen=True)
class ManifestEntry:
    model_id: str
    features: str
    architecture_class: str
    family: str
    objective: str
    training_data: str
    imagenet_top1: float | None = None
    parameter_count: int | None = None


@dataclass
class ModelManifest:
    entries: list[ManifestEntry]
    images: list[str]
    root: Path

    def model_ids(self) -> list[str]:
        return [entry.model_id for entry in self.entries]

    def entry(self, model_id: str) -> ManifestEntry:
        for entry in self.entries:
            if entry.model_id == model_id:
                return entry
        raise ValidationError(f"model {model_id!r} is not in the manifest")

    def features_path(self, model_id: str) -> Path:
        return self.root / self.entry(model_id).features


_REQUIRED_MODEL_KEYS = {
    "model_id",
    "features",
    "architecture_class",
    "family",
    "objective",
    "training_data",
}
_OPTIONAL_MODEL_KEYS = {"imagenet_top1", "parameter_count"}


def load_manifest(path: str | Path, *, check_files: bool = True) -> ModelManifest:
    path = Path(path)
    payload = load_json(path)
    check_schema_version(path, payload)
    models = payload.get("models")
    if not isinstance(models, list) or not models:
        raise ValidationError(f"{path}: manifest needs a non-empty 'models' array")
    images = payload.get("images")
    if not isinstance(images, list) or len(images) < 2:
        raise ValidationError(f"{path}: manifest needs an 'images' array with N >= 2")
    if len(set(images)) != len(images):
        raise ValidationError(f"{path}: image ids are not unique")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for i, item in enumerate(models):
        if not isinstance(item, dict):
            raise ValidationError(f"{path}: models[{i}] is not an object")
        missing = _REQUIRED_MODEL_KEYS - set(item)
        if missing:
            raise ValidationError(
                f"{path}: models[{i}] missing keys {sorted(missing)}"
            )
        unknown = set(item) - _REQUIRED_MODEL_KEYS - _OPTIONAL_MODEL_KEYS
        if unknown:
            raise ValidationError(
                f"{path}: models[{i}] has unknown keys {sorted(unknown)}"
            )
        model_id = item["model_id"]
        if model_id in seen:
            raise ValidationError(f"{path}: duplicate model_id {model_id!r}")
        seen.add(model_id)
        arch = item["architecture_class"]
        if arch not in ARCHITECTURE_CLASSES:
            raise ValidationError(
                f"{path}: models[{i}] architecture_class {arch!r} is not one of "
                f"{ARCHITECTURE_CLASSES}"
            )
        top1 = item.get("imagenet_top1")
        if top1 is not None and not (0.0 <= float(top1) <= 1.0):
            raise ValidationError(
                f"{path}: models[{i}] imagenet_top1 must lie in [0, 1]"
            )
        params = item.get("parameter_count")
        if params is not None and int(params) <= 0:
            raise ValidationError(
                f"{path}: models[{i}] parameter_count must be positive"
            )
        entries.append(
            ManifestEntry(
                model_id=model_id,
                features=item["features"],
                architecture_class=arch,
                family=item["family"],
                objective=item["objective"],
                training_data=item["training_data"],
                imagenet_top1=None if top1 is None else float(top1),
                parameter_count=None if params is None else int(params),
            )
        )
    manifest = ModelManifest(entries=entries, images=list(images), root=path.parent)
    if check_files:
        for entry in entries:
            target = manifest.root / entry.features
            if not target.is_file():
                raise ValidationError(
                    f"{path}: model {entry.model_id!r} references missing "
                    f"feature file {entry.features!r}"
                )
    return manifest


def save_manifest(path: str | Path, manifest_payload: dict) -> None:
    payload = dict(manifest_payload)
    payload["schema_version"] = SCHEMA_VERSION
    dump_json(path, payload)


# ---------------------------------------------------------------------------
# Category index


@dataclass
class CategoryIndex:
    category_of: dict[str, str]
    C: int
    J: int
    balanced: bool
    representatives: dict[str, str] = field(default_factory=dict)

    def categories(self) -> list[str]:
        return sorted(set(self.category_of.values()))

    def labels_for(self, image_ids: list[str]) -> np.ndarray:
        """Integer category codes aligned to the given image order."""
        order = {cat: i for i, cat in enumerate(self.categories())}
        try:
            return np.array([order[self.category_of[i]] for i in image_ids])
        except KeyError as exc:
            raise ValidationError(f"image {exc.args[0]!r} has no category") from exc


def load_category_index(path: str | Path, *, balanced: bool = True) -> CategoryIndex:
    path = Path(path)
    payload = load_json(path)
    check_schema_version(path, payload)
    mapping = payload.get("categories")
    if not isinstance(mapping, dict) or not mapping:
        raise ValidationError(f"{path}: needs a non-empty 'categories' mapping")
    category_of = {str(k): str(v) for k, v in mapping.items()}
    counts: dict[str, int] = {}
    for cat in category_of.values():
        counts[cat] = counts.get(cat, 0) + 1
    sizes = sorted(set(counts.values()))
    if balanced and len(sizes) != 1:
        raise ValidationError(
            f"{path}: unbalanced categories (sizes {sizes}) but balanced mode is set"
        )
    reps = payload.get("representatives", {})
    if not isinstance(reps, dict):
        raise ValidationError(f"{path}: 'representatives' must be a mapping")
    for cat, image in reps.items():
        if image not in category_of or category_of[image] != cat:
            raise ValidationError(
                f"{path}: representative {image!r} does not belong to {cat!r}"
            )
    return CategoryIndex(
        category_of=category_of,
        C=len(counts),
        J=sizes[-1],
        balanced=balanced,
        representatives={str(k): str(v) for k, v in reps.items()},
    )


# ---------------------------------------------------------------------------
# Run configuration


def _default_ridge_grid() -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(-2.0, 6.0, 20))


@dataclass(frozen=True)
class RunConfig:
    rank: int = 50
    seeds: int = 5
    alpha_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0)
    permutations: int = 1000
    null_percentile: float = 0.95
    cv_folds: int = 5
    ridge_grid: tuple[float, ...] = field(default_factory=_default_ridge_grid)
    rng_seed: int = 20260815
    float_width: int = 32

    def validate(self) -> "RunConfig":
        if self.rank < 1:
            raise ValidationError("rank must be a positive integer")
        if self.seeds < 1:
            raise ValidationError("seeds must be a positive integer")
        grid = tuple(float(a) for a in self.alpha_grid)
        if not grid or any(a <= 0 for a in grid):
            raise ValidationError("alpha_grid must be non-empty positive reals")
        if list(grid) != sorted(set(grid)):
            raise ValidationError("alpha_grid must be strictly ascending")
        if self.permutations < 1:
            raise ValidationError("permutations must be positive")
        if not (0.0 < self.null_percentile < 1.0):
            raise ValidationError("null_percentile must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be at least 2")
        ridge = tuple(float(v) for v in self.ridge_grid)
        if not ridge or any(v <= 0 for v in ridge):
            raise ValidationError("ridge_grid must be non-empty positive reals")
        if self.float_width not in _WIDTH_DTYPES:
            raise ValidationError("float_width must be 32 or 64")
        if not (-(2**63) <= int(self.rng_seed) < 2**63):
            raise ValidationError("rng_seed must fit in 64 bits")
        return replace(self, alpha_grid=grid, ridge_grid=ridge)

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(_WIDTH_DTYPES[self.float_width])

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "seeds": self.seeds,
            "alpha_grid": list(self.alpha_grid),
            "permutations": self.permutations,
            "null_percentile": self.null_percentile,
            "cv_folds": self.cv_folds,
            "ridge_grid": list(self.ridge_grid),
            "rng_seed": self.rng_seed,
            "float_width": self.float_width,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown run-config keys {sorted(unknown)}")
        kwargs = dict(payload)
        for key in ("alpha_grid", "ridge_grid"):
            if key in kwargs:
                kwargs[key] = tuple(float(v) for v in kwargs[key])
        for key in ("rank", "seeds", "permutations", "cv_folds", "rng_seed",
                    "float_width"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        if "null_percentile" in kwargs:
            kwargs["null_percentile"] = float(kwargs["null_percentile"])
        return cls(**kwargs).validate()


# ---------------------------------------------------------------------------
# Pipeline artifacts


@dataclass
class SimilarityMatrix:
    model_id: str
    values: np.ndarray
    alpha: float
    sigma: float
    median_distance: float


@dataclass
class Embedding:
    model_id: str
    W: np.ndarray
    rank: int
    seed: int
    alpha: float
    objective: float
    explained_variance: float
    iterations: int
    converged: bool


@dataclass
class UniversalityReport:
    model_id: str
    raw: np.ndarray
    thresholds: np.ndarray
    calibrated: np.ndarray
    model_mean: float


REPORT_COLUMNS = ["model_id", "dim", "raw", "threshold", "calibrated"]


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def _csv_meta(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def persist_artifact(artifact, path: str | Path, *, float_width: int | None = None) -> None:
    """Write one artifact to disk.

    Matrix-bearing artifacts become an NPY file plus a JSON sidecar;
    reports become CSV plus a JSON meta file. Reloading reproduces the
    stored values bit-exactly at the stored float width.
    """
    path = Path(path)
    if isinstance(artifact, Embedding):
        matrix = artifact.W
        if float_width is not None:
            matrix = matrix.astype(_WIDTH_DTYPES[float_width], copy=False)
        write_npy(path, matrix)
        dump_json(
            _sidecar(path),
            {
                "schema_version": SCHEMA_VERSION,
                "kind": "embedding",
                "model_id": artifact.model_id,
                "rank": int(artifact.rank),
                "seed": int(artifact.seed),
                "alpha": float(artifact.alpha),
                "objective": float(artifact.objective),
                "explained_variance": float(artifact.explained_variance),
                "iterations": int(artifact.iterations),
                "converged": bool(artifact.converged),
            },
        )
    elif isinstance(artifact, SimilarityMatrix):
        matrix = artifact.values
        if float_width is not None:
            matrix = matrix.astype(_WIDTH_DTYPES[float_width], copy=False)
        write_npy(path, matrix)
        dump_json(
            _sidecar(path),
            {
                "schema_version": SCHEMA_VERSION,
                "kind": "similarity",
                "model_id": artifact.model_id,
                "alpha": float(artifact.alpha),
                "sigma": float(artifact.sigma),
                "median_distance": float(artifact.median_distance),
            },
        )
    elif isinstance(artifact, UniversalityReport):
        r = len(artifact.raw)
        rows = [
            (
                artifact.model_id,
                k,
                float(artifact.raw[k]),
                float(artifact.thresholds[k]),
                float(artifact.calibrated[k]),
            )
            for k in range(r)
        ]
        write_csv(path, REPORT_COLUMNS, rows)
        dump_json(
            _csv_meta(path),
            {
                "schema_version": SCHEMA_VERSION,
                "kind": "universality_report",
                "model_id": artifact.model_id,
                "model_mean": float(artifact.model_mean),
                "columns": REPORT_COLUMNS,
            },
        )
    elif isinstance(artifact, Table):
        write_csv(path, artifact.columns, artifact.rows)
        dump_json(
            _csv_meta(path),
            {
                "schema_version": SCHEMA_VERSION,
                "kind": artifact.kind,
                "columns": artifact.columns,
            },
        )
    else:
        raise ValidationError(
            f"cannot persist object of type {type(artifact).__name__}"
        )


@dataclass
class Table:
    """A generic result table: named columns plus value rows."""

    kind: str
    columns: list[str]
    rows: list[tuple]


def load_embedding(path: str | Path) -> Embedding:
    path = Path(path)
    meta = load_json(_sidecar(path))
    check_schema_version(_sidecar(path), meta)
    if meta.get("kind") != "embedding":
        raise ValidationError(f"{path}: sidecar kind {meta.get('kind')!r} is not 'embedding'")
    W = read_npy(path)
    if W.ndim != 2 or W.shape[1] != int(meta["rank"]):
        raise ValidationError(f"{path}: matrix shape {W.shape} does not match rank")
    return Embedding(
        model_id=meta["model_id"],
        W=W,
        rank=int(meta["rank"]),
        seed=int(meta["seed"]),
        alpha=float(meta["alpha"]),
        objective=float(meta["objective"]),
        explained_variance=float(meta["explained_variance"]),
        iterations=int(meta["iterations"]),
        converged=bool(meta["converged"]),
    )


def load_similarity(path: str | Path) -> SimilarityMatrix:
    path = Path(path)
    meta = load_json(_sidecar(path))
    check_schema_version(_sidecar(path), meta)
    if meta.get("kind") != "similarity":
        raise ValidationError(f"{path}: sidecar kind {meta.get('kind')!r} is not 'similarity'")
    values = read_npy(path)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError(f"{path}: similarity matrix must be square")
    return SimilarityMatrix(
        model_id=meta["model_id"],
        values=values,
        alpha=float(meta["alpha"]),
        sigma=float(meta["sigma"]),
        median_distance=float(meta["median_distance"]),
    )


def load_report(path: str | Path) -> UniversalityReport:
    path = Path(path)
    meta = load_json(_csv_meta(path))
    check_schema_version(_csv_meta(path), meta)
    if meta.get("kind") != "universality_report":
        raise ValidationError(
            f"{path}: meta kind {meta.get('kind')!r} is not 'universality_report'"
        )
    columns, rows = read_csv(path)
    if columns != REPORT_COLUMNS:
        raise ValidationError(f"{path}: unexpected columns {columns}")
    if not rows:
        raise ValidationError(f"{path}: report has no rows")
    rows = sorted(rows, key=lambda row: int(row["dim"]))
    return UniversalityReport(
        model_id=rows[0]["model_id"],
        raw=np.array([float(r["raw"]) for r in rows]),
        thresholds=np.array([float(r["threshold"]) for r in rows]),
        calibrated=np.array([float(r["calibrated"]) for r in rows]),
        model_mean=float(meta["model_mean"]),
    )
