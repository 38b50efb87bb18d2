"""Batched activation extraction and manifest maintenance."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ExtractionError
from .images import DecodeError, discover_images, load_and_preprocess
from .layers import resolve_layer
from .registry import ModelSpec, resolve_model

log = logging.getLogger("extractor")

MANIFEST_NAME = "manifest.json"
SCHEMA_VERSION = "1"


@dataclass
class ExtractionJob:
    model_id: str
    image_dir: Path
    out_dir: Path
    layer: str | None = None
    batch_size: int = 16
    pretrained: bool = True


@dataclass
class ExtractionResult:
    model_id: str
    layer: str
    image_ids: list[str]
    skipped: list[str] = field(default_factory=list)
    features_path: Path = Path()
    manifest_path: Path = Path()
    shape: tuple[int, int] = (0, 0)


def run_extraction(job: ExtractionJob) -> ExtractionResult:
    if job.batch_size < 1:
        raise ExtractionError(f"batch size must be >= 1, got {job.batch_size}")
    spec = resolve_model(job.model_id)
    model = spec.build(job.pretrained)
    model.eval()
    layer_path, target = resolve_layer(model, spec, job.layer)

    arrays: list[np.ndarray] = []
    image_ids: list[str] = []
    skipped: list[str] = []
    for path in discover_images(job.image_dir):
        try:
            arrays.append(load_and_preprocess(path, spec.preprocess))
        except DecodeError as exc:
            log.warning("skipping undecodable image %s", exc)
            skipped.append(path.name)
            continue
        image_ids.append(path.name)
    if len(image_ids) < 2:
        raise ExtractionError(
            f"only {len(image_ids)} decodable images in {job.image_dir}; "
            "need at least 2"
        )

    features = _forward_capture(model, target, layer_path, arrays, job.batch_size)
    if not np.isfinite(features).all():
        raise ExtractionError(
            f"model {job.model_id!r} produced non-finite activations"
        )

    job.out_dir.mkdir(parents=True, exist_ok=True)
    features_name = job.model_id.replace("/", "__") + ".npy"
    features_path = job.out_dir / features_name
    np.save(features_path, features.astype(np.float32, copy=False))
    manifest_path = _update_manifest(
        job.out_dir, spec, layer_path, image_ids, features_name
    )
    return ExtractionResult(
        model_id=job.model_id,
        layer=layer_path,
        image_ids=image_ids,
        skipped=skipped,
        features_path=features_path,
        manifest_path=manifest_path,
        shape=(features.shape[0], features.shape[1]),
    )


def _forward_capture(
    model: torch.nn.Module,
    target: torch.nn.Module,
    layer_path: str,
    arrays: list[np.ndarray],
    batch_size: int,
) -> np.ndarray:
    captured: list[torch.Tensor] = []

    def pre_hook(module: torch.nn.Module, args: tuple) -> None:
        captured.append(args[0].detach())

    rows: list[np.ndarray] = []
    handle = target.register_forward_pre_hook(pre_hook)
    try:
        with torch.no_grad():
            for start in range(0, len(arrays), batch_size):
                batch = torch.from_numpy(
                    np.stack(arrays[start : start + batch_size])
                )
                captured.clear()
                model(batch)
                if not captured:
                    raise ExtractionError(
                        f"layer {layer_path!r} was never reached in the "
                        "forward pass"
                    )
                if len(captured) > 1:
                    raise ExtractionError(
                        f"layer {layer_path!r} ran {len(captured)} times in "
                        "one forward pass; name an unambiguous module with "
                        "--layer"
                    )
                feats = captured[0]
                rows.append(
                    feats.reshape(feats.shape[0], -1)
                    .to(torch.float32)
                    .cpu()
                    .numpy()
                )
    finally:
        handle.remove()
    return np.concatenate(rows, axis=0)


def _update_manifest(
    out_dir: Path,
    spec: ModelSpec,
    layer: str,
    image_ids: list[str],
    features_name: str,
) -> Path:
    path = out_dir / MANIFEST_NAME
    models: list[dict] = []
    preprocessing: dict[str, dict] = {}
    if path.exists():
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ExtractionError(f"cannot read manifest {path}: {exc}") from exc
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ExtractionError(
                f"{path}: schema_version {version!r} is not supported"
            )
        existing = payload.get("images")
        if existing != image_ids:
            raise ExtractionError(
                f"{path}: image list differs from this run "
                f"({len(existing or [])} vs {len(image_ids)} images); every "
                "model in a run must see the same decodable images"
            )
        models = [
            m for m in payload.get("models", [])
            if m.get("model_id") != spec.model_id
        ]
        preprocessing = dict(payload.get("preprocessing", {}))

    entry: dict = {
        "model_id": spec.model_id,
        "features": features_name,
        "architecture_class": spec.architecture_class,
        "family": spec.family,
        "objective": spec.objective,
        "training_data": spec.training_data,
    }
    if spec.imagenet_top1 is not None:
        entry["imagenet_top1"] = spec.imagenet_top1
    if spec.parameter_count is not None:
        entry["parameter_count"] = spec.parameter_count
    models.append(entry)
    models.sort(key=lambda m: m["model_id"])
    preprocessing[spec.model_id] = dict(
        spec.preprocess.as_dict(), layer=layer
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "images": image_ids,
        "models": models,
        "preprocessing": preprocessing,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path
