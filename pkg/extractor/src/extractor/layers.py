"""Penultimate-layer resolution.

The activations of interest are the INPUT to the final classification
or projection head, captured with a forward pre-hook. Which module is
"the head" is looked up per model family; families with no single
obvious head (stacked heads, convolutional classifiers) are absent
from the table on purpose, and extraction refuses to guess until the
caller names a module explicitly.
"""

from __future__ import annotations

from torch import nn

from .errors import ExtractionError
from .registry import ModelSpec

FAMILY_SELECTORS: dict[str, str] = {
    "toy-mlp": "head",
    "toy-cnn": "head",
    "resnet": "fc",
    "alexnet": "classifier.6",
    "vgg": "classifier.6",
    "vit": "heads",
    "convnext": "classifier.2",
}


def resolve_layer(
    model: nn.Module, spec: ModelSpec, explicit: str | None = None
) -> tuple[str, nn.Module]:
    """Return (module path, module) whose input will be captured."""
    if explicit is not None:
        selector = explicit
    else:
        selector = FAMILY_SELECTORS.get(spec.family)
        if selector is None:
            raise ExtractionError(
                f"layer selector unresolvable for model {spec.model_id!r} "
                f"(family {spec.family!r} has no default head); pass --layer "
                "with an explicit module path"
            )
    modules = dict(model.named_modules())
    target = modules.get(selector)
    if target is None:
        raise ExtractionError(
            f"layer selector {selector!r} does not name a module of "
            f"{spec.model_id!r}; available leaf modules include: "
            + ", ".join(sorted(name for name in modules if name)[:12])
        )
    return selector, target
