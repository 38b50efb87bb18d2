"""Model lookup table: builders, metadata, and preprocessing specs.

Every extractable model id lives here. Metadata fields mirror the
manifest vocabulary of the analysis pipeline (architecture_class is
restricted to its four classes). Toy models carry closed-form weights
so tests can recompute their forward pass independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import ExtractionError


@dataclass(frozen=True)
class PreprocessSpec:
    """Short-side resize, center crop, scale to [0,1], then normalize."""

    resize: int
    crop: int
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def as_dict(self) -> dict:
        return {
            "resize": self.resize,
            "crop": self.crop,
            "mean": list(self.mean),
            "std": list(self.std),
        }


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    family: str
    architecture_class: str
    objective: str
    training_data: str
    preprocess: PreprocessSpec
    build: Callable[[bool], nn.Module] = field(compare=False)
    imagenet_top1: float | None = None
    parameter_count: int | None = None


def _ramp(count: int, scale: float, phase: float = 0.0) -> torch.Tensor:
    """Deterministic weight filler; same formula as the test oracles."""
    return torch.from_numpy(
        (scale * np.sin(np.arange(count, dtype=np.float64) + phase)).astype(
            np.float32
        )
    )


class TinyMlp(nn.Module):
    """2x2 RGB input, one hidden layer, 5-way head."""

    def __init__(self) -> None:
        super().__init__()
        self.flatten = nn.Flatten()
        self.hidden = nn.Linear(12, 8)
        self.act = nn.ReLU()
        self.head = nn.Linear(8, 5)
        with torch.no_grad():
            self.hidden.weight.copy_(_ramp(96, 0.5).reshape(8, 12))
            self.hidden.bias.copy_(_ramp(8, 0.1, phase=1.0))
            self.head.weight.copy_(_ramp(40, 0.3, phase=0.5).reshape(5, 8))
            self.head.bias.copy_(_ramp(5, 0.05, phase=0.25))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.act(self.hidden(self.flatten(x))))


class TinyCnn(nn.Module):
    """8x8 RGB input, one conv block, pooled 16-feature head input."""

    def __init__(self) -> None:
        super().__init__()
        self.conv = nn.Conv2d(3, 4, kernel_size=3, padding=1)
        self.act = nn.ReLU()
        self.pool = nn.AdaptiveAvgPool2d(2)
        self.flatten = nn.Flatten()
        self.head = nn.Linear(16, 6)
        with torch.no_grad():
            self.conv.weight.copy_(_ramp(108, 0.2, phase=2.0).reshape(4, 3, 3, 3))
            self.conv.bias.copy_(_ramp(4, 0.05, phase=0.75))
            self.head.weight.copy_(_ramp(96, 0.1, phase=1.5).reshape(6, 16))
            self.head.bias.copy_(_ramp(6, 0.02, phase=0.1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.flatten(self.pool(self.act(self.conv(x)))))


class TinyTwinHead(nn.Module):
    """Two stacked projection heads; no single obvious penultimate layer."""

    def __init__(self) -> None:
        super().__init__()
        self.flatten = nn.Flatten()
        self.trunk = nn.Linear(12, 6)
        self.act = nn.ReLU()
        self.head_a = nn.Linear(6, 4)
        self.head_b = nn.Linear(4, 2)
        with torch.no_grad():
            self.trunk.weight.copy_(_ramp(72, 0.4, phase=3.0).reshape(6, 12))
            self.trunk.bias.copy_(_ramp(6, 0.1, phase=0.2))
            self.head_a.weight.copy_(_ramp(24, 0.3, phase=0.8).reshape(4, 6))
            self.head_a.bias.copy_(_ramp(4, 0.05, phase=0.4))
            self.head_b.weight.copy_(_ramp(8, 0.2, phase=1.2).reshape(2, 4))
            self.head_b.bias.copy_(_ramp(2, 0.05, phase=0.6))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        hidden = self.act(self.trunk(self.flatten(x)))
        return self.head_b(self.act(self.head_a(hidden)))


def _toy(builder: type[nn.Module]) -> Callable[[bool], nn.Module]:
    def build(pretrained: bool) -> nn.Module:
        return builder()

    return build


def _torchvision(name: str) -> Callable[[bool], nn.Module]:
    def build(pretrained: bool) -> nn.Module:
        from torchvision import models

        return models.get_model(name, weights="DEFAULT" if pretrained else None)

    return build


_TOY_PREPROCESS_MLP = PreprocessSpec(resize=2, crop=2)
_TOY_PREPROCESS_CNN = PreprocessSpec(resize=8, crop=8)
_IMAGENET_PREPROCESS = PreprocessSpec(
    resize=256,
    crop=224,
    mean=(0.485, 0.456, 0.406),
    std=(0.229, 0.224, 0.225),
)

REGISTRY: dict[str, ModelSpec] = {
    spec.model_id: spec
    for spec in (
        ModelSpec(
            model_id="toy/two-layer",
            family="toy-mlp",
            architecture_class="mlp-mixer",
            objective="untrained",
            training_data="none",
            preprocess=_TOY_PREPROCESS_MLP,
            build=_toy(TinyMlp),
        ),
        ModelSpec(
            model_id="toy/conv-small",
            family="toy-cnn",
            architecture_class="convolutional",
            objective="untrained",
            training_data="none",
            preprocess=_TOY_PREPROCESS_CNN,
            build=_toy(TinyCnn),
        ),
        ModelSpec(
            model_id="toy/twin-head",
            family="toy-siamese",
            architecture_class="hybrid",
            objective="untrained",
            training_data="none",
            preprocess=_TOY_PREPROCESS_MLP,
            build=_toy(TinyTwinHead),
        ),
        ModelSpec(
            model_id="tv/resnet18",
            family="resnet",
            architecture_class="convolutional",
            objective="supervised",
            training_data="imagenet-1k",
            preprocess=_IMAGENET_PREPROCESS,
            build=_torchvision("resnet18"),
            imagenet_top1=0.69758,
            parameter_count=11_689_512,
        ),
        ModelSpec(
            model_id="tv/alexnet",
            family="alexnet",
            architecture_class="convolutional",
            objective="supervised",
            training_data="imagenet-1k",
            preprocess=_IMAGENET_PREPROCESS,
            build=_torchvision("alexnet"),
            imagenet_top1=0.56522,
            parameter_count=61_100_840,
        ),
        ModelSpec(
            model_id="tv/vit_b_32",
            family="vit",
            architecture_class="transformer",
            objective="supervised",
            training_data="imagenet-1k",
            preprocess=_IMAGENET_PREPROCESS,
            build=_torchvision("vit_b_32"),
            imagenet_top1=0.75912,
            parameter_count=88_224_232,
        ),
        ModelSpec(
            model_id="tv/squeezenet1_0",
            family="squeezenet",
            architecture_class="convolutional",
            objective="supervised",
            training_data="imagenet-1k",
            preprocess=_IMAGENET_PREPROCESS,
            build=_torchvision("squeezenet1_0"),
            imagenet_top1=0.58092,
            parameter_count=1_248_424,
        ),
    )
}


def resolve_model(model_id: str) -> ModelSpec:
    spec = REGISTRY.get(model_id)
    if spec is None:
        known = ", ".join(sorted(REGISTRY))
        raise ExtractionError(f"unknown model id {model_id!r}; known ids: {known}")
    return spec
