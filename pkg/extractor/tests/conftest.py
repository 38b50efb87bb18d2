from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def write_images(
    root: Path, count: int = 10, size: int = 16, seed: int = 5
) -> list[str]:
    """Write deterministic RGB PNGs; returns the sorted file names."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = [f"img_{i:02d}.png" for i in range(count)]
    for name in names:
        pixels = (rng.random((size, size, 3)) * 255).astype(np.uint8)
        Image.fromarray(pixels).save(root / name)
    return sorted(names)


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("images")
    write_images(root)
    return root
