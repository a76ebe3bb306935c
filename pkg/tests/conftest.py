import numpy as np
import pytest

from backdoorlab import mnistio
from backdoorlab.rng import generator

DIGIT_CENTERS = [(r, c) for r in (12, 20) for c in (6, 10, 14, 18, 22)]


def digit_templates() -> np.ndarray:
    """Ten disk templates placed away from the 5x5 watermark corner."""
    rr, cc = np.mgrid[0:28, 0:28]
    templates = np.zeros((10, 784))
    for k, (r, c) in enumerate(DIGIT_CENTERS):
        disk = ((rr - r) ** 2 + (cc - c) ** 2) <= 2.5 ** 2
        templates[k] = np.where(disk.ravel(), 0.85, 0.0)
    return templates


def digit_images(n: int, seed: int) -> mnistio.ImageDataset:
    """Synthetic 10-class handwritten-digit stand-in with clean corner pixels."""
    g = generator(seed)
    templates = digit_templates()
    y = g.integers(0, 10, n)
    X = np.clip(templates[y] + 0.1 * g.standard_normal((n, 784)), 0.0, 1.0)
    return mnistio.ImageDataset(X, y, np.zeros(n, dtype=bool))


def write_idx_pair(dataset: mnistio.ImageDataset, image_path, label_path) -> None:
    """Quantize a dataset to uint8 and store it as an IDX image/label pair."""
    n = len(dataset)
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    with open(image_path, "wb") as fh:
        fh.write(mnistio.serialize_idx((n, 28, 28), pixels))
    with open(label_path, "wb") as fh:
        fh.write(mnistio.serialize_idx((n,), dataset.labels.astype(np.uint8)))


@pytest.fixture
def small_digits():
    return digit_images(300, seed=123)
