"""Builders for masks, images and datasets shared across test modules."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from defect_reasoner.ingest import DefectInstance, MaskImage, extract_components


def save_mask(path: Path, classes: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(classes.astype(np.uint8), mode="L").save(path)


def save_rgb(path: Path, rgb: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(path)


def square_mask(shape, x0, y0, side, value=1) -> np.ndarray:
    m = np.zeros(shape, dtype=np.uint8)
    m[y0 : y0 + side, x0 : x0 + side] = value
    return m


def only_defect(mask: np.ndarray, stem: str = "t") -> DefectInstance:
    found = extract_components(MaskImage(mask.astype(np.uint8)), stem)
    assert len(found) == 1, f"expected one component, got {len(found)}"
    return found[0]


def random_fixture(rng: np.random.Generator) -> tuple[np.ndarray, DefectInstance]:
    """Random RGB image with one random-shaped defect (the largest component of a blob mask)."""
    h, w = (int(v) for v in rng.integers(24, 97, size=2))
    image = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    if rng.random() < 0.2:
        image[..., 1] = image[..., 0]
        image[..., 2] = image[..., 0]
    yy, xx = np.mgrid[:h, :w]
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        a, b = rng.uniform(1, w / 2), rng.uniform(1, h / 2)
        if rng.random() < 0.5:
            mask |= ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1
        else:
            mask |= (np.abs(xx - cx) <= a / 2) & (np.abs(yy - cy) <= b / 2)
    mask ^= rng.random((h, w)) < 0.03
    if not mask.any():
        mask[h // 2, w // 2] = True
    defects = extract_components(MaskImage(mask.astype(np.uint8)), "r")
    return image, max(defects, key=lambda d: d.area)


def separable_matrix(rng: np.random.Generator, n: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Characteristic matrix whose target is exactly ``area_ratio < 0.01``."""
    X = rng.random((n, 18))
    y = (rng.random(n) < 0.4).astype(np.int8)
    X[:, 0] = np.where(y == 1, rng.uniform(0.0005, 0.0095, n), rng.uniform(0.0105, 0.3, n))
    return X, y


def informative_matrix(rng: np.random.Generator, n: int = 200, column: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """One informative column (noisy threshold rule) among 17 uniform-noise columns."""
    X = rng.random((n, 18))
    y = (X[:, column] + rng.normal(0, 0.08, n) > 0.5).astype(np.int8)
    return X, y
