"""Synthetic defect datasets with a known, learnable model behaviour.

Each image holds a few non-overlapping elliptical or rectangular defects on
a noisy background. The simulated model misses small or low-contrast
defects and confuses the class of elongated ones, with a little label
noise, so every reasoning target has both classes present.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .ingest import DatasetPaths


def _shape_mask(rng: np.random.Generator, size: int, cx: float, cy: float, r: float, elong: float) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    theta = rng.uniform(0, np.pi)
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    a, b = r * np.sqrt(elong), r / np.sqrt(elong)
    if rng.random() < 0.3:
        return (np.abs(u) <= a) & (np.abs(v) <= b)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def make_dataset(
    root: Path | str,
    n_images: int,
    size: int = 256,
    seed: int = 0,
    max_defects: int = 4,
    flip_rate: float = 0.05,
) -> DatasetPaths:
    """Write ``images/``, ``gt/`` and ``pred/`` folders under ``root`` and return their paths."""
    root = Path(root)
    paths = DatasetPaths(root / "images", root / "gt", root / "pred")
    for d in (paths.images_dir, paths.gt_dir, paths.pred_dir):
        d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    for i in range(n_images):
        stem = f"img_{i:04d}"
        base = rng.uniform(60, 160, size=3)
        image = base + rng.normal(0, 6, size=(size, size, 3))
        gt = np.zeros((size, size), dtype=np.uint8)
        pred = np.zeros((size, size), dtype=np.uint8)
        taken = np.zeros((size, size), dtype=bool)

        for _ in range(int(rng.integers(1, max_defects + 1))):
            r = rng.uniform(3, 28)
            elong = rng.uniform(1.0, 4.0)
            margin = r * np.sqrt(elong) + 2
            if 2 * margin >= size:
                continue
            cx, cy = rng.uniform(margin, size - margin, size=2)
            shape = _shape_mask(rng, size, cx, cy, r, elong)
            if not shape.any() or (ndimage.binary_dilation(shape, iterations=3) & taken).any():
                continue
            labels, n = ndimage.label(shape, structure=np.ones((3, 3)))
            if n != 1:
                continue
            taken |= shape
            cls = int(rng.integers(1, 3))
            contrast = rng.uniform(0.02, 0.5) * rng.choice([-1.0, 1.0])
            tint = np.array([40.0, -20.0, -20.0]) if cls == 1 else np.array([-20.0, -20.0, 40.0])
            image[shape] = image[shape] + tint + 255.0 * contrast
            gt[shape] = cls

            detected = r >= 7 and abs(contrast) >= 0.12
            if rng.random() < flip_rate:
                detected = not detected
            if not detected:
                continue
            confused = elong >= 2.8
            if rng.random() < flip_rate:
                confused = not confused
            shift = rng.integers(-2, 3, size=2)
            moved = np.roll(shape, shift=tuple(shift), axis=(0, 1))
            pred[moved] = (3 - cls) if confused else cls

        Image.fromarray(np.clip(image, 0, 255).astype(np.uint8)).save(paths.images_dir / f"{stem}.png")
        Image.fromarray(gt).save(paths.gt_dir / f"{stem}.png")
        if pred.any() or rng.random() < 0.5:
            Image.fromarray(pred).save(paths.pred_dir / f"{stem}.png")
    return paths
