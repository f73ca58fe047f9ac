"""Defect characteristics: 18 normalised shape, location and colour descriptors per defect.

Every descriptor lies in ``[0, 1]`` so that value ranges can be reported on
a common scale. Shape descriptors come from the pixel set and the traced
outer contour; colour descriptors come from HSV statistics over the defect
pixels and from the value contrast against a surrounding ring.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import ndimage

from .errors import EmptyDataset, EmptyMatrix, LengthMismatch, OutOfBounds
from .ingest import DefectInstance, ReasoningTargets, read_image

DC_NAMES = (
    "area_ratio",
    "perimeter_ratio",
    "compactness",
    "solidity",
    "extent",
    "aspect_ratio",
    "eccentricity",
    "vertex_count_norm",
    "centroid_x",
    "centroid_y",
    "border_distance",
    "hue_mean",
    "hue_std",
    "sat_mean",
    "sat_std",
    "val_mean",
    "val_std",
    "contrast",
)
N_DC = len(DC_NAMES)

VERTEX_CAP = 32


# --------------------------------------------------------------------------
# geometry helpers


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return abs(0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def polygon_perimeter(poly: np.ndarray) -> float:
    step = np.roll(poly, -1, axis=0) - poly
    return float(np.sum(np.sqrt(step[:, 0] * step[:, 0] + step[:, 1] * step[:, 1])))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise (y-up)."""
    pts = sorted(set(map(tuple, points.tolist())))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=float)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=float)


def _dp_open(points: np.ndarray, eps: float) -> list[int]:
    """Douglas-Peucker over an open chain; returns kept indices (endpoints included)."""
    keep = [0, len(points) - 1]
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        a, b = points[i], points[j]
        inner = points[i + 1 : j]
        dx, dy = b[0] - a[0], b[1] - a[1]
        norm = math.sqrt(dx * dx + dy * dy)
        if norm == 0.0:
            ex = inner[:, 0] - a[0]
            ey = inner[:, 1] - a[1]
            dist = np.sqrt(ex * ex + ey * ey)
        else:
            dist = np.abs(dx * (inner[:, 1] - a[1]) - dy * (inner[:, 0] - a[0])) / norm
        k = int(np.argmax(dist))
        if dist[k] > eps:
            mid = i + 1 + k
            keep.append(mid)
            stack.append((i, mid))
            stack.append((mid, j))
    return sorted(set(keep))


def simplify_closed(contour: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker on a closed contour.

    The curve is cut at vertex 0 and at the first vertex farthest from it;
    both chains are simplified independently.
    """
    n = len(contour)
    if n < 3:
        return contour.copy()
    d = contour - contour[0]
    far = int(np.argmax(np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])))
    if far == 0:
        return contour[:1].copy()
    first = _dp_open(contour[: far + 1], eps)
    ring = np.vstack([contour[far:], contour[:1]])
    second = [far + k for k in _dp_open(ring, eps)][1:-1]
    return contour[first + second]


def _central_moment_terms(xs: np.ndarray, ys: np.ndarray) -> tuple[int, int, int, int]:
    """Exact integer ``n^2``-scaled central second moments ``(a, b, c)`` plus ``n``."""
    n = int(xs.size)
    sx, sy = int(xs.sum()), int(ys.sum())
    sxx = int(np.dot(xs, xs))
    syy = int(np.dot(ys, ys))
    sxy = int(np.dot(xs, ys))
    return n * sxx - sx * sx, n * syy - sy * sy, n * sxy - sx * sy, n


def eccentricity(xs: np.ndarray, ys: np.ndarray) -> float:
    a, b, c, _ = _central_moment_terms(xs.astype(np.int64), ys.astype(np.int64))
    spread = math.sqrt(float((a - b) ** 2 + 4 * c * c))
    trace = float(a + b)
    if trace + spread == 0.0:
        return 0.0
    # 1 - l2/l1 with l1,2 = (trace +- spread)/2
    return min(1.0, math.sqrt(2.0 * spread / (trace + spread)))


# --------------------------------------------------------------------------
# colour helpers


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised RGB (uint8, ``(..., 3)``) to HSV with all channels in ``[0, 1]``.

    Hue is in ``[0, 1)``; achromatic pixels get hue 0 and saturation 0.
    """
    c = rgb.astype(np.float64) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    maxc = c.max(axis=-1)
    minc = c.min(axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.divide(delta, maxc, out=np.zeros_like(maxc), where=maxc > 0)
    chroma = delta > 0
    safe = np.where(chroma, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(chroma, (h / 6.0) % 1.0, 0.0)
    return h, s, v


def circular_stats(hue: np.ndarray) -> tuple[float, float]:
    """Circular mean in ``[0, 1)`` and circular std (turns, clamped to 1) of hues in turns."""
    if hue.size == 0:
        return 0.0, 0.0
    if np.all(hue == hue.flat[0]):
        return float(hue.flat[0]), 0.0
    angle = 2.0 * np.pi * hue
    cs, sn = float(np.cos(angle).sum()), float(np.sin(angle).sum())
    mean = (math.atan2(sn, cs) / (2.0 * math.pi)) % 1.0
    resultant = min(1.0, math.hypot(cs, sn) / hue.size)
    if resultant <= 0.0:
        return mean, 1.0
    return mean, min(1.0, math.sqrt(max(0.0, -2.0 * math.log(resultant))) / (2.0 * math.pi))


def ring_radius(width: int, height: int) -> int:
    diag = math.hypot(width, height)
    return max(3, int(math.floor(0.02 * diag + 0.5)))


def ring_mask(defect: DefectInstance, width: int, height: int) -> tuple[np.ndarray, tuple[slice, slice]]:
    """Pixels within the ring radius of the defect but outside it, clipped to the image.

    Returns a boolean mask over a window of the image and the window slices.
    """
    d = ring_radius(width, height)
    x0, y0, x1, y1 = defect.bbox
    wx0, wy0 = max(0, x0 - d), max(0, y0 - d)
    wx1, wy1 = min(width - 1, x1 + d), min(height - 1, y1 + d)
    local = np.zeros((wy1 - wy0 + 1, wx1 - wx0 + 1), dtype=bool)
    local[defect.pixels[:, 1] - wy0, defect.pixels[:, 0] - wx0] = True
    dist = ndimage.distance_transform_edt(~local)
    ring = (dist <= d) & ~local
    return ring, (slice(wy0, wy1 + 1), slice(wx0, wx1 + 1))


# --------------------------------------------------------------------------
# extraction


def extract_dc(image: np.ndarray, defect: DefectInstance) -> np.ndarray:
    """Compute the 18 defect characteristics of one defect, ordered as ``DC_NAMES``."""
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    height, width = image.shape[:2]
    xs, ys = defect.pixels[:, 0], defect.pixels[:, 1]
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= width or ys.max() >= height:
        raise OutOfBounds(f"{defect.defect_id} has pixels outside a {width}x{height} image")

    diag = math.hypot(width, height)
    n_pix = defect.area
    x0, y0, x1, y1 = defect.bbox
    bw, bh = x1 - x0 + 1, y1 - y0 + 1

    contour = defect.contour
    perim = polygon_perimeter(contour)
    poly_area = polygon_area(contour)
    hull_area = polygon_area(convex_hull(contour))
    eps = max(1.0, 0.005 * diag)
    n_vertices = len(simplify_closed(contour, eps))

    h, s, v = rgb_to_hsv(image[ys, xs])
    hue_mean, hue_std = circular_stats(h)

    ring, window = ring_mask(defect, width, height)
    if ring.any():
        _, _, ring_v = rgb_to_hsv(image[window][ring])
        contrast = abs(float(v.mean()) - float(ring_v.mean()))
    else:
        contrast = 0.0

    margin = min(x0, y0, width - 1 - x1, height - 1 - y1)
    values = (
        n_pix / (width * height),
        min(1.0, perim / diag),
        min(1.0, 4.0 * math.pi * poly_area / (perim * perim)) if perim > 0 else 0.0,
        min(1.0, poly_area / hull_area) if hull_area > 0 else 1.0,
        n_pix / (bw * bh),
        min(bw, bh) / max(bw, bh),
        eccentricity(xs, ys),
        min(1.0, n_vertices / VERTEX_CAP),
        (float(xs.mean()) + 0.5) / width,
        (float(ys.mean()) + 0.5) / height,
        min(1.0, max(0.0, margin / (0.5 * min(width, height)))),
        hue_mean,
        hue_std,
        float(s.mean()),
        float(s.std()),
        float(v.mean()),
        float(v.std()),
        min(1.0, contrast),
    )
    return np.asarray(values, dtype=np.float64)


@dataclass
class DCMatrix:
    """Row-aligned defect ids, image stems and characteristic values."""

    id_list: list[str]
    images: list[str]
    values: np.ndarray
    feature_list: tuple[str, ...] = DC_NAMES

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape != (len(self.id_list), len(self.feature_list)):
            raise LengthMismatch(
                f"matrix shape {self.values.shape} does not fit "
                f"{len(self.id_list)} ids x {len(self.feature_list)} features"
            )
        if len(self.images) != len(self.id_list):
            raise LengthMismatch("images and ids differ in length")

    def __len__(self) -> int:
        return len(self.id_list)

    def rounded(self, digits: int = 9) -> "DCMatrix":
        """Copy with every value rounded to ``digits`` significant digits, as written to CSV."""
        values = np.vectorize(lambda v: float(f"{v:.{digits}g}"))(self.values) if len(self) else self.values
        return DCMatrix(list(self.id_list), list(self.images), values, self.feature_list)


@dataclass
class FeatureRange:
    feature_list: tuple[str, ...]
    lo: np.ndarray
    hi: np.ndarray

    def __getitem__(self, name: str) -> tuple[float, float]:
        k = self.feature_list.index(name)
        return float(self.lo[k]), float(self.hi[k])

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {name: self[name] for name in self.feature_list}


def compute_feature_range(matrix: DCMatrix) -> FeatureRange:
    if len(matrix) == 0:
        raise EmptyMatrix("cannot compute ranges of an empty matrix")
    return FeatureRange(tuple(matrix.feature_list), matrix.values.min(axis=0), matrix.values.max(axis=0))


def _extract_image(path: Path, defects: Sequence[DefectInstance]) -> list[np.ndarray]:
    image = read_image(path)
    return [extract_dc(image, d) for d in defects]


def extract_features(
    defects: Sequence[DefectInstance],
    image_paths: Mapping[str, Path],
    n_jobs: Optional[int] = None,
) -> DCMatrix:
    """Extract characteristics for every defect, loading each image once.

    Row order follows ``defects``.
    """
    by_image: dict[str, list[int]] = defaultdict(list)
    for k, d in enumerate(defects):
        by_image[d.image_stem].append(k)
    stems = sorted(by_image)
    chunks = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_extract_image)(image_paths[stem], [defects[k] for k in by_image[stem]]) for stem in stems
    )
    values = np.zeros((len(defects), N_DC))
    for stem, rows in zip(stems, chunks):
        for k, row in zip(by_image[stem], rows):
            values[k] = row
    return DCMatrix([d.defect_id for d in defects], [d.image_stem for d in defects], values)


def assemble_matrix(
    defects: Sequence[DefectInstance],
    dc_vectors: Sequence[np.ndarray] | np.ndarray,
    targets: ReasoningTargets,
) -> tuple[list[str], tuple[str, ...], DCMatrix, dict[str, np.ndarray]]:
    """Turn per-defect records into aligned arrays for the reasoning stage.

    Returns ``(id_list, feature_list, matrix, targets_by_name)``; targets are
    keyed by the names valid for the task mode.
    """
    if len(defects) == 0:
        raise EmptyDataset("no defects to assemble")
    if len(dc_vectors) != len(defects):
        raise LengthMismatch(f"{len(dc_vectors)} vectors for {len(defects)} defects")
    id_list = [d.defect_id for d in defects]
    if list(targets.defect_ids) != id_list:
        raise LengthMismatch("targets are not aligned with defects")
    matrix = DCMatrix(id_list, [d.image_stem for d in defects], np.vstack(dc_vectors))
    by_name = {name: np.asarray(vec, dtype=np.int8) for name, vec in targets.as_dict().items()}
    return id_list, matrix.feature_list, matrix, by_name


# --------------------------------------------------------------------------
# dc_matrix.csv

MATRIX_HEADER = ["defect_id", "image", *DC_NAMES]


def write_matrix_csv(path: Path | str, matrix: DCMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["defect_id", "image", *matrix.feature_list])
        for defect_id, stem, row in zip(matrix.id_list, matrix.images, matrix.values):
            writer.writerow([defect_id, stem, *(f"{v:.9g}" for v in row)])


def read_matrix_csv(path: Path | str) -> DCMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["defect_id", "image"]:
            raise LengthMismatch(f"{path}: unexpected header {header}")
        rows = list(reader)
    features = tuple(header[2:])
    values = np.array([[float(v) for v in row[2:]] for row in rows], dtype=np.float64)
    values = values.reshape(len(rows), len(features))
    return DCMatrix([row[0] for row in rows], [row[1] for row in rows], values, features)
