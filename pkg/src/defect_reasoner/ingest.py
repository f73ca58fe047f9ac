"""Dataset ingestion: folder scanning, defect instances, matching and reasoning targets.

Three folders hold the original images, the ground-truth masks and the
model's predicted masks. Masks are 8-bit single-channel PNGs whose pixel
value is the defect class (0 = background). Every 8-connected same-class
region of a ground-truth mask is one defect; predicted regions are matched
to ground-truth defects by greedy one-to-one pixel IoU, and each defect is
labelled detected/undetected and, when classes are judged,
correctly classified/misclassified.
"""
from __future__ import annotations

import csv
import enum
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from PIL import Image
from scipy import ndimage

from .errors import (
    ConfigError,
    DatasetError,
    DimensionMismatch,
    EmptyDataset,
    MissingImage,
    UnreadableFile,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MASK_SUFFIXES = (".png",)

TARGET_NAMES = ("detected", "undetected", "correctly_classified", "misclassified")
DETECTION_TARGETS = TARGET_NAMES[:2]

_EIGHT = np.ones((3, 3), dtype=bool)

# clockwise (image frame, y down) starting at west; entries are (dx, dy)
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


class TaskMode(str, enum.Enum):
    DETECTION = "detection"
    CLASSIFICATION = "classification"
    JOINT = "joint"

    @classmethod
    def from_flags(cls, contain_type: bool, only_type: bool) -> "TaskMode":
        """Map the legacy ``(contain_type, only_type)`` Boolean pair to a mode."""
        if not contain_type:
            if only_type:
                raise ConfigError("only_type requires contain_type")
            return cls.DETECTION
        return cls.CLASSIFICATION if only_type else cls.JOINT

    @property
    def judges_class(self) -> bool:
        return self is not TaskMode.DETECTION

    @property
    def target_names(self) -> tuple[str, ...]:
        return TARGET_NAMES if self.judges_class else DETECTION_TARGETS


@dataclass(frozen=True)
class DatasetPaths:
    images_dir: Path
    gt_dir: Path
    pred_dir: Path

    def __post_init__(self):
        for name in ("images_dir", "gt_dir", "pred_dir"):
            object.__setattr__(self, name, Path(getattr(self, name)))

    def validate(self) -> None:
        for name in ("images_dir", "gt_dir", "pred_dir"):
            path = getattr(self, name)
            if not path.is_dir():
                raise ConfigError(f"{name} is not a directory: {path}")
            if not os.access(path, os.R_OK | os.X_OK):
                raise ConfigError(f"{name} is not readable: {path}")


@dataclass
class MaskImage:
    """Per-pixel class ids of a label raster, shape ``(height, width)``."""

    classes: np.ndarray

    @property
    def height(self) -> int:
        return int(self.classes.shape[0])

    @property
    def width(self) -> int:
        return int(self.classes.shape[1])


@dataclass
class DefectInstance:
    """One connected same-class region of a mask.

    ``pixels`` is an ``(n, 2)`` integer array of ``(x, y)`` coordinates in
    raster order. ``contour`` is an ``(m, 2)`` float array, stored open and
    treated as closed, with positive signed shoelace area in ``(x, y)``
    coordinates (counter-clockwise in a y-up frame).
    """

    defect_id: str
    image_stem: str
    class_id: int
    pixels: np.ndarray
    bbox: tuple[int, int, int, int]
    contour: np.ndarray

    @property
    def area(self) -> int:
        return int(self.pixels.shape[0])

    def pixel_set(self) -> set[tuple[int, int]]:
        return {(int(x), int(y)) for x, y in self.pixels}

    def pixel_keys(self) -> np.ndarray:
        return self.pixels[:, 1].astype(np.int64) * (1 << 24) + self.pixels[:, 0]


@dataclass
class MatchResult:
    gt_id: str
    matched_pred_id: Optional[str]
    iou: float
    predicted_class: Optional[int]


@dataclass
class ReasoningTargets:
    """Binary outcome vectors over ground-truth defects, aligned with ``defect_ids``."""

    task_mode: TaskMode
    defect_ids: list[str]
    detected: np.ndarray
    undetected: np.ndarray
    correctly_classified: Optional[np.ndarray] = None
    misclassified: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.defect_ids)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.task_mode.target_names}

    def check(self) -> None:
        if not np.all(self.detected + self.undetected == 1):
            raise DatasetError("detected + undetected must be 1 for every defect")
        if self.task_mode.judges_class:
            if self.correctly_classified is None or self.misclassified is None:
                raise DatasetError("classification targets missing")
            if not np.array_equal(self.correctly_classified + self.misclassified, self.detected):
                raise DatasetError("correct + misclassified must equal detected")
        elif self.correctly_classified is not None or self.misclassified is not None:
            raise DatasetError("detection mode carries no classification targets")


@dataclass
class ScanEntry:
    stem: str
    image_path: Path
    gt: MaskImage
    pred: Optional[MaskImage]


@dataclass
class IngestResult:
    defects: list[DefectInstance]
    matches: list[MatchResult]
    targets: ReasoningTargets
    image_paths: dict[str, Path] = field(default_factory=dict)


# --------------------------------------------------------------------------
# folder scanning


def _index_dir(directory: Path, suffixes: Sequence[str]) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for entry in sorted(directory.iterdir()):
        if not entry.is_file() or entry.suffix.lower() not in suffixes:
            continue
        if entry.stem in found:
            raise DatasetError(f"ambiguous stem {entry.stem!r} in {directory}")
        found[entry.stem] = entry
    return found


def read_mask(path: Path | str) -> MaskImage:
    """Decode an 8-bit single-channel (grayscale or palette) PNG mask."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P", "1"):
                raise UnreadableFile(f"{path}: mask must be 8-bit single channel, got mode {im.mode}")
            classes = np.array(im, dtype=np.uint8)
    except UnreadableFile:
        raise
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    return MaskImage(classes)


def read_image(path: Path | str) -> np.ndarray:
    """Load an image as an ``(h, w, 3)`` uint8 RGB array."""
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc


def scan_dataset(paths: DatasetPaths) -> list[ScanEntry]:
    """Pair every ground-truth mask with its image and optional prediction.

    Entries are sorted by stem. A ground-truth stem without an image raises
    :class:`MissingImage`; a missing prediction means the model predicted
    nothing for that image. All-zero ground-truth masks are skipped.
    """
    paths.validate()
    images = _index_dir(paths.images_dir, IMAGE_SUFFIXES)
    gts = _index_dir(paths.gt_dir, MASK_SUFFIXES)
    preds = _index_dir(paths.pred_dir, MASK_SUFFIXES)

    extra = sorted(set(preds) - set(gts))
    if extra:
        logger.warning("ignoring %d predicted masks without ground truth: %s", len(extra), extra[:5])

    entries = []
    for stem in sorted(gts):
        if stem not in images:
            raise MissingImage(f"no original image for ground-truth mask {stem!r}")
        width, height = _image_size(images[stem])
        gt = read_mask(gts[stem])
        if (gt.width, gt.height) != (width, height):
            raise DimensionMismatch(
                f"{stem}: gt mask {gt.width}x{gt.height} vs image {width}x{height}"
            )
        if not gt.classes.any():
            logger.warning("%s: ground-truth mask is empty, image skipped", stem)
            continue
        pred = None
        if stem in preds:
            pred = read_mask(preds[stem])
            if (pred.width, pred.height) != (width, height):
                raise DimensionMismatch(
                    f"{stem}: predicted mask {pred.width}x{pred.height} vs image {width}x{height}"
                )
        entries.append(ScanEntry(stem, images[stem], gt, pred))
    return entries


# --------------------------------------------------------------------------
# components and contours


def trace_boundary(region: np.ndarray) -> list[tuple[int, int]]:
    """Moore-neighbour trace of the outer boundary of a single 8-connected region.

    ``region`` is a boolean array whose border rows/columns are False. Returns
    ``(x, y)`` boundary pixels, starting at the first pixel in raster order
    and walking clockwise in the image frame. The walk stops when the move
    from the start pixel to the second boundary pixel would repeat.
    """
    ys, xs = np.nonzero(region)
    start = (int(xs[0]), int(ys[0]))
    p, back = start, 0  # the start pixel's west neighbour is background
    contour = [start]
    for _ in range(4 * len(xs) + 8):
        for k in range(1, 9):
            d = (back + k) % 8
            dx, dy = _MOORE[d]
            if region[p[1] + dy, p[0] + dx]:
                break
        else:
            return contour  # isolated pixel
        q = (p[0] + dx, p[1] + dy)
        if p == start and len(contour) > 1 and q == contour[1]:
            return contour[:-1]
        pdx, pdy = _MOORE[(d - 1) % 8]
        back = _MOORE_INDEX[(p[0] + pdx - q[0], p[1] + pdy - q[1])]
        p = q
        contour.append(p)
    raise RuntimeError("boundary trace did not terminate")  # pragma: no cover


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def region_contour(region: np.ndarray, offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Closed outer contour of a region, with the rectangle fallback for degenerate traces.

    Single pixels and 1-wide regions trace to a zero-area polygon; they get
    the outline of their bounding box drawn on pixel edges instead.
    """
    padded = np.pad(region, 1)
    pts = np.asarray(trace_boundary(padded), dtype=float) - 1.0
    pts += np.asarray(offset, dtype=float)
    area = signed_area(pts) if len(pts) >= 3 else 0.0
    if area == 0.0:
        x0, y0 = pts.min(axis=0) - 0.5
        x1, y1 = pts.max(axis=0) + 0.5
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    if area < 0:  # pragma: no cover - tracing direction is fixed
        pts = pts[::-1]
    return pts


def extract_components(mask: MaskImage, stem: str = "") -> list[DefectInstance]:
    """Split a mask into 8-connected same-class defect instances.

    Instances are ordered by ``(y_min, x_min)``, then class id, then first
    pixel in raster order; ``defect_id`` is ``stem#index`` in that order.
    """
    classes = mask.classes
    found = []
    for class_id in np.unique(classes):
        if class_id == 0:
            continue
        labels, n = ndimage.label(classes == class_id, structure=_EIGHT)
        for sl, label in zip(ndimage.find_objects(labels), range(1, n + 1)):
            local = labels[sl] == label
            ys, xs = np.nonzero(local)
            y0, x0 = sl[0].start, sl[1].start
            pixels = np.column_stack([xs + x0, ys + y0]).astype(np.int64)
            bbox = (int(x0), int(y0), int(sl[1].stop - 1), int(sl[0].stop - 1))
            first = (int(ys[0] + y0), int(xs[0] + x0))
            found.append((bbox[1], bbox[0], int(class_id), first, pixels, bbox, local))
    found.sort(key=lambda item: item[:4])
    defects = []
    for index, (_, _, class_id, _, pixels, bbox, local) in enumerate(found):
        contour = region_contour(local, offset=(bbox[0], bbox[1]))
        defects.append(DefectInstance(f"{stem}#{index}", stem, class_id, pixels, bbox, contour))
    return defects


# --------------------------------------------------------------------------
# matching


def _bbox_overlap(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def iou(a: DefectInstance, b: DefectInstance) -> float:
    """Pixel intersection-over-union of two instances."""
    if not _bbox_overlap(a.bbox, b.bbox):
        return 0.0
    inter = np.intersect1d(a.pixel_keys(), b.pixel_keys(), assume_unique=True).size
    return inter / (a.area + b.area - inter)


def match_predictions(
    gt: Sequence[DefectInstance], pred: Sequence[DefectInstance], iou_threshold: float = 0.5
) -> list[MatchResult]:
    """Greedy one-to-one matching of predicted regions to ground-truth defects.

    Pairs are accepted in order of descending IoU (ties: earlier gt, then
    earlier pred) while both sides are free and IoU >= ``iou_threshold``.
    Class agreement is not required. An unmatched defect reports its best
    IoU against predictions left unmatched, which is below the threshold.
    """
    if not 0 < iou_threshold <= 1:
        raise ConfigError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    scores = np.zeros((len(gt), len(pred)))
    for i, g in enumerate(gt):
        for j, p in enumerate(pred):
            scores[i, j] = iou(g, p)

    pairs = sorted(
        ((-scores[i, j], i, j) for i in range(len(gt)) for j in range(len(pred)) if scores[i, j] > 0),
    )
    gt_to_pred: dict[int, int] = {}
    taken: set[int] = set()
    for neg, i, j in pairs:
        if -neg < iou_threshold:
            break
        if i in gt_to_pred or j in taken:
            continue
        gt_to_pred[i] = j
        taken.add(j)

    free = [j for j in range(len(pred)) if j not in taken]
    results = []
    for i, g in enumerate(gt):
        if i in gt_to_pred:
            j = gt_to_pred[i]
            results.append(MatchResult(g.defect_id, pred[j].defect_id, float(scores[i, j]), pred[j].class_id))
        else:
            best = float(scores[i, free].max()) if free else 0.0
            results.append(MatchResult(g.defect_id, None, best, None))
    return results


def build_reasoning_targets(
    matches: Sequence[MatchResult], gt: Sequence[DefectInstance], task_mode: TaskMode | str
) -> ReasoningTargets:
    task_mode = TaskMode(task_mode)
    if not gt:
        raise EmptyDataset("no ground-truth defects")
    by_id = {m.gt_id: m for m in matches}
    if len(by_id) != len(matches) or set(by_id) != {d.defect_id for d in gt}:
        raise DatasetError("every ground-truth defect needs exactly one match result")

    detected = np.zeros(len(gt), dtype=np.int8)
    correct = np.zeros(len(gt), dtype=np.int8)
    for k, defect in enumerate(gt):
        m = by_id[defect.defect_id]
        if m.matched_pred_id is not None:
            detected[k] = 1
            correct[k] = int(m.predicted_class == defect.class_id)
    targets = ReasoningTargets(
        task_mode=task_mode,
        defect_ids=[d.defect_id for d in gt],
        detected=detected,
        undetected=(1 - detected).astype(np.int8),
    )
    if task_mode.judges_class:
        targets.correctly_classified = correct
        targets.misclassified = (detected - correct).astype(np.int8)
    targets.check()
    return targets


# --------------------------------------------------------------------------
# driver


def _ingest_entry(entry: ScanEntry, iou_threshold: float):
    gt = extract_components(entry.gt, entry.stem)
    pred = extract_components(entry.pred, entry.stem + ":pred") if entry.pred is not None else []
    return gt, match_predictions(gt, pred, iou_threshold)


def process_dir(
    paths: DatasetPaths,
    task_mode: TaskMode | str = TaskMode.JOINT,
    iou_threshold: float = 0.5,
    n_jobs: Optional[int] = None,
) -> IngestResult:
    """Run the whole prediction-to-target stage over three dataset folders."""
    entries = scan_dataset(paths)
    per_image = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_ingest_entry)(entry, iou_threshold) for entry in entries
    )
    defects: list[DefectInstance] = []
    matches: list[MatchResult] = []
    for gt, found in per_image:
        defects.extend(gt)
        matches.extend(found)
    targets = build_reasoning_targets(matches, defects, task_mode)
    return IngestResult(defects, matches, targets, {e.stem: e.image_path for e in entries})


# --------------------------------------------------------------------------
# targets.csv

TARGETS_HEADER = ["defect_id", "image", "class_id", *TARGET_NAMES]


def write_targets_csv(path: Path | str, defects: Sequence[DefectInstance], targets: ReasoningTargets) -> None:
    if [d.defect_id for d in defects] != targets.defect_ids:
        raise DatasetError("defects and targets are not aligned")
    columns = targets.as_dict()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TARGETS_HEADER)
        for k, d in enumerate(defects):
            row = [d.defect_id, d.image_stem, d.class_id]
            row += [int(columns[name][k]) if name in columns else "" for name in TARGET_NAMES]
            writer.writerow(row)


def read_targets_csv(path: Path | str) -> tuple[list[str], list[int], ReasoningTargets]:
    """Read ``targets.csv`` back; returns image stems, class ids and targets.

    The task mode is inferred: empty classification columns mean detection.
    Classification and joint dumps are indistinguishable and read as joint.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TARGETS_HEADER:
            raise DatasetError(f"{path}: unexpected header {header}")
        rows = list(reader)
    if not rows:
        raise EmptyDataset(f"{path}: no defects")
    judged = {row[5] != "" for row in rows}
    if len(judged) != 1:
        raise DatasetError(f"{path}: classification columns partially filled")
    mode = TaskMode.JOINT if judged.pop() else TaskMode.DETECTION

    def column(k: int) -> np.ndarray:
        return np.array([int(row[k]) for row in rows], dtype=np.int8)

    targets = ReasoningTargets(mode, [row[0] for row in rows], column(3), column(4))
    if mode.judges_class:
        targets.correctly_classified = column(5)
        targets.misclassified = column(6)
    targets.check()
    return [row[1] for row in rows], [int(row[2]) for row in rows], targets
