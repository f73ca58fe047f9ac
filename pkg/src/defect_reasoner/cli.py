"""Command-line driver: ``run`` (end to end), ``extract`` (CSV dumps) and ``reason`` (from dumps).

Exit codes: 0 when at least one target was explained, 2 on usage,
configuration or dataset-validation errors, 3 on I/O errors, 4 when every
target was degenerate.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DatasetError,
    DegenerateTarget,
    IoFailure,
    LengthMismatch,
    NoRoutes,
    UnreadableFile,
)
from .features import DCMatrix, compute_feature_range, extract_features, read_matrix_csv, write_matrix_csv
from .forest import ForestConfig, dump_forest
from .ingest import (
    TARGET_NAMES,
    DatasetPaths,
    ReasoningTargets,
    TaskMode,
    process_dir,
    read_targets_csv,
    write_targets_csv,
)
from .reasoner import DefectReasoner

logger = logging.getLogger("defect_reasoner")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DEGENERATE = 0, 2, 3, 4
MATRIX_CSV, TARGETS_CSV = "dc_matrix.csv", "targets.csv"
REASONING_STEPS = ("plant", "validate", "climb", "analyse", "summarise", "explain")


@dataclass
class RunConfig:
    command: str
    out_dir: Path
    paths: Optional[DatasetPaths] = None
    task: TaskMode = TaskMode.JOINT
    iou_threshold: float = 0.5
    forest: ForestConfig = field(default_factory=ForestConfig)
    top_k: int = 5
    route_plot: bool = False
    dump_forest: bool = False
    dump_summary: bool = False
    matrix_csv: Optional[Path] = None
    targets_csv: Optional[Path] = None
    n_jobs: Optional[int] = None

    def validate(self) -> "RunConfig":
        self.forest.validate()
        if not 0 < self.iou_threshold <= 1:
            raise ConfigError(f"--iou-threshold must be in (0, 1], got {self.iou_threshold}")
        if self.top_k < 1:
            raise ConfigError("--top-k must be >= 1")
        if self.paths is not None:
            self.paths.validate()
        for p in (self.matrix_csv, self.targets_csv):
            if p is not None and not p.is_file():
                raise ConfigError(f"no such file: {p}")
        if self.out_dir.exists() and not self.out_dir.is_dir():
            raise ConfigError(f"--out exists and is not a directory: {self.out_dir}")
        return self

    def echo(self) -> dict:
        doc = {
            "command": self.command,
            "task": self.task.value,
            "iou_threshold": self.iou_threshold,
            "forest": asdict(self.forest),
            "top_k": self.top_k,
            "route_plot": self.route_plot,
            "dump_forest": self.dump_forest,
            "dump_summary": self.dump_summary,
        }
        if self.paths is not None:
            doc["paths"] = {k: str(v) for k, v in asdict(self.paths).items()}
        if self.matrix_csv is not None:
            doc["matrix_csv"] = str(self.matrix_csv)
            doc["targets_csv"] = str(self.targets_csv)
        return doc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defect-reasoner",
        description="Explain where a defect detection/classification model succeeds and fails.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def dataset(p):
        p.add_argument("--images", required=True, type=Path, help="folder of original images")
        p.add_argument("--gt", required=True, type=Path, help="folder of ground-truth masks")
        p.add_argument("--pred", required=True, type=Path, help="folder of predicted masks")
        p.add_argument("--task", choices=[m.value for m in TaskMode], default=TaskMode.JOINT.value)
        p.add_argument("--iou-threshold", type=float, default=0.5)

    def reasoning(p):
        defaults = ForestConfig()
        p.add_argument("--trees", type=int, default=defaults.n_tree)
        p.add_argument("--seed", type=int, default=defaults.seed)
        p.add_argument("--max-depth", type=int, default=defaults.max_depth)
        p.add_argument("--min-samples-leaf", type=int, default=defaults.min_samples_leaf)
        p.add_argument("--features-per-split", type=int, default=defaults.features_per_split)
        p.add_argument("--no-balance", action="store_true", help="disable balanced class weights")
        p.add_argument("--good-learned", type=float, default=defaults.good_learned_threshold)
        p.add_argument("--top-k", type=int, default=5)
        p.add_argument("--route-plot", action="store_true")
        p.add_argument("--dump-forest", action="store_true")
        p.add_argument("--dump-summary", action="store_true")

    run = sub.add_parser("run", help="ingest, extract and reason end to end")
    dataset(run)
    reasoning(run)
    extract = sub.add_parser("extract", help="ingest and extract, writing dc_matrix.csv and targets.csv")
    dataset(extract)
    reason = sub.add_parser("reason", help="reason from dc_matrix.csv and targets.csv")
    reason.add_argument("--matrix", required=True, type=Path)
    reason.add_argument("--targets", required=True, type=Path)
    reasoning(reason)
    for p in (run, extract, reason):
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--jobs", type=int, default=None, help="worker threads (results do not depend on it)")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Parse and validate arguments; usage and validation errors exit with status 2."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = RunConfig(command=ns.command, out_dir=ns.out, n_jobs=ns.jobs)
        if ns.command in ("run", "extract"):
            config.paths = DatasetPaths(ns.images, ns.gt, ns.pred)
            config.task = TaskMode(ns.task)
            config.iou_threshold = ns.iou_threshold
        else:
            config.matrix_csv, config.targets_csv = ns.matrix, ns.targets
        if ns.command in ("run", "reason"):
            config.forest = ForestConfig(
                n_tree=ns.trees,
                max_depth=ns.max_depth,
                min_samples_leaf=ns.min_samples_leaf,
                features_per_split=ns.features_per_split,
                seed=ns.seed,
                balance_classes=not ns.no_balance,
                good_learned_threshold=ns.good_learned,
            )
            config.top_k = ns.top_k
            config.route_plot = ns.route_plot
            config.dump_forest = ns.dump_forest
            config.dump_summary = ns.dump_summary
        return config.validate()
    except ConfigError as exc:
        parser.error(str(exc))
        raise  # pragma: no cover


class _Clock:
    def __init__(self):
        self.record: dict = {"per_target": {}}
        self._start = time.perf_counter()

    def stage(self, name: str, fn, *args, **kwargs):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        self.record[name] = (time.perf_counter() - start) * 1000.0
        return result

    def finish(self) -> dict:
        self.record["total"] = (time.perf_counter() - self._start) * 1000.0
        return self.record


def _write_json(path: Path, doc) -> int:
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    path.write_text(text)
    return len(text.encode())


def _reason_targets(config: RunConfig, matrix: DCMatrix, targets: ReasoningTargets, clock: _Clock, manifest: dict):
    ranges = compute_feature_range(matrix)
    available = targets.as_dict()
    completed = 0
    for name in TARGET_NAMES:
        if name not in available:
            manifest["skipped"].append({"target": name, "reason": f"N/A: no such task in {targets.task_mode.value} mode"})
            continue
        y = available[name]
        reasoner = DefectReasoner(
            n_tree=config.forest.n_tree,
            max_depth=config.forest.max_depth,
            min_samples_leaf=config.forest.min_samples_leaf,
            features_per_split=config.forest.features_per_split,
            seed=config.forest.seed,
            balance_classes=config.forest.balance_classes,
            good_learned_threshold=config.forest.good_learned_threshold,
            top_k=config.top_k,
            n_jobs=config.n_jobs,
        )
        try:
            reasoner.fit(matrix, y, target=name, feature_range=ranges)
        except (DegenerateTarget, NoRoutes) as exc:
            logger.warning("target %s skipped: %s", name, exc)
            manifest["skipped"].append({"target": name, "reason": str(exc)})
            continue
        out = config.out_dir / name
        start = time.perf_counter()
        bundle = reasoner.explain(out, route_plot=config.route_plot)
        files = bundle.to_list()
        if config.dump_forest:
            dump_forest(reasoner.forest_, out / "forest.json", reasoner.feature_names_)
            files.append({"file": "forest.json", "bytes": (out / "forest.json").stat().st_size, "kind": "forest"})
        if config.dump_summary:
            size = _write_json(out / "summary.json", reasoner.summary_.to_dict())
            files.append({"file": "summary.json", "bytes": size, "kind": "summary"})
        # optional dumps are report output, so they count toward the explain step
        steps = {step: reasoner.timings_[step] for step in REASONING_STEPS}
        steps["explain"] = (time.perf_counter() - start) * 1000.0
        clock.record["per_target"][name] = steps
        v = reasoner.validation_
        manifest["targets"][name] = {
            "positives": int(np.sum(y)),
            "negatives": int(len(y) - np.sum(y)),
            "good_learned": v.good_learned,
            "learning_score": v.learning_score,
            "tpr": v.tpr,
            "tnr": v.tnr,
            "error_features": v.error_features,
            "files": files,
        }
        completed += 1
    return completed


def run_pipeline(config: RunConfig) -> tuple[int, dict]:
    """Execute the configured command; returns the exit status and the timing record."""
    clock = _Clock()
    manifest: dict = {"config": config.echo(), "skipped": [], "targets": {}, "outputs": []}
    try:
        if config.command in ("run", "extract"):
            ingested = clock.stage(
                "ingest", process_dir, config.paths, config.task, config.iou_threshold, config.n_jobs
            )
            # reason on exactly what the CSV dump holds so extract+reason equals run
            matrix = clock.stage(
                "feature_extraction",
                lambda: extract_features(ingested.defects, ingested.image_paths, config.n_jobs).rounded(),
            )
            targets = ingested.targets
            config.out_dir.mkdir(parents=True, exist_ok=True)
            write_matrix_csv(config.out_dir / MATRIX_CSV, matrix)
            write_targets_csv(config.out_dir / TARGETS_CSV, ingested.defects, targets)
            manifest["outputs"] += [MATRIX_CSV, TARGETS_CSV]
            manifest["defects"] = len(ingested.defects)
        else:
            matrix = clock.stage("load", read_matrix_csv, config.matrix_csv)
            _, _, targets = read_targets_csv(config.targets_csv)
            if matrix.id_list != targets.defect_ids:
                raise LengthMismatch("dc_matrix.csv and targets.csv list different defects")
            config.out_dir.mkdir(parents=True, exist_ok=True)
            manifest["defects"] = len(matrix)

        status = EXIT_OK
        if config.command != "extract":
            completed = _reason_targets(config, matrix, targets, clock, manifest)
            status = EXIT_OK if completed else EXIT_DEGENERATE
        timing = clock.finish()
        _write_json(config.out_dir / "timing.json", timing)
        _write_json(config.out_dir / "manifest.json", manifest)
        return status, timing
    except (UnreadableFile, IoFailure, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_IO, clock.finish()
    except (ConfigError, DatasetError, LengthMismatch, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG, clock.finish()


def main(argv: Optional[Sequence[str]] = None) -> int:
    config = parse_args(argv)
    status, timing = run_pipeline(config)
    if status == EXIT_OK:
        logger.info("done in %.0f ms", timing["total"])
    return status


if __name__ == "__main__":
    sys.exit(main())
