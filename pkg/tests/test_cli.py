import json
import shutil
import subprocess
import sys

import pytest

from defect_reasoner.cli import REASONING_STEPS, main, parse_args
from defect_reasoner.synthetic import make_dataset

TREES = ["--trees", "25"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("ds"), 30, size=128, seed=3)


def args(paths, out, *extra):
    return ["run", "--images", str(paths.images_dir), "--gt", str(paths.gt_dir),
            "--pred", str(paths.pred_dir), "--out", str(out), *extra]


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in ("timing.json", "manifest.json")}


@pytest.fixture(scope="module")
def joint_run(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("joint")
    assert main(args(dataset, out, *TREES, "--dump-summary")) == 0
    return out


# --------------------------------------------------------------- arguments


def test_defaults(dataset, tmp_path):
    config = parse_args(args(dataset, tmp_path / "o", "--task", "joint"))
    assert config.forest.n_tree == 200
    assert config.iou_threshold == 0.5
    assert config.task.value == "joint"
    assert not (tmp_path / "o").exists()


def test_missing_gt_is_usage_error(dataset, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--images", str(dataset.images_dir), "--pred", str(dataset.pred_dir), "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "--gt" in capsys.readouterr().err


@pytest.mark.parametrize("flag,value", [("--trees", "0"), ("--iou-threshold", "1.5"), ("--max-depth", "0"),
                                        ("--features-per-split", "40"), ("--good-learned", "2")])
def test_invalid_values_exit_2(dataset, tmp_path, flag, value):
    with pytest.raises(SystemExit) as exc:
        main(args(dataset, tmp_path / "o", flag, value))
    assert exc.value.code == 2
    assert not (tmp_path / "o").exists()


def test_nonexistent_folder_exit_2(dataset, tmp_path):
    argv = args(dataset, tmp_path / "o")
    argv[argv.index("--gt") + 1] = str(tmp_path / "nowhere")
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


# --------------------------------------------------------------- runs


def test_joint_run_layout(joint_run):
    targets = sorted(p.name for p in joint_run.iterdir() if p.is_dir())
    assert targets == ["correctly_classified", "detected", "misclassified", "undetected"]
    for name in targets:
        files = list((joint_run / name).iterdir())
        assert len([f for f in files if f.suffix == ".svg"]) == 19
        assert (joint_run / name / "improvement_recommendations.txt").is_file()
        assert (joint_run / name / "summary.json").is_file()
    assert (joint_run / "dc_matrix.csv").is_file() and (joint_run / "targets.csv").is_file()


def test_timing_record(joint_run):
    timing = json.loads((joint_run / "timing.json").read_text())
    assert set(timing) == {"ingest", "feature_extraction", "per_target", "total"}
    assert set(timing["per_target"]) == {"detected", "undetected", "correctly_classified", "misclassified"}
    stages = timing["ingest"] + timing["feature_extraction"]
    for steps in timing["per_target"].values():
        assert tuple(steps) == REASONING_STEPS
        assert all(v >= 0 for v in steps.values())
        stages += sum(steps.values())
    assert stages <= timing["total"]
    assert (timing["total"] - stages) / timing["total"] < 0.02


def test_manifest(joint_run):
    manifest = json.loads((joint_run / "manifest.json").read_text())
    assert manifest["skipped"] == []
    assert manifest["config"]["forest"]["n_tree"] == 25
    for name, entry in manifest["targets"].items():
        for f in entry["files"]:
            assert (joint_run / name / f["file"]).stat().st_size == f["bytes"]


def test_detection_mode_skips_classification(dataset, tmp_path):
    assert main(args(dataset, tmp_path, *TREES, "--task", "detection")) == 0
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == ["detected", "undetected"]
    skipped = json.loads((tmp_path / "manifest.json").read_text())["skipped"]
    assert [s["target"] for s in skipped] == ["correctly_classified", "misclassified"]
    assert all(s["reason"].startswith("N/A") for s in skipped)


def test_all_targets_degenerate_exit_4(dataset, tmp_path):
    root = tmp_path / "perfect"
    shutil.copytree(dataset.images_dir, root / "images")
    shutil.copytree(dataset.gt_dir, root / "gt")
    shutil.copytree(dataset.gt_dir, root / "pred")  # a model that is never wrong
    argv = ["run", "--images", str(root / "images"), "--gt", str(root / "gt"), "--pred", str(root / "pred"),
            "--out", str(tmp_path / "o"), *TREES]
    assert main(argv) == 4
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert len(manifest["skipped"]) == 4 and manifest["targets"] == {}


def test_corrupt_mask_exit_3(dataset, tmp_path):
    root = tmp_path / "bad"
    shutil.copytree(dataset.images_dir.parent, root)
    (root / "gt" / "img_0003.png").write_bytes(b"\x89PNG broken")
    argv = ["run", "--images", str(root / "images"), "--gt", str(root / "gt"), "--pred", str(root / "pred"),
            "--out", str(tmp_path / "o")]
    assert main(argv) == 3
    assert not (tmp_path / "o").exists()


def test_missing_image_exit_2_without_outputs(dataset, tmp_path):
    root = tmp_path / "gap"
    shutil.copytree(dataset.images_dir.parent, root)
    (root / "images" / "img_0005.png").unlink()
    argv = ["run", "--images", str(root / "images"), "--gt", str(root / "gt"), "--pred", str(root / "pred"),
            "--out", str(tmp_path / "o")]
    assert main(argv) == 2
    assert not (tmp_path / "o").exists()


def test_extract_then_reason_matches_run(dataset, joint_run, tmp_path):
    dumps = tmp_path / "dumps"
    extract = ["extract", "--images", str(dataset.images_dir), "--gt", str(dataset.gt_dir),
               "--pred", str(dataset.pred_dir), "--out", str(dumps)]
    assert main(extract) == 0
    assert sorted(p.name for p in dumps.iterdir()) == ["dc_matrix.csv", "manifest.json", "targets.csv", "timing.json"]
    assert (dumps / "dc_matrix.csv").read_bytes() == (joint_run / "dc_matrix.csv").read_bytes()
    reason = ["reason", "--matrix", str(dumps / "dc_matrix.csv"), "--targets", str(dumps / "targets.csv"),
              "--out", str(tmp_path / "r"), *TREES, "--dump-summary"]
    assert main(reason) == 0
    run_files = {k: v for k, v in tree_bytes(joint_run).items() if "/" in k}
    assert tree_bytes(tmp_path / "r") == run_files
    assert "load" in json.loads((tmp_path / "r" / "timing.json").read_text())


def test_reason_with_misaligned_dumps_exit_2(joint_run, tmp_path):
    lines = (joint_run / "targets.csv").read_text().splitlines()
    short = tmp_path / "targets.csv"
    short.write_text("\n".join(lines[:-1]) + "\n")
    argv = ["reason", "--matrix", str(joint_run / "dc_matrix.csv"), "--targets", str(short), "--out", str(tmp_path / "r")]
    assert main(argv) == 2


def test_thread_count_does_not_change_outputs(dataset, joint_run, tmp_path):
    assert main(args(dataset, tmp_path, *TREES, "--dump-summary", "--jobs", "3")) == 0
    assert tree_bytes(tmp_path) == tree_bytes(joint_run)


def test_module_entry_point(dataset, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "defect_reasoner", *args(dataset, tmp_path, "--trees", "0")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
