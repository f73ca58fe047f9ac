import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from defect_reasoner.analysis import DCSummary
from defect_reasoner.errors import InvalidRange
from defect_reasoner.features import DC_NAMES, FeatureRange
from defect_reasoner.forest import Route
from defect_reasoner.report import (
    AXIS_X0,
    AXIS_X1,
    RECOMMENDATIONS_FILE,
    explain_forest,
    fmt,
    recommendation_lines,
    render_dc_chart,
    write_recommendations,
)
from defect_reasoner.reasoner import DefectReasoner

from helpers import separable_matrix

SVG = "{http://www.w3.org/2000/svg}"


def summary_with(importance: dict, failure=None, flags=None) -> DCSummary:
    imp = np.array([importance.get(n, 0.0) for n in DC_NAMES])
    failure = failure or {}
    routes = [Route(0, 3, [("area_ratio", "<=", 0.25), ("contrast", ">", 0.1)], 1, 12, 0.9),
              Route(1, 4, [("area_ratio", ">", 0.25)], 0, 30, 1.0)]
    return DCSummary(
        feature_list=DC_NAMES,
        importance=imp,
        failure_ranges={n: failure.get(n, []) for n in DC_NAMES},
        success_ranges={n: [] for n in DC_NAMES},
        feature_range=FeatureRange(DC_NAMES, np.zeros(18), np.ones(18)),
        route_to_1=routes[:1],
        route_to_0=routes[1:],
        error_flags={n: bool((flags or {}).get(n)) for n in DC_NAMES},
        target="undetected",
    )


def bands(svg: str, kind: str):
    root = ET.fromstring(svg)
    return [r.attrib for r in root.iter(f"{SVG}rect") if r.attrib.get("class") == kind]


def test_failure_band_covers_left_30_percent():
    svg = render_dc_chart("area_ratio", 0.4, [(0.0, 0.3)], [], (0.0, 1.0))
    (band,) = bands(svg, "failure")
    axis = AXIS_X1 - AXIS_X0
    assert float(band["x"]) == pytest.approx(AXIS_X0)
    assert float(band["width"]) == pytest.approx(0.3 * axis, abs=0.01)
    assert "importance 0.400" in svg


def test_empty_ranges_keep_baseline():
    svg = render_dc_chart("hue_std", 0.0, [], [], (0.2, 0.4))
    assert bands(svg, "failure") == bands(svg, "success") == []
    assert len(bands(svg, "baseline")) == 1
    ticks = [t.text for t in ET.fromstring(svg).iter(f"{SVG}text")]
    assert ["0.2", "0.25", "0.3", "0.35", "0.4"] == ticks[1:6]


def test_render_is_deterministic():
    args = ("solidity", 0.123456, [(0.1, 0.2), (0.5, 0.75)], [(0.3, 0.4)], (0.0, 1.0), True)
    assert render_dc_chart(*args) == render_dc_chart(*args)


def test_invalid_range():
    with pytest.raises(InvalidRange):
        render_dc_chart("extent", 0.1, [], [], (0.9, 0.1))
    with pytest.raises(InvalidRange):
        render_dc_chart("extent", 0.1, [(0.5, 0.2)], [], (0.0, 1.0))


def test_single_nonzero_dc_single_block():
    lines = recommendation_lines(summary_with({"contrast": 1.0}, {"contrast": [(0.0, 0.125)]}), "undetected")
    blocks = [l for l in lines if l.startswith("DC ")]
    assert blocks == [
        "DC contrast (importance 1.000): defects with contrast in [0, 0.125] are frequently undetected; "
        "consider adding or augmenting training samples in this range."
    ]
    assert lines[0] == "Improvement recommendations for target: undetected"


def test_equal_importance_follows_feature_order():
    s = summary_with({"val_mean": 0.25, "extent": 0.25, "area_ratio": 0.25, "hue_mean": 0.25})
    names = [l.split()[1] for l in recommendation_lines(s, "t") if l.startswith("DC ")]
    assert names == ["area_ratio", "extent", "hue_mean", "val_mean"]


def test_at_most_five_blocks_in_descending_order():
    imp = {n: (k + 1) / 171 for k, n in enumerate(DC_NAMES)}
    names = [l.split()[1] for l in recommendation_lines(summary_with(imp), "t") if l.startswith("DC ")]
    assert names == list(reversed(DC_NAMES))[:5]


def test_error_flag_note():
    s = summary_with({"extent": 1.0}, flags={"extent": True})
    assert any(l.strip().startswith("note: extent") for l in recommendation_lines(s, "misclassified"))


def test_recommendations_file_name(tmp_path):
    path = write_recommendations(summary_with({"extent": 1.0}), "detected", tmp_path)
    assert path.name == RECOMMENDATIONS_FILE
    assert (tmp_path / "improvement_recommendations.txt").read_text().startswith("Improvement")


@pytest.mark.parametrize("route_plot,count", [(False, 19), (True, 20)])
def test_explain_file_counts(tmp_path, route_plot, count):
    bundle = explain_forest(summary_with({"extent": 1.0}), DC_NAMES, tmp_path, route_plot)
    svgs = sorted(p.name for p in tmp_path.glob("*.svg"))
    assert len(svgs) == len(bundle.charts) == count
    assert ("routes.svg" in svgs) == route_plot
    assert {f"dc_{n}.svg" for n in DC_NAMES} <= set(svgs)
    assert (tmp_path / RECOMMENDATIONS_FILE).is_file()
    for entry in bundle.entries:
        assert (tmp_path / entry.name).stat().st_size == entry.size > 0
    assert not list(tmp_path.glob(".*tmp"))


def test_routes_chart_lists_both_classes(tmp_path):
    explain_forest(summary_with({"extent": 1.0}), DC_NAMES, tmp_path, route_plot=True)
    text = (tmp_path / "routes.svg").read_text()
    assert text.index("Routes to class 1") < text.index("Routes to class 0")
    assert "area_ratio &lt;= 0.25" in text


def test_summary_chart_is_descending(tmp_path):
    imp = {n: (k + 1) / 171 for k, n in enumerate(DC_NAMES)}
    explain_forest(summary_with(imp), DC_NAMES, tmp_path)
    root = ET.parse(tmp_path / "summary.svg").getroot()
    widths = [float(r.attrib["width"]) for r in root.iter(f"{SVG}rect") if r.attrib.get("class") == "importance"]
    assert len(widths) == 18 and widths == sorted(widths, reverse=True)


@pytest.fixture(scope="module")
def real_outputs(tmp_path_factory):
    X, y = separable_matrix(np.random.default_rng(21), n=200)
    reasoner = DefectReasoner(n_tree=40).fit(X, y, target="undetected")
    first = tmp_path_factory.mktemp("a")
    second = tmp_path_factory.mktemp("b")
    bundles = reasoner.explain(first, route_plot=True), reasoner.explain(second, route_plot=True)
    return reasoner, first, second, bundles


def test_outputs_byte_identical_across_runs(real_outputs):
    _, first, second, (a, b) = real_outputs
    assert a.to_list() == b.to_list()
    for p in first.iterdir():
        assert p.read_bytes() == (second / p.name).read_bytes()


def test_all_svgs_parse(real_outputs):
    for p in real_outputs[1].glob("*.svg"):
        assert ET.parse(p).getroot().tag == f"{SVG}svg"


def test_text_ranges_are_drawn(real_outputs):
    _, out, _, _ = real_outputs
    text = (out / RECOMMENDATIONS_FILE).read_text()
    checked = 0
    for line in text.splitlines():
        m = re.match(r"DC (\w+) \(importance [\d.]+\): defects with \w+ in (.*) are frequently", line)
        if not m:
            continue
        drawn = {(b["data-lo"], b["data-hi"]) for b in bands((out / f"dc_{m.group(1)}.svg").read_text(), "failure")}
        for lo, hi in re.findall(r"\[([^,\]]+), ([^\]]+)\]", m.group(2)):
            assert (lo, hi) in drawn
            checked += 1
    assert checked >= 1


def test_fmt_has_no_negative_zero():
    assert fmt(-0.0) == "0"
    assert fmt(0.000123456) == "0.0001235"
