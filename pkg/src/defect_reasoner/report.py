"""Deterministic SVG charts and the improvement-recommendations text.

Charts are written by hand as SVG so identical summaries always give
identical bytes: fixed canvas sizes, fixed float formatting, no
timestamps. Files are written atomically (temp file, then rename).
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .analysis import DCSummary
from .errors import EmptySummary, InvalidRange, IoFailure
from .forest import Route

RECOMMENDATIONS_FILE = "improvement_recommendations.txt"
TOP_DCS = 5

FAILURE = "#d62728"
SUCCESS = "#2ca02c"
BASELINE = "#e6e6e6"
INK = "#333333"
MUTED = "#888888"
BAR = "#1f77b4"

# dc chart geometry
WIDTH, HEIGHT = 800, 300
AXIS_X0, AXIS_X1 = 60.0, 740.0
BAND_TOP, BAND_MID, BAND_BOTTOM = 110.0, 150.0, 190.0
AXIS_Y = 200.0


def fmt(v: float) -> str:
    """Value format shared by charts and text, so printed ranges match drawn bands."""
    s = f"{v:.4g}"
    return "0" if s == "-0" else s


def _px(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_px(width)}" height="{_px(height)}" '
        f'viewBox="0 0 {_px(width)} {_px(height)}" font-family="sans-serif" font-size="12">'
    )
    return "\n".join([head, f'<rect width="{_px(width)}" height="{_px(height)}" fill="white"/>', *body, "</svg>"]) + "\n"


def _check_range(lo: float, hi: float, what: str) -> None:
    if lo > hi:
        raise InvalidRange(f"{what}: lower bound {lo} exceeds upper bound {hi}")


def render_dc_chart(
    dc_name: str,
    importance: float,
    failure_ranges: Sequence[tuple[float, float]],
    success_ranges: Sequence[tuple[float, float]],
    value_range: tuple[float, float],
    error_flag: bool = False,
) -> str:
    """One characteristic's value axis with failure (upper) and success (lower) bands."""
    lo, hi = value_range
    _check_range(lo, hi, f"{dc_name} range")
    for a, b in (*failure_ranges, *success_ranges):
        _check_range(a, b, f"{dc_name} band")
    span = hi - lo if hi > lo else 1.0

    def x_of(v: float) -> float:
        return AXIS_X0 + (v - lo) / span * (AXIS_X1 - AXIS_X0)

    title = f"{dc_name}  importance {importance:.3f}" + ("  (on misjudged paths)" if error_flag else "")
    body = [
        f'<text x="{_px(AXIS_X0)}" y="40.00" font-size="18" fill="{INK}">{_esc(title)}</text>',
        f'<rect class="baseline" x="{_px(AXIS_X0)}" y="{_px(BAND_TOP)}" width="{_px(AXIS_X1 - AXIS_X0)}" '
        f'height="{_px(BAND_BOTTOM - BAND_TOP)}" fill="{BASELINE}"/>',
    ]
    for kind, color, top, ranges in (
        ("failure", FAILURE, BAND_TOP, failure_ranges),
        ("success", SUCCESS, BAND_MID, success_ranges),
    ):
        for a, b in ranges:
            x0, x1 = x_of(a), x_of(b)
            body.append(
                f'<rect class="{kind}" data-lo="{fmt(a)}" data-hi="{fmt(b)}" x="{_px(x0)}" y="{_px(top)}" '
                f'width="{_px(x1 - x0)}" height="{_px(BAND_MID - BAND_TOP)}" fill="{color}" fill-opacity="0.7"/>'
            )
    body.append(
        f'<line x1="{_px(AXIS_X0)}" y1="{_px(AXIS_Y)}" x2="{_px(AXIS_X1)}" y2="{_px(AXIS_Y)}" stroke="{INK}"/>'
    )
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        x = AXIS_X0 + (AXIS_X1 - AXIS_X0) * i / 4
        body.append(f'<line x1="{_px(x)}" y1="{_px(AXIS_Y)}" x2="{_px(x)}" y2="{_px(AXIS_Y + 6)}" stroke="{INK}"/>')
        body.append(
            f'<text x="{_px(x)}" y="{_px(AXIS_Y + 22)}" text-anchor="middle" fill="{INK}">{fmt(v)}</text>'
        )
    legend_y = 270.0
    for k, (label, color) in enumerate((("frequent in positive routes", FAILURE), ("frequent in negative routes", SUCCESS))):
        x = AXIS_X0 + 260.0 * k
        body.append(f'<rect x="{_px(x)}" y="{_px(legend_y - 10)}" width="12.00" height="12.00" fill="{color}"/>')
        body.append(f'<text x="{_px(x + 18)}" y="{_px(legend_y)}" fill="{INK}">{label}</text>')
    return _svg(WIDTH, HEIGHT, body)


def render_summary_chart(summary: DCSummary) -> str:
    """Horizontal importance bars for every characteristic, most important first."""
    names = summary.ranked()
    row, top, label_w, bar_w = 24.0, 50.0, 170.0, 540.0
    height = top + row * len(names) + 20.0
    peak = max(float(summary.importance.max()), 0.0) if len(names) else 0.0
    title = "Characteristic importance" + (f" - {summary.target}" if summary.target else "")
    body = [f'<text x="10.00" y="30.00" font-size="18" fill="{INK}">{_esc(title)}</text>']
    for k, name in enumerate(names):
        value = summary.importance_of(name)
        y = top + row * k
        width = bar_w * value / peak if peak > 0 else 0.0
        flag = " *" if summary.error_flags.get(name) else ""
        body.append(
            f'<text x="{_px(label_w - 8)}" y="{_px(y + 15)}" text-anchor="end" fill="{INK}">{_esc(name + flag)}</text>'
        )
        body.append(
            f'<rect class="importance" data-dc="{_esc(name)}" x="{_px(label_w)}" y="{_px(y + 3)}" '
            f'width="{_px(width)}" height="{_px(row - 6)}" fill="{BAR}"/>'
        )
        body.append(f'<text x="{_px(label_w + width + 6)}" y="{_px(y + 15)}" fill="{INK}">{value:.3f}</text>')
    return _svg(WIDTH, height, body)


def _route_row(route: Route, y: float, parts: list[str]) -> float:
    x = 10.0
    for dc, rel, thr in route.conditions:
        text = f"{dc} {rel} {fmt(thr)}"
        w = 7.0 * len(text) + 12.0
        parts.append(f'<rect x="{_px(x)}" y="{_px(y)}" width="{_px(w)}" height="22.00" fill="{BASELINE}" stroke="{MUTED}"/>')
        parts.append(f'<text x="{_px(x + 6)}" y="{_px(y + 15)}" fill="{INK}">{_esc(text)}</text>')
        x += w
        parts.append(f'<line x1="{_px(x)}" y1="{_px(y + 11)}" x2="{_px(x + 14)}" y2="{_px(y + 11)}" stroke="{INK}"/>')
        x += 14.0
    leaf = f"class {route.leaf_class} (support {route.support}, purity {route.purity:.3f})"
    color = FAILURE if route.leaf_class == 1 else SUCCESS
    w = 7.0 * len(leaf) + 12.0
    parts.append(f'<rect x="{_px(x)}" y="{_px(y)}" width="{_px(w)}" height="22.00" fill="{color}" fill-opacity="0.3" stroke="{color}"/>')
    parts.append(f'<text x="{_px(x + 6)}" y="{_px(y + 15)}" fill="{INK}">{_esc(leaf)}</text>')
    return x + w + 10.0


def render_routes_chart(summary: DCSummary) -> str:
    """Top routes drawn as condition chains: positive-class routes, then negative-class."""
    parts: list[str] = []
    y, width = 30.0, float(WIDTH)
    for heading, routes in (("Routes to class 1", summary.route_to_1), ("Routes to class 0", summary.route_to_0)):
        parts.append(f'<text x="10.00" y="{_px(y)}" font-size="16" fill="{INK}">{heading}</text>')
        y += 12.0
        for route in routes:
            width = max(width, _route_row(route, y, parts))
            y += 30.0
        y += 24.0
    return _svg(width, y, parts)


def recommendation_lines(summary: DCSummary, target_name: str) -> list[str]:
    if not summary.feature_list:
        raise EmptySummary("summary has no characteristics")
    lines = [f"Improvement recommendations for target: {target_name}", ""]
    for name in summary.ranked()[:TOP_DCS]:
        value = summary.importance_of(name)
        if value <= 0:
            break
        ranges = summary.failure_ranges.get(name, [])
        if ranges:
            spans = " or ".join(f"[{fmt(a)}, {fmt(b)}]" for a, b in ranges)
            lines.append(
                f"DC {name} (importance {value:.3f}): defects with {name} in {spans} are frequently "
                f"{target_name}; consider adding or augmenting training samples in this range."
            )
        else:
            lines.append(
                f"DC {name} (importance {value:.3f}): no single range of {name} is dominated by "
                f"{target_name} defects."
            )
        if summary.error_flags.get(name):
            lines.append(f"  note: {name} also lies on the paths of trees that misjudged defects.")
        lines.append("")
    return lines


def _atomic_write(path: Path, text: str) -> int:
    data = text.encode("utf-8")
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return len(data)


def write_recommendations(summary: DCSummary, target_name: str, out_dir: Path | str) -> Path:
    """Write ``improvement_recommendations.txt`` into ``out_dir``; returns its path."""
    path = Path(out_dir) / RECOMMENDATIONS_FILE
    _atomic_write(path, "\n".join(recommendation_lines(summary, target_name)))
    return path


@dataclass
class ManifestEntry:
    name: str
    size: int
    kind: str


@dataclass
class ReportBundle:
    out_dir: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def charts(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.kind.endswith("chart")]

    @property
    def recommendations(self) -> Path:
        return self.out_dir / RECOMMENDATIONS_FILE

    def to_list(self) -> list[dict]:
        return [{"file": e.name, "bytes": e.size, "kind": e.kind} for e in self.entries]


def explain_forest(
    summary: DCSummary,
    feature_list: Sequence[str],
    out_dir: Path | str,
    route_plot: bool = False,
    target_name: Optional[str] = None,
) -> ReportBundle:
    """Write every chart and the recommendations for one target into ``out_dir``."""
    if not feature_list or not summary.feature_list:
        raise EmptySummary("nothing to explain")
    target_name = target_name or summary.target or "positive"
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc

    bundle = ReportBundle(out)

    def emit(name: str, text: str, kind: str) -> None:
        bundle.entries.append(ManifestEntry(name, _atomic_write(out / name, text), kind))

    for name in feature_list:
        emit(
            f"dc_{name}.svg",
            render_dc_chart(
                name,
                summary.importance_of(name),
                summary.failure_ranges.get(name, []),
                summary.success_ranges.get(name, []),
                summary.feature_range[name],
                bool(summary.error_flags.get(name)),
            ),
            "dc_chart",
        )
    emit("summary.svg", render_summary_chart(summary), "summary_chart")
    if route_plot:
        emit("routes.svg", render_routes_chart(summary), "route_chart")
    emit(RECOMMENDATIONS_FILE, "\n".join(recommendation_lines(summary, target_name)), "recommendations")
    return bundle
