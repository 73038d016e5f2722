"""Static SVG bar charts built from evaluation reports.

Output is plain text assembled from fixed-precision numbers, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape as _escape

PLOT_HEIGHT = 300.0
BAR_WIDTH = 28.0
GAP = 14.0
LEFT, TOP, BOTTOM, RIGHT = 70.0, 50.0, 90.0, 30.0
PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")


def escape(text: str) -> str:
    return _escape(str(text), {'"': "&quot;"})


def _num(v: float) -> str:
    return f"{v:.4f}"


def bar_heights(values: Sequence[float | None], log_scale: bool = False) -> list[float | None]:
    """Pixel heights: linear in value, or linear in log10(value) on a log axis."""
    if log_scale:
        scaled = [math.log10(v) if v is not None and v > 0 else None for v in values]
    else:
        scaled = [v if v is not None and v >= 0 else None for v in values]
    top = max((s for s in scaled if s is not None), default=0.0)
    if top <= 0:
        return [0.0 if s is not None else None for s in scaled]
    return [None if s is None else PLOT_HEIGHT * s / top for s in scaled]


def grouped_bar_svg(
    title: str,
    groups: Sequence[str],
    series: Sequence[str],
    values: Sequence[Sequence[float | None]],
    y_label: str,
    hatched: Sequence[str] = (),
    log_scale: bool = False,
) -> str:
    """``values[s][g]`` is series ``s`` in group ``g``; ``None`` draws no bar and an ``n/a`` tick."""
    n_s, n_g = len(series), len(groups)
    flat = [v for row in values for v in row]
    heights = bar_heights(flat, log_scale)
    group_w = n_s * BAR_WIDTH + GAP
    width = LEFT + n_g * group_w + RIGHT
    show_legend = n_s > 1 or bool(hatched)
    legend_h = 14 * n_s if show_legend else 0
    height = TOP + PLOT_HEIGHT + BOTTOM + max(0, legend_h - 50)
    base = TOP + PLOT_HEIGHT
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(width)}" height="{_num(height)}" '
        f'viewBox="0 0 {_num(width)} {_num(height)}" font-family="sans-serif" font-size="11">',
        "<defs>",
    ]
    for i, _ in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        out.append(
            f'<pattern id="hatch{i}" patternUnits="userSpaceOnUse" width="6" height="6" patternTransform="rotate(45)">'
            f'<rect width="6" height="6" fill="{color}"/><line x1="0" y1="0" x2="0" y2="6" stroke="#ffffff" stroke-width="2"/>'
            "</pattern>"
        )
    out.append("</defs>")
    out.append(f'<text x="{_num(width / 2)}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    axis = f"{y_label} (log scale)" if log_scale else y_label
    out.append(
        f'<text x="15" y="{_num(TOP + PLOT_HEIGHT / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 15 {_num(TOP + PLOT_HEIGHT / 2)})">{escape(axis)}</text>'
    )
    out.append(f'<line x1="{_num(LEFT)}" y1="{_num(base)}" x2="{_num(width - RIGHT)}" y2="{_num(base)}" stroke="#000000"/>')
    out.append(f'<line x1="{_num(LEFT)}" y1="{_num(TOP)}" x2="{_num(LEFT)}" y2="{_num(base)}" stroke="#000000"/>')
    for g, group in enumerate(groups):
        gx = LEFT + GAP / 2 + g * group_w
        for s in range(n_s):
            x = gx + s * BAR_WIDTH
            v = values[s][g]
            h = heights[s * n_g + g]
            if h is None:
                out.append(f'<text x="{_num(x + BAR_WIDTH / 2)}" y="{_num(base - 4)}" text-anchor="middle" font-size="9">n/a</text>')
                continue
            fill = f"url(#hatch{s})" if series[s] in hatched else PALETTE[s % len(PALETTE)]
            out.append(
                f'<rect class="bar" data-series="{escape(series[s])}" data-group="{escape(group)}" '
                f'x="{_num(x)}" y="{_num(base - h)}" width="{_num(BAR_WIDTH - 2)}" height="{_num(h)}" fill="{fill}">'
                f"<title>{escape(series[s])} / {escape(group)}: {v!r}</title></rect>"
            )
        out.append(
            f'<text x="{_num(gx + n_s * BAR_WIDTH / 2)}" y="{_num(base + 16)}" text-anchor="middle">{escape(group)}</text>'
        )
    if show_legend:
        for s, name in enumerate(series):
            y = base + 36 + 14 * s
            fill = f"url(#hatch{s})" if name in hatched else PALETTE[s % len(PALETTE)]
            out.append(f'<rect x="{_num(LEFT)}" y="{_num(y - 9)}" width="10" height="10" fill="{fill}"/>')
            out.append(f'<text x="{_num(LEFT + 14)}" y="{_num(y)}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _check_taxonomies(reports: Sequence[Mapping]) -> tuple[str, ...]:
    classes = tuple(reports[0]["bucket_matrix"]["classes"])
    for r in reports[1:]:
        if tuple(r["bucket_matrix"]["classes"]) != classes:
            raise ValueError(f"reports use different taxonomies: {classes} vs {tuple(r['bucket_matrix']['classes'])}")
    return classes


def mean_dynamic_chart(reports: Sequence[Mapping], labels: Sequence[str], hatched: Sequence[str] = ()) -> str:
    values = [[r["mean"]["mean_dynamic_normalized_epe"]] for r in reports]
    return grouped_bar_svg(
        "Mean Dynamic Normalized EPE (lower is better)", ["mean"], labels, values, "normalized EPE", hatched
    )


def per_class_dynamic_chart(reports: Sequence[Mapping], labels: Sequence[str], hatched: Sequence[str] = ()) -> str:
    classes = [c for c in _check_taxonomies(reports) if c != "BACKGROUND"]
    values = [[r["per_class"][c]["dynamic_normalized_epe"] for c in classes] for r in reports]
    return grouped_bar_svg(
        "Dynamic Normalized EPE per class (lower is better)", classes, labels, values, "normalized EPE", hatched
    )


def histogram_chart(report: Mapping) -> str:
    hist = report.get("point_histogram")
    if hist is None:
        raise ValueError("report carries no point histogram")
    classes = list(report["bucket_matrix"]["classes"])
    return grouped_bar_svg(
        "Points per class", classes, ["points"], [[hist[c] for c in classes]], "point count", log_scale=True
    )


def write_charts(
    reports: Sequence[Mapping], labels: Sequence[str], out_dir: str | Path, hatched: Sequence[str] = ()
) -> list[Path]:
    if not reports:
        raise ValueError("need at least one report")
    if len(labels) != len(reports):
        raise ValueError("one label per report is required")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique")
    _check_taxonomies(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    charts = {
        "mean_dynamic.svg": mean_dynamic_chart(reports, labels, hatched),
        "per_class_dynamic.svg": per_class_dynamic_chart(reports, labels, hatched),
    }
    if reports[0].get("point_histogram") is not None:
        charts["point_histogram.svg"] = histogram_chart(reports[0])
    paths = []
    for name, svg in charts.items():
        path = out / name
        path.write_text(svg)
        paths.append(path)
    return paths
