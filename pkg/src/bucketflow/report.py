"""Deterministic JSON reports and fixed-precision text summaries."""

from __future__ import annotations

import json
import warnings
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Mapping

from . import __version__
from .evaluation import EvalConfig, EvalPartial
from .metrics import (
    THREEWAY_CATEGORIES,
    BucketMatrix,
    ThreewayAccumulator,
    mean_summary,
    summarize_buckets,
)

REPORT_SCHEMA = "bucketflow-report/1"
DISPLAY_DECIMALS = 6


def format_value(value: float | None, decimals: int = DISPLAY_DECIMALS) -> str:
    """Round half-up on the shortest decimal form of ``value``; ``None`` prints as ``undefined``."""
    if value is None:
        return "undefined"
    q = Decimal(1).scaleb(-decimals)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def build_report(partial: EvalPartial, config: Mapping[str, Any] | EvalConfig) -> dict:
    config_echo = config.to_dict() if isinstance(config, EvalConfig) else dict(config)
    per_class = summarize_buckets(partial.matrix)
    means = mean_summary(per_class)
    threeway = None
    if partial.threeway is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = partial.threeway.result()
        threeway = result.to_dict() | {
            "accumulator": {
                "dynamic_speed": partial.threeway.dynamic_speed,
                "counts": list(partial.threeway.counts),
                "epe_sum_fixed": [int(v) for v in partial.threeway.epe_fixed],
            }
        }
    histogram = None
    if partial.histogram is not None:
        histogram = dict(zip(partial.matrix.classes, partial.histogram))
    return {
        "schema": REPORT_SCHEMA,
        "tool": {"name": "bucketflow", "version": __version__},
        "config": config_echo,
        "sequences": list(partial.sequences),
        "frames_evaluated": partial.frames_evaluated,
        "missing_predictions": {
            "flagged": bool(partial.missing),
            "count": len(partial.missing),
            "frames": [{"sequence": s, "frame_id": f} for s, f in partial.missing],
        },
        "mean": means.to_dict(),
        "per_class": {name: s.to_dict() for name, s in per_class.items()},
        "threeway": threeway,
        "point_histogram": histogram,
        "bucket_matrix": partial.matrix.to_dict(),
    }


def dumps(report: Mapping) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def write_report(path: str | Path, report: Mapping) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(report))


def load_report(path: str | Path) -> dict:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"{path}: not a report (schema {doc.get('schema')!r})")
    return doc


def partial_from_document(doc: Mapping) -> tuple[EvalPartial, dict | None]:
    """Recover a mergeable partial from a report or from a bare matrix document.

    Returns the partial and the report's config echo (``None`` for a bare matrix).
    """
    if doc.get("schema") != REPORT_SCHEMA:
        return EvalPartial(BucketMatrix.from_dict(doc)), None
    matrix = BucketMatrix.from_dict(doc["bucket_matrix"])
    threeway = None
    if doc.get("threeway") is not None:
        acc = doc["threeway"]["accumulator"]
        threeway = ThreewayAccumulator(
            tuple(int(c) for c in acc["counts"]), tuple(int(v) for v in acc["epe_sum_fixed"]), acc["dynamic_speed"]
        )
    histogram = None
    if doc.get("point_histogram") is not None:
        histogram = tuple(int(doc["point_histogram"][c]) for c in matrix.classes)
    missing = tuple((m["sequence"], int(m["frame_id"])) for m in doc["missing_predictions"]["frames"])
    partial = EvalPartial(matrix, threeway, histogram, tuple(doc["sequences"]), int(doc["frames_evaluated"]), missing)
    return partial, doc["config"]


def merge_documents(docs: list[Mapping]) -> dict:
    """Merge reports (or bare matrices) into one report."""
    if not docs:
        raise ValueError("nothing to merge")
    partials, configs = zip(*(partial_from_document(d) for d in docs))
    known = [c for c in configs if c is not None]
    if any(c != known[0] for c in known[1:]):
        raise ValueError("reports were produced with different configurations")
    total = partials[0]
    for p in partials[1:]:
        total = total.merge(p)
    config = known[0] if len(known) == len(configs) else {"dt": total.matrix.dt, "classes": list(total.matrix.classes)}
    return build_report(total, config)


def report_summary_lines(report: Mapping) -> list[str]:
    lines = []
    for name, s in report["per_class"].items():
        lines.append(
            f"{name}: static {format_value(s['static_epe'])}, dynamic {format_value(s['dynamic_normalized_epe'])}"
        )
    m = report["mean"]
    lines.append(
        f"mean: static {format_value(m['mean_static_epe'])} "
        f"(foreground {format_value(m['mean_static_epe_foreground'])}), "
        f"dynamic {format_value(m['mean_dynamic_normalized_epe'])}"
    )
    if report.get("threeway") is not None:
        tw = report["threeway"]
        parts = ", ".join(f"{k} {format_value(tw['categories'][k]['epe'])}" for k in THREEWAY_CATEGORIES)
        lines.append(f"threeway: {parts}, mean {format_value(tw['mean'])}")
    missing = report["missing_predictions"]
    if missing["flagged"]:
        lines.append(f"WARNING: {missing['count']} frame(s) had no prediction and were excluded")
    return lines
