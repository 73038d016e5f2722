"""Endpoint-error metrics: Average EPE, Threeway EPE and Bucket Normalized EPE.

Bucket sums are kept as exact fixed-point integers (units of 2**-40 m), so
merging accumulators is exact integer addition. Reports therefore do not
depend on how a dataset is partitioned or in which order frames arrive.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .core import BACKGROUND, LARGE, MEDIUM, SMALL, Box3D, FlowField
from .gtflow import GroundTruthFlow

DEFAULT_DT = 0.1
BUCKET_WIDTH = 0.4
MAX_SPEED = 20.0
THREEWAY_DYNAMIC_SPEED = 0.5
SMALL_MAX_VOLUME = 9.5
MEDIUM_MAX_VOLUME = 40.0

FG_DYNAMIC, FG_STATIC, BG_STATIC = "foreground_dynamic", "foreground_static", "background_static"
THREEWAY_CATEGORIES = (FG_DYNAMIC, FG_STATIC, BG_STATIC)


class EmptySelectionError(ValueError):
    """Raised when an average is requested over zero points."""


def endpoint_errors(pred: FlowField, gt: GroundTruthFlow | FlowField) -> np.ndarray:
    gt_vec = gt.flow.vectors if isinstance(gt, GroundTruthFlow) else gt.vectors
    if len(pred) != len(gt_vec):
        raise ValueError(f"prediction has {len(pred)} vectors, ground truth has {len(gt_vec)}")
    return np.linalg.norm(pred.vectors - gt_vec, axis=1)


def _selection(pred: FlowField, gt: GroundTruthFlow, mask: np.ndarray | None) -> np.ndarray:
    sel = gt.selected & pred.valid
    if mask is not None:
        sel = sel & np.asarray(mask, dtype=bool)
    return sel


def average_epe(pred: FlowField, gt: GroundTruthFlow, mask: np.ndarray | None = None) -> float:
    """Mean L2 endpoint error over valid, masked-in points."""
    sel = _selection(pred, gt, mask)
    n = int(sel.sum())
    if n == 0:
        raise EmptySelectionError("no valid points selected")
    return math.fsum(endpoint_errors(pred, gt)[sel]) / n


# -- speed buckets ---------------------------------------------------------


def bucket_edges(width: float = BUCKET_WIDTH, max_speed: float = MAX_SPEED) -> np.ndarray:
    """Lower edges of every speed bucket; the last bucket is open-ended."""
    if width <= 0 or max_speed <= 0:
        raise ValueError("bucket width and max speed must be positive")
    n = int(round(max_speed / width))
    if not math.isclose(n * width, max_speed, rel_tol=1e-9):
        raise ValueError(f"max_speed {max_speed} is not a multiple of bucket width {width}")
    # rounded so that e.g. the 1.2 m/s edge is the double nearest 1.2, not 3 * 0.4
    return np.round(np.arange(n + 1) * width, 9)


def speed_bucket(speed, width: float = BUCKET_WIDTH, max_speed: float = MAX_SPEED):
    edges = bucket_edges(width, max_speed)
    idx = np.searchsorted(edges, np.asarray(speed, dtype=np.float64), side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


# -- Threeway EPE ------------------------------------------------------------


@dataclass(frozen=True)
class ThreewayResult:
    fg_dynamic_epe: float | None
    fg_static_epe: float | None
    bg_static_epe: float | None
    counts: Mapping[str, int]

    @property
    def values(self) -> dict[str, float | None]:
        return {FG_DYNAMIC: self.fg_dynamic_epe, FG_STATIC: self.fg_static_epe, BG_STATIC: self.bg_static_epe}

    @property
    def mean(self) -> float | None:
        defined = [v for v in self.values.values() if v is not None]
        if not defined:
            return None
        return math.fsum(defined) / len(defined)

    @property
    def undefined(self) -> list[str]:
        return [k for k, v in self.values.items() if v is None]

    def to_dict(self) -> dict:
        return {
            "categories": {k: {"epe": v, "count": self.counts[k]} for k, v in self.values.items()},
            "mean": self.mean,
            "undefined": self.undefined,
        }


def threeway_category(gt: GroundTruthFlow, dynamic_speed: float = THREEWAY_DYNAMIC_SPEED) -> np.ndarray:
    """0 = foreground dynamic, 1 = foreground static, 2 = background static."""
    background = gt.class_index == gt.classes.index(BACKGROUND)
    cat = np.where(gt.speed > dynamic_speed, 0, 1)
    return np.where(background, 2, cat).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ThreewayAccumulator:
    """Mergeable per-category counts and exact EPE sums."""

    counts: tuple[int, int, int] = (0, 0, 0)
    epe_fixed: tuple[int, int, int] = (0, 0, 0)
    dynamic_speed: float = THREEWAY_DYNAMIC_SPEED

    def add(self, pred: FlowField, gt: GroundTruthFlow) -> ThreewayAccumulator:
        sel = _selection(pred, gt, None)
        cat = threeway_category(gt, self.dynamic_speed)[sel]
        epe = endpoint_errors(pred, gt)[sel]
        counts, epe_fixed, _ = kernels.accumulate_cells(cat, epe, np.zeros_like(epe), 3)
        return self.merge(ThreewayAccumulator(tuple(int(c) for c in counts), tuple(epe_fixed), self.dynamic_speed))

    def merge(self, other: ThreewayAccumulator) -> ThreewayAccumulator:
        if other.dynamic_speed != self.dynamic_speed:
            raise ValueError("cannot merge Threeway accumulators with different speed splits")
        return ThreewayAccumulator(
            tuple(a + b for a, b in zip(self.counts, other.counts)),
            tuple(a + b for a, b in zip(self.epe_fixed, other.epe_fixed)),
            self.dynamic_speed,
        )

    __add__ = merge

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ThreewayAccumulator)
            and self.counts == other.counts
            and self.epe_fixed == other.epe_fixed
            and self.dynamic_speed == other.dynamic_speed
        )

    def result(self) -> ThreewayResult:
        avgs = [s / (kernels.FIXED_ONE * c) if c else None for s, c in zip(self.epe_fixed, self.counts)]
        res = ThreewayResult(*avgs, counts=dict(zip(THREEWAY_CATEGORIES, self.counts)))
        if res.undefined:
            warnings.warn(f"Threeway categories without points: {', '.join(res.undefined)}; "
                          "mean taken over the remaining categories", stacklevel=2)
        return res


def threeway_epe(pred: FlowField, gt: GroundTruthFlow, dynamic_speed: float = THREEWAY_DYNAMIC_SPEED) -> ThreewayResult:
    return ThreewayAccumulator(dynamic_speed=dynamic_speed).add(pred, gt).result()


# -- Bucket Normalized EPE -------------------------------------------------------


def _fixed_to_float(values: np.ndarray) -> np.ndarray:
    return np.array([[v / kernels.FIXED_ONE for v in row] for row in values], dtype=np.float64).reshape(values.shape)


@dataclass(frozen=True, eq=False)
class BucketMatrix:
    """Per (class, speed bucket) point count, summed EPE and summed GT displacement."""

    classes: tuple[str, ...]
    dt: float
    counts: np.ndarray
    epe_fixed: np.ndarray
    disp_fixed: np.ndarray
    bucket_width: float = BUCKET_WIDTH
    max_speed: float = MAX_SPEED

    @classmethod
    def empty(
        cls,
        classes: Sequence[str],
        dt: float = DEFAULT_DT,
        bucket_width: float = BUCKET_WIDTH,
        max_speed: float = MAX_SPEED,
    ) -> BucketMatrix:
        shape = (len(classes), len(bucket_edges(bucket_width, max_speed)))
        zeros = np.zeros(shape, dtype=object)
        zeros[...] = 0
        return cls(tuple(classes), dt, np.zeros(shape, dtype=np.int64), zeros, zeros.copy(), bucket_width, max_speed)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "classes", tuple(self.classes))
        if BACKGROUND not in self.classes:
            raise ValueError("taxonomy must include BACKGROUND")
        shape = (len(self.classes), len(bucket_edges(self.bucket_width, self.max_speed)))
        for name in ("counts", "epe_fixed", "disp_fixed"):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @property
    def n_buckets(self) -> int:
        return self.counts.shape[1]

    @property
    def edges(self) -> np.ndarray:
        return bucket_edges(self.bucket_width, self.max_speed)

    @property
    def epe_sum(self) -> np.ndarray:
        return _fixed_to_float(self.epe_fixed)

    @property
    def gt_disp_sum(self) -> np.ndarray:
        return _fixed_to_float(self.disp_fixed)

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    def _check_compatible(self, other: BucketMatrix) -> None:
        if self.dt != other.dt:
            raise ValueError(f"dt mismatch: {self.dt} vs {other.dt}")
        if self.classes != other.classes:
            raise ValueError(f"taxonomy mismatch: {self.classes} vs {other.classes}")
        if (self.bucket_width, self.max_speed) != (other.bucket_width, other.max_speed):
            raise ValueError("bucket layout mismatch")

    def merge(self, other: BucketMatrix) -> BucketMatrix:
        self._check_compatible(other)
        return replace(
            self,
            counts=self.counts + other.counts,
            epe_fixed=self.epe_fixed + other.epe_fixed,
            disp_fixed=self.disp_fixed + other.disp_fixed,
        )

    __add__ = merge

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BucketMatrix):
            return NotImplemented
        return (
            self.classes == other.classes
            and self.dt == other.dt
            and (self.bucket_width, self.max_speed) == (other.bucket_width, other.max_speed)
            and np.array_equal(self.counts, other.counts)
            and self.epe_fixed.tolist() == other.epe_fixed.tolist()
            and self.disp_fixed.tolist() == other.disp_fixed.tolist()
        )

    def accumulate(self, pred: FlowField, gt: GroundTruthFlow, mask: np.ndarray | None = None) -> BucketMatrix:
        if gt.dt != self.dt:
            raise ValueError(f"ground truth dt {gt.dt} does not match matrix dt {self.dt}")
        if gt.classes != self.classes:
            raise ValueError(f"ground truth taxonomy {gt.classes} does not match {self.classes}")
        sel = _selection(pred, gt, mask)
        if not sel.any():
            return self
        epe = endpoint_errors(pred, gt)[sel]
        disp = np.linalg.norm(gt.flow.vectors[sel], axis=1)
        buckets = speed_bucket(gt.speed[sel], self.bucket_width, self.max_speed)
        cells = gt.class_index[sel] * self.n_buckets + buckets
        counts, epe_fixed, disp_fixed = kernels.accumulate_cells(cells, epe, disp, self.counts.size)
        shape = self.counts.shape
        frame = replace(
            self,
            counts=counts.reshape(shape),
            epe_fixed=np.array(epe_fixed, dtype=object).reshape(shape),
            disp_fixed=np.array(disp_fixed, dtype=object).reshape(shape),
        )
        return self.merge(frame)

    def to_dict(self) -> dict:
        rows = {}
        for ci, name in enumerate(self.classes):
            rows[name] = [
                {
                    "count": int(self.counts[ci, b]),
                    "epe_sum": self.epe_fixed[ci, b] / kernels.FIXED_ONE,
                    "gt_disp_sum": self.disp_fixed[ci, b] / kernels.FIXED_ONE,
                    "epe_sum_fixed": int(self.epe_fixed[ci, b]),
                    "gt_disp_sum_fixed": int(self.disp_fixed[ci, b]),
                }
                for b in range(self.n_buckets)
            ]
        return {
            "classes": list(self.classes),
            "dt": self.dt,
            "bucket_width": self.bucket_width,
            "max_speed": self.max_speed,
            "bucket_lower_edges": self.edges.tolist(),
            "fixed_point_bits": kernels.FIXED_BITS,
            "cells": rows,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> BucketMatrix:
        if d.get("fixed_point_bits", kernels.FIXED_BITS) != kernels.FIXED_BITS:
            raise ValueError("stored matrix uses a different fixed-point scale")
        m = cls.empty(d["classes"], d["dt"], d["bucket_width"], d["max_speed"])
        counts = m.counts.copy()
        epe = m.epe_fixed.copy()
        disp = m.disp_fixed.copy()
        for ci, name in enumerate(m.classes):
            for b, cell in enumerate(d["cells"][name]):
                counts[ci, b] = cell["count"]
                epe[ci, b] = int(cell["epe_sum_fixed"])
                disp[ci, b] = int(cell["gt_disp_sum_fixed"])
        return replace(m, counts=counts, epe_fixed=epe, disp_fixed=disp)


def accumulate_bucket_matrix(pred: FlowField, gt: GroundTruthFlow, existing: BucketMatrix) -> BucketMatrix:
    return existing.accumulate(pred, gt)


@dataclass(frozen=True)
class BucketRow:
    index: int
    lower: float
    upper: float | None
    count: int
    average_epe: float | None
    average_speed: float | None
    normalized_epe: float | None


@dataclass(frozen=True)
class ClassSummary:
    name: str
    static_epe: float | None
    dynamic_normalized_epe: float | None
    static_count: int = 0
    dynamic_count: int = 0
    buckets: tuple[BucketRow, ...] = ()

    def to_dict(self) -> dict:
        return {
            "static_epe": self.static_epe,
            "dynamic_normalized_epe": self.dynamic_normalized_epe,
            "static_count": self.static_count,
            "dynamic_count": self.dynamic_count,
            "buckets": [row.__dict__ for row in self.buckets],
        }


def summarize_buckets(m: BucketMatrix) -> dict[str, ClassSummary]:
    edges = m.edges
    out = {}
    for ci, name in enumerate(m.classes):
        rows = []
        normalized = []
        for b in range(m.n_buckets):
            count = int(m.counts[ci, b])
            epe, disp = m.epe_fixed[ci, b], m.disp_fixed[ci, b]
            avg_epe = epe / (kernels.FIXED_ONE * count) if count else None
            avg_speed = disp / (kernels.FIXED_ONE * count) / m.dt if count else None
            norm = None
            if b > 0 and count and disp > 0:
                # (epe_sum / n) / (disp_sum / n); exact ratio of the fixed-point sums
                norm = epe / disp
                normalized.append(norm)
            upper = float(edges[b + 1]) if b + 1 < len(edges) else None
            rows.append(BucketRow(b, float(edges[b]), upper, count, avg_epe, avg_speed, norm))
        static_count = int(m.counts[ci, 0])
        static = rows[0].average_epe
        dynamic = None
        if name != BACKGROUND and normalized:
            dynamic = math.fsum(normalized) / len(normalized)
        out[name] = ClassSummary(name, static, dynamic, static_count, int(m.counts[ci, 1:].sum()), tuple(rows))
    return out


@dataclass(frozen=True)
class MeanSummary:
    mean_static_epe: float | None
    mean_static_epe_foreground: float | None
    mean_dynamic_normalized_epe: float | None
    static_classes: tuple[str, ...]
    dynamic_classes: tuple[str, ...]

    @property
    def tuple(self) -> tuple[float | None, float | None]:
        return (self.mean_static_epe, self.mean_dynamic_normalized_epe)

    def to_dict(self) -> dict:
        return {
            "mean_static_epe": self.mean_static_epe,
            "mean_static_epe_foreground": self.mean_static_epe_foreground,
            "mean_dynamic_normalized_epe": self.mean_dynamic_normalized_epe,
            "static_classes": list(self.static_classes),
            "dynamic_classes": list(self.dynamic_classes),
        }


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def mean_summary(per_class: Mapping[str, ClassSummary] | Iterable[ClassSummary]) -> MeanSummary:
    """Unweighted means over classes with defined values.

    ``mean_static_epe`` averages every class with a static value, BACKGROUND
    included; ``mean_static_epe_foreground`` leaves BACKGROUND out.
    """
    summaries = list(per_class.values()) if isinstance(per_class, Mapping) else list(per_class)
    static = [s for s in summaries if s.static_epe is not None]
    fg_static = [s for s in static if s.name != BACKGROUND]
    dynamic = [s for s in summaries if s.dynamic_normalized_epe is not None and s.name != BACKGROUND]
    return MeanSummary(
        _mean([s.static_epe for s in static]),
        _mean([s.static_epe for s in fg_static]),
        _mean([s.dynamic_normalized_epe for s in dynamic]),
        tuple(s.name for s in static),
        tuple(s.name for s in dynamic),
    )


def rank_methods(results: Mapping[str, MeanSummary]) -> list[str]:
    """Method names ordered by mean Dynamic Normalized EPE, best first; undefined last."""
    return sorted(
        results,
        key=lambda k: (results[k].mean_dynamic_normalized_epe is None, results[k].mean_dynamic_normalized_epe or 0.0, k),
    )


# -- semantics-free size buckets ---------------------------------------------


def size_class(volume: float) -> str:
    if volume < SMALL_MAX_VOLUME:
        return SMALL
    if volume < MEDIUM_MAX_VOLUME:
        return MEDIUM
    return LARGE


def size_bucket_classes(gt_boxes: Iterable[Box3D]) -> list[Box3D]:
    """Relabel boxes as SMALL / MEDIUM / LARGE by volume."""
    return [replace(b, class_id=size_class(b.volume)) for b in gt_boxes]
