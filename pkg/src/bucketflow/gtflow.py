"""Ground-truth rigid flow from annotated box tracks.

Every point inside a tracked box at t is carried rigidly by that box's
motion to t+1; points outside every box are static background with exactly
zero flow. All clouds here are in the ego-compensated global frame.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .core import (
    DEFAULT_CLASS_MAP,
    Box3D,
    ClassMap,
    FlowField,
    PointCloud,
    SE3Pose,
    rigid_box_flow,
)

DEFAULT_MAX_RADIUS = 35.0
GT_MARGIN = 0.0


@dataclass(frozen=True, eq=False)
class AnnotatedFrame:
    cloud: PointCloud
    boxes: tuple[Box3D, ...]
    ego_pose: SE3Pose
    dt_to_next: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.dt_to_next <= 0:
            raise ValueError("dt_to_next must be positive")
        if any(b.track_id is None for b in self.boxes):
            raise ValueError("every annotated box needs a track_id")

    @property
    def ego_position(self) -> np.ndarray:
        return self.ego_pose.translation


@dataclass(frozen=True, eq=False)
class GroundTruthFlow:
    """Per-point ground truth. ``class_index`` indexes into ``classes``."""

    flow: FlowField
    class_index: np.ndarray
    classes: tuple[str, ...]
    speed: np.ndarray
    eval_mask: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        n = len(self.flow)
        for name in ("class_index", "speed", "eval_mask"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match flow length {n}")
        object.__setattr__(self, "classes", tuple(self.classes))

    def __len__(self) -> int:
        return len(self.flow)

    @property
    def class_per_point(self) -> np.ndarray:
        return np.asarray(self.classes, dtype=object)[self.class_index]

    @property
    def selected(self) -> np.ndarray:
        """Points that count in metrics: valid and inside the evaluation mask."""
        return self.flow.valid & self.eval_mask

    def with_eval_mask(self, mask: np.ndarray) -> GroundTruthFlow:
        return GroundTruthFlow(self.flow, self.class_index, self.classes, self.speed, np.asarray(mask, bool), self.dt)

    @classmethod
    def from_flow(
        cls,
        flow: FlowField,
        class_index: np.ndarray,
        classes: Sequence[str],
        dt: float,
        eval_mask: np.ndarray | None = None,
    ) -> GroundTruthFlow:
        """Build from stored vectors, recomputing speed as |flow| / dt."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        speed = np.linalg.norm(flow.vectors, axis=1) / dt
        speed[~flow.valid] = 0.0
        mask = np.ones(len(flow), dtype=bool) if eval_mask is None else np.asarray(eval_mask, bool)
        return cls(flow, np.asarray(class_index, dtype=np.int64), tuple(classes), speed, mask, dt)


def transform_cloud_to_global(cloud: PointCloud, ego_pose: SE3Pose) -> PointCloud:
    return PointCloud(ego_pose.apply(cloud.points), cloud.frame_id, cloud.timestamp)


def radius_mask(cloud: PointCloud | np.ndarray, ego_position: Sequence[float], max_radius: float = DEFAULT_MAX_RADIUS) -> np.ndarray:
    """Points within ``max_radius`` of the ego in the ground plane (z ignored)."""
    if max_radius <= 0:
        raise ValueError("max_radius must be positive")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    ego = np.asarray(ego_position, dtype=np.float64)
    return np.hypot(pts[:, 0] - ego[0], pts[:, 1] - ego[1]) <= max_radius


def _check_unique_tracks(boxes: Iterable[Box3D], which: str) -> None:
    dupes = [tid for tid, n in Counter(b.track_id for b in boxes).items() if n > 1]
    if dupes:
        raise ValueError(f"duplicate track_id(s) {sorted(dupes)} in {which}")


def gt_priority(box: Box3D) -> tuple:
    # smallest volume wins overlaps; track id keeps the order total
    return (box.volume, box.track_id)


def generate_gt_flow(
    frame_t: AnnotatedFrame,
    frame_t1: AnnotatedFrame,
    class_map: ClassMap = DEFAULT_CLASS_MAP,
    max_radius: float | None = DEFAULT_MAX_RADIUS,
) -> GroundTruthFlow:
    _check_unique_tracks(frame_t.boxes, "frame t")
    _check_unique_tracks(frame_t1.boxes, "frame t+1")
    points = frame_t.cloud.points
    n = len(points)
    dt = frame_t.dt_to_next

    boxes = sorted(frame_t.boxes, key=gt_priority)
    successors = {b.track_id: b for b in frame_t1.boxes}
    owner = kernels.assign_points_to_boxes(points, boxes, GT_MARGIN)

    vectors = np.zeros((n, 3))
    valid = np.ones(n, dtype=bool)
    class_index = np.zeros(n, dtype=np.int64)
    for b_idx, box in enumerate(boxes):
        sel = owner == b_idx
        if not sel.any():
            continue
        class_index[sel] = class_map.index(class_map.lookup(box.class_id))
        nxt = successors.get(box.track_id)
        if nxt is None:
            valid[sel] = False
        else:
            vectors[sel] = rigid_box_flow(box, nxt, points[sel])

    speed = np.linalg.norm(vectors, axis=1) / dt
    speed[~valid] = 0.0
    if max_radius is None:
        eval_mask = np.ones(n, dtype=bool)
    else:
        eval_mask = radius_mask(points, frame_t.ego_position, max_radius)
    return GroundTruthFlow(FlowField(vectors, valid), class_index, class_map.meta_classes, speed, eval_mask, dt)


def class_point_histogram(flows: Sequence[GroundTruthFlow], respect_eval_mask: bool = False) -> dict[str, int]:
    """Valid-point count per meta-class across ``flows``."""
    if not flows:
        raise ValueError("need at least one ground-truth frame")
    classes = flows[0].classes
    counts = np.zeros(len(classes), dtype=np.int64)
    for gt in flows:
        if gt.classes != classes:
            raise ValueError("ground-truth frames use different taxonomies")
        sel = gt.selected if respect_eval_mask else gt.flow.valid
        counts += np.bincount(gt.class_index[sel], minlength=len(classes))
    return {c: int(k) for c, k in zip(classes, counts)}
