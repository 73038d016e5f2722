"""Scene flow via tracking: detections -> tracker -> rigid per-box flow."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .core import Box3D, FlowField, PointCloud, SE3Pose, rigid_box_flow
from .gtflow import transform_cloud_to_global
from .tracker import Tracker, TrackerConfig

log = logging.getLogger(__name__)

FLOW_MARGIN = 0.1


def filter_detections(dets: Sequence[Box3D], threshold: float) -> list[Box3D]:
    """Keep boxes with confidence >= threshold, preserving order."""
    return [d for d in dets if d.confidence >= threshold]


@dataclass(frozen=True, eq=False)
class TrackedFramePair:
    boxes_t: tuple[Box3D, ...]
    boxes_t1: tuple[Box3D, ...]
    cloud_t: PointCloud
    dt: float

    def __post_init__(self) -> None:
        for name in ("boxes_t", "boxes_t1"):
            boxes = tuple(getattr(self, name))
            ids = [b.track_id for b in boxes]
            if None in ids or len(set(ids)) != len(ids):
                raise ValueError(f"{name} must carry unique track ids")
            object.__setattr__(self, name, boxes)


def flow_priority(box: Box3D) -> tuple:
    return (box.volume, -box.confidence, box.track_id)


def tracks_to_flow(pair: TrackedFramePair, margin: float = FLOW_MARGIN) -> FlowField:
    """Rigid flow for points inside tracked boxes; exactly zero everywhere else."""
    points = pair.cloud_t.points
    vectors = np.zeros((len(points), 3))
    boxes = sorted(pair.boxes_t, key=flow_priority)
    successors = {b.track_id: b for b in pair.boxes_t1}
    owner = kernels.assign_points_to_boxes(points, boxes, margin)
    for b_idx, box in enumerate(boxes):
        nxt = successors.get(box.track_id)
        if nxt is None:
            continue
        sel = owner == b_idx
        if sel.any():
            vectors[sel] = rigid_box_flow(box, nxt, points[sel])
    return FlowField(vectors)


@dataclass(frozen=True, eq=False)
class SensorFrame:
    """One lidar sweep in the sensor frame, its ego pose, and detections (None if missing)."""

    cloud: PointCloud
    ego_pose: SE3Pose
    detections: tuple[Box3D, ...] | None = None


def track_sequence(frames: Sequence[SensorFrame], config: TrackerConfig = TrackerConfig()) -> list[list[Box3D]]:
    """Tracker output per frame after confidence filtering."""
    tracker = Tracker(config)
    tracked = []
    for frame in frames:
        dets = frame.detections
        if dets is None:
            log.warning("frame %d has no detections; treating as empty", frame.cloud.frame_id)
            dets = ()
        tracked.append(tracker.step(filter_detections(dets, config.confidence_threshold), frame.cloud.timestamp))
    log.info("tracked %d frames, %d track ids issued", len(frames), tracker.issued_ids)
    return tracked


def flows_from_tracks(
    frames: Sequence[SensorFrame], tracked: Sequence[Sequence[Box3D]], margin: float = FLOW_MARGIN
) -> list[FlowField]:
    """Flow for every consecutive frame pair; entry i describes motion from frame i to i+1."""
    if len(tracked) != len(frames):
        raise ValueError("need one list of tracked boxes per frame")
    flows = []
    for i in range(len(frames) - 1):
        cloud = transform_cloud_to_global(frames[i].cloud, frames[i].ego_pose)
        dt = frames[i + 1].cloud.timestamp - frames[i].cloud.timestamp
        pair = TrackedFramePair(tuple(tracked[i]), tuple(tracked[i + 1]), cloud, dt)
        flows.append(tracks_to_flow(pair, margin))
    return flows


def run_trackflow(
    frames: Sequence[SensorFrame], config: TrackerConfig = TrackerConfig(), margin: float = FLOW_MARGIN
) -> list[FlowField]:
    """Detections -> confidence filter -> tracker -> rigid per-box flow, for each frame pair."""
    return flows_from_tracks(frames, track_sequence(frames, config), margin)
