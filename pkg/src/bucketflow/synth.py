"""Scripted synthetic scenes with exact ground truth, plus naive reference oracles.

Object points are sampled once on the (slightly inset) surface of each box
and carried rigidly by the scripted pose, so ground-truth flow is known in
closed form. Background points are static in the global frame and are kept
clear of every scripted box so tracked-box margins never touch them.

There is no occlusion or ray casting.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

import numpy as np

from . import kernels
from .core import (
    BACKGROUND,
    DEFAULT_CLASS_MAP,
    Box3D,
    ClassMap,
    FlowField,
    PointCloud,
    SE3Pose,
    wrap_angle,
)
from .gtflow import DEFAULT_MAX_RADIUS, AnnotatedFrame, GroundTruthFlow, generate_gt_flow
from .metrics import BUCKET_WIDTH, MAX_SPEED, THREEWAY_DYNAMIC_SPEED, ClassSummary, ThreewayResult
from .trackflow import SensorFrame
from .tracker import bev_polygon

TYPICAL_DIMS = {
    "REGULAR_VEHICLE": (4.5, 2.0, 1.6),
    "BUS": (12.0, 2.6, 3.2),
    "BOX_TRUCK": (7.0, 2.5, 3.0),
    "PEDESTRIAN": (0.6, 0.6, 1.75),
    "BICYCLIST": (1.8, 0.7, 1.7),
}


class SceneOverlapWarning(UserWarning):
    """Two scripted boxes overlap in some frame."""


@dataclass(frozen=True)
class ObjectScript:
    class_name: str
    dims: tuple[float, float, float]
    poses: tuple[tuple[tuple[float, float, float], float], ...]
    point_count: int = 100
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.point_count < 0:
            raise ValueError("point_count must be non-negative")
        if min(self.dims) <= 0:
            raise ValueError("dims must be positive")
        object.__setattr__(self, "poses", tuple((tuple(map(float, c)), float(y)) for c, y in self.poses))

    def box(self, frame: int, track_id: int) -> Box3D:
        center, yaw = self.poses[frame]
        return Box3D(center, self.dims, yaw, self.class_name, 1.0, track_id)


def linear_script(
    class_name: str,
    start: Sequence[float],
    velocity: Sequence[float],
    n_frames: int,
    dt: float = 0.1,
    dims: Sequence[float] | None = None,
    yaw: float | None = None,
    point_count: int = 100,
) -> ObjectScript:
    """Constant-velocity object. Heading follows the velocity unless ``yaw`` is given."""
    dims = tuple(dims or TYPICAL_DIMS[class_name])
    v = np.asarray(velocity, dtype=np.float64)
    if yaw is None:
        yaw = math.atan2(v[1], v[0]) if np.hypot(v[0], v[1]) > 0 else 0.0
    start = np.asarray(start, dtype=np.float64)
    if len(start) == 2:
        start = np.array([start[0], start[1], dims[2] / 2.0])
    poses = tuple((tuple(start + v * (k * dt)), yaw) for k in range(n_frames))
    return ObjectScript(class_name, dims, poses, point_count)


def arc_script(
    class_name: str,
    turn_center: Sequence[float],
    radius: float,
    start_angle: float,
    speed: float,
    n_frames: int,
    dt: float = 0.1,
    dims: Sequence[float] | None = None,
    point_count: int = 100,
) -> ObjectScript:
    """Object driving counter-clockwise on a circle, heading tangent to it."""
    dims = tuple(dims or TYPICAL_DIMS[class_name])
    omega = speed / radius
    poses = []
    for k in range(n_frames):
        a = start_angle + omega * k * dt
        center = (turn_center[0] + radius * math.cos(a), turn_center[1] + radius * math.sin(a), dims[2] / 2.0)
        poses.append((center, a + math.pi / 2))
    return ObjectScript(class_name, dims, tuple(poses), point_count)


def sample_box_surface(dims: Sequence[float], n: int, rng: np.random.Generator, inset: float = 0.02) -> np.ndarray:
    """``n`` points uniformly on the surface of a box shrunk by ``inset`` per side, box frame."""
    half = np.maximum(np.asarray(dims, dtype=np.float64) / 2.0 - inset, 1e-3)
    l, w, h = 2 * half
    areas = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 3))
    pts = uv * half
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def generate_scene(
    scripts: Sequence[ObjectScript],
    background_points: int,
    n_frames: int,
    dt: float = 0.1,
    seed: int = 0,
    ego_velocity: Sequence[float] = (0.0, 0.0, 0.0),
    extent: float = 40.0,
    clearance: float = 0.25,
    surface_inset: float = 0.02,
) -> list[AnnotatedFrame]:
    if n_frames < 1 or dt <= 0:
        raise ValueError("need at least one frame and positive dt")
    for s in scripts:
        if len(s.poses) != n_frames:
            raise ValueError(f"{s.class_name} script has {len(s.poses)} poses, expected {n_frames}")
    root = np.random.SeedSequence(seed)
    bg_seq, *obj_seqs = root.spawn(1 + len(scripts))

    boxes = [[s.box(k, tid) for tid, s in enumerate(scripts)] for k in range(n_frames)]
    _warn_overlaps(boxes)

    ego_v = np.asarray(ego_velocity, dtype=np.float64)
    ego_poses = [SE3Pose.from_yaw(0.0, ego_v * (k * dt)) for k in range(n_frames)]
    background = _sample_background(
        background_points, np.random.default_rng(bg_seq), [b for fb in boxes for b in fb],
        extent, float(ego_v[0]) * dt * (n_frames - 1), clearance,
    )

    local = []
    for s, seq in zip(scripts, obj_seqs):
        rng = np.random.default_rng(s.seed if s.seed is not None else seq)
        local.append(sample_box_surface(s.dims, s.point_count, rng, surface_inset))

    frames = []
    for k in range(n_frames):
        parts = [background] + [b.pose.apply(pts) for b, pts in zip(boxes[k], local)]
        cloud = PointCloud(np.vstack(parts), frame_id=k, timestamp=k * dt)
        frames.append(AnnotatedFrame(cloud, tuple(boxes[k]), ego_poses[k], dt))
    return frames


def overlapping_pairs(boxes_per_frame: Sequence[Sequence[Box3D]], margin: float = 0.0) -> list[tuple[int, int, int]]:
    """(frame, i, j) for every pair of boxes whose margin-grown volumes intersect."""
    hits = []
    for k, boxes in enumerate(boxes_per_frame):
        polys = [bev_polygon(b).buffer(margin) for b in boxes]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                zi, zj = boxes[i].center[2], boxes[j].center[2]
                z_gap = abs(zi - zj) - (boxes[i].dims[2] + boxes[j].dims[2]) / 2.0
                if z_gap <= 2 * margin and polys[i].intersects(polys[j]):
                    hits.append((k, i, j))
    return hits


def _warn_overlaps(boxes_per_frame: Sequence[Sequence[Box3D]]) -> None:
    for k, i, j in overlapping_pairs(boxes_per_frame):
        warnings.warn(f"scripted boxes {i} and {j} overlap in frame {k}", SceneOverlapWarning, stacklevel=3)


def _sample_background(
    n: int, rng: np.random.Generator, boxes: Sequence[Box3D], extent: float, travel: float, clearance: float
) -> np.ndarray:
    kept = np.zeros((0, 3))
    lo = np.array([-extent + min(travel, 0.0), -extent, 0.0])
    hi = np.array([extent + max(travel, 0.0), extent, 3.0])
    while len(kept) < n:
        batch = rng.uniform(lo, hi, size=(max(2 * (n - len(kept)), 16), 3))
        # most lidar returns hit the ground
        ground = rng.random(len(batch)) < 0.7
        batch[ground, 2] = 0.0
        clear = kernels.assign_points_to_boxes(batch, boxes, clearance) < 0
        kept = np.vstack([kept, batch[clear]])
    return kept[:n]


def scene_gt_flows(
    frames: Sequence[AnnotatedFrame], class_map: ClassMap = DEFAULT_CLASS_MAP, max_radius: float | None = DEFAULT_MAX_RADIUS
) -> list[GroundTruthFlow]:
    return [generate_gt_flow(a, b, class_map, max_radius) for a, b in zip(frames[:-1], frames[1:])]


def to_sensor_frames(frames: Sequence[AnnotatedFrame], detections: Sequence[Sequence[Box3D]] | None = None) -> list[SensorFrame]:
    """Express each cloud in its sensor frame and attach detections."""
    out = []
    for k, f in enumerate(frames):
        local = PointCloud(f.ego_pose.inverse().apply(f.cloud.points), f.cloud.frame_id, f.cloud.timestamp)
        dets = None if detections is None else tuple(detections[k])
        out.append(SensorFrame(local, f.ego_pose, dets))
    return out


def random_scene(
    seed: int,
    n_frames: int = 4,
    dt: float = 0.1,
    max_objects: int = 6,
    background_points: int = 2000,
    points_per_object: tuple[int, int] = (20, 300),
    min_gap: float = 0.5,
) -> list[AnnotatedFrame]:
    """A random scene with at least one moving object and no boxes closer than ``min_gap``."""
    rng = np.random.default_rng(seed)
    while True:
        scripts = _random_scripts(rng, n_frames, dt, max_objects, points_per_object)
        boxes = [[s.box(k, tid) for tid, s in enumerate(scripts)] for k in range(n_frames)]
        if not overlapping_pairs(boxes, min_gap / 2.0):
            return generate_scene(scripts, background_points, n_frames, dt, seed=seed)


def _random_scripts(rng, n_frames, dt, max_objects, points_per_object) -> list[ObjectScript]:
    classes = list(TYPICAL_DIMS)
    n_obj = int(rng.integers(1, max_objects + 1))
    scripts = []
    for i, slot in enumerate(rng.permutation(16)[:n_obj]):
        cls = classes[int(rng.integers(len(classes)))]
        # 4 x 4 grid of start cells, all inside the default 35 m radius
        start = ((slot % 4) * 16.0 - 24.0, (slot // 4) * 16.0 - 24.0)
        moving = i == 0 or rng.random() < 0.7
        top = 2.0 if cls == "PEDESTRIAN" else 15.0
        speed = rng.uniform(0.45, top) if moving else 0.0
        heading = rng.uniform(-math.pi, math.pi)
        npts = int(rng.integers(*points_per_object))
        if moving and rng.random() < 0.3 and cls != "BUS":
            radius = rng.uniform(15.0, 40.0)
            a0 = heading - math.pi / 2
            center = (start[0] - radius * math.cos(a0), start[1] - radius * math.sin(a0))
            scripts.append(arc_script(cls, center, radius, a0, speed, n_frames, dt, point_count=npts))
        else:
            v = (speed * math.cos(heading), speed * math.sin(heading), 0.0)
            scripts.append(linear_script(cls, start, v, n_frames, dt, yaw=heading, point_count=npts))
    return scripts


def imbalanced_scene(seed: int = 0, n_frames: int = 3, dt: float = 0.1) -> list[AnnotatedFrame]:
    """Point budget skewed like real driving logs: ~15% vehicles, well under 1% pedestrians."""
    scripts = [
        linear_script("REGULAR_VEHICLE", (-20.0, -8.0), (10.0, 0.0, 0.0), n_frames, dt, point_count=400),
        linear_script("REGULAR_VEHICLE", (0.0, 8.0), (-8.0, 0.0, 0.0), n_frames, dt, point_count=400),
        linear_script("REGULAR_VEHICLE", (15.0, -15.0), (0.0, 0.0, 0.0), n_frames, dt, point_count=300),
        linear_script("BUS", (-10.0, 20.0), (6.0, 0.0, 0.0), n_frames, dt, point_count=400),
        linear_script("PEDESTRIAN", (5.0, -4.0), (0.0, 1.3, 0.0), n_frames, dt, point_count=30),
        linear_script("PEDESTRIAN", (-5.0, 4.0), (1.1, 0.0, 0.0), n_frames, dt, point_count=30),
        linear_script("BICYCLIST", (20.0, 0.0), (0.0, 4.0, 0.0), n_frames, dt, point_count=40),
    ]
    return generate_scene(scripts, 8400, n_frames, dt, seed=seed)


# -- detection noise ---------------------------------------------------------


@dataclass(frozen=True)
class DetectionNoise:
    center_std: float = 0.0
    yaw_std: float = 0.0
    dim_std: float = 0.0
    dropout: float = 0.0
    false_positive_rate: float = 0.0
    tp_confidence: tuple[float, float] = (1.0, 1.0)
    fp_confidence: tuple[float, float] = (0.05, 0.2)
    fp_classes: tuple[str, ...] = ("REGULAR_VEHICLE", "PEDESTRIAN")
    extent: float = 35.0

    def __post_init__(self) -> None:
        if min(self.center_std, self.yaw_std, self.dim_std, self.false_positive_rate) < 0:
            raise ValueError("noise scales must be non-negative")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must lie in [0, 1]")
        for lo, hi in (self.tp_confidence, self.fp_confidence):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError("confidence bands must satisfy 0 <= lo <= hi <= 1")


def perturb_detections(
    gt_boxes: Sequence[Sequence[Box3D]], noise: DetectionNoise = DetectionNoise(), seed: int = 0
) -> list[list[Box3D]]:
    """Turn ground-truth boxes into detector-like output.

    Every box consumes the same random draws whether or not it is dropped,
    so for a fixed seed a higher dropout keeps a subset of the same
    detections. False positives come from an independent stream.
    """
    tp_seq, fp_seq = np.random.SeedSequence(seed).spawn(2)
    tp_rng, fp_rng = np.random.default_rng(tp_seq), np.random.default_rng(fp_seq)
    out = []
    for frame_boxes in gt_boxes:
        dets = []
        for b in frame_boxes:
            u = tp_rng.random()
            dc = tp_rng.normal(0.0, 1.0, 3) * noise.center_std
            dyaw = tp_rng.normal() * noise.yaw_std
            dd = tp_rng.normal(0.0, 1.0, 3) * noise.dim_std
            conf = tp_rng.uniform(*noise.tp_confidence)
            if u < noise.dropout:
                continue
            dets.append(Box3D(
                tuple(b.center_array + dc),
                tuple(np.maximum(np.asarray(b.dims) + dd, 0.05)),
                wrap_angle(b.yaw + dyaw),
                b.class_id,
                float(conf),
            ))
        for _ in range(fp_rng.poisson(noise.false_positive_rate)):
            cls = noise.fp_classes[int(fp_rng.integers(len(noise.fp_classes)))]
            dims = TYPICAL_DIMS.get(cls, (1.0, 1.0, 1.0))
            xy = fp_rng.uniform(-noise.extent, noise.extent, 2)
            dets.append(Box3D(
                (xy[0], xy[1], dims[2] / 2.0),
                dims,
                fp_rng.uniform(-math.pi, math.pi),
                cls,
                float(fp_rng.uniform(*noise.fp_confidence)),
            ))
        out.append(dets)
    return out


# -- canned predictors ---------------------------------------------------------


def canned_predictor(
    kind: str, gt: GroundTruthFlow, alpha: float | None = None, vector: Sequence[float] | None = None
) -> FlowField:
    vec = gt.flow.vectors
    if kind == "zero":
        out = np.zeros_like(vec)
    elif kind == "perfect":
        out = vec.copy()
    elif kind == "negated":
        out = -vec
    elif kind == "scaled":
        if alpha is None or not math.isfinite(alpha):
            raise ValueError("scaled predictor needs a finite alpha")
        out = alpha * vec
    elif kind == "constant":
        if vector is None:
            raise ValueError("constant predictor needs a vector")
        out = np.broadcast_to(np.asarray(vector, dtype=np.float64), vec.shape).copy()
    else:
        raise ValueError(f"unknown predictor kind {kind!r}")
    return FlowField(out)


# -- naive oracles -----------------------------------------------------------


def _oracle_bucket(speed: float, width: float, max_speed: float) -> int:
    # decimal comparison against the nominal edges, independent of bucket_edges()
    k = int(Decimal(repr(speed)) // Decimal(repr(width)))
    return min(k, int(Decimal(repr(max_speed)) / Decimal(repr(width))))


def _oracle_points(pred: FlowField, gt: GroundTruthFlow):
    for i in range(len(gt)):
        if not (gt.flow.valid[i] and gt.eval_mask[i] and pred.valid[i]):
            continue
        g = [float(x) for x in gt.flow.vectors[i]]
        p = [float(x) for x in pred.vectors[i]]
        epe = math.hypot(p[0] - g[0], p[1] - g[1], p[2] - g[2])
        yield i, gt.classes[gt.class_index[i]], epe, math.hypot(*g), float(gt.speed[i])


def oracle_bucket_metrics(
    pred: FlowField | Sequence[FlowField],
    gt: GroundTruthFlow | Sequence[GroundTruthFlow],
    width: float = BUCKET_WIDTH,
    max_speed: float = MAX_SPEED,
) -> dict[str, ClassSummary]:
    """Static EPE and Dynamic Normalized EPE by directly grouping points. Deliberately slow."""
    preds = [pred] if isinstance(pred, FlowField) else list(pred)
    gts = [gt] if isinstance(gt, GroundTruthFlow) else list(gt)
    groups: dict[tuple[str, int], list[tuple[float, float]]] = {}
    for p, g in zip(preds, gts):
        for _, cls, epe, disp, speed in _oracle_points(p, g):
            groups.setdefault((cls, _oracle_bucket(speed, width, max_speed)), []).append((epe, disp))
    out = {}
    for cls in gts[0].classes:
        static_pts = groups.get((cls, 0), [])
        static = sum(e for e, _ in static_pts) / len(static_pts) if static_pts else None
        normalized = []
        dyn_count = 0
        for (c, b), pts in groups.items():
            if c != cls or b == 0:
                continue
            dyn_count += len(pts)
            avg_epe = sum(e for e, _ in pts) / len(pts)
            avg_disp = sum(d for _, d in pts) / len(pts)
            normalized.append(avg_epe / avg_disp)
        dynamic = sum(normalized) / len(normalized) if normalized and cls != BACKGROUND else None
        out[cls] = ClassSummary(cls, static, dynamic, len(static_pts), dyn_count)
    return out


def oracle_threeway(
    pred: FlowField | Sequence[FlowField],
    gt: GroundTruthFlow | Sequence[GroundTruthFlow],
    dynamic_speed: float = THREEWAY_DYNAMIC_SPEED,
) -> ThreewayResult:
    preds = [pred] if isinstance(pred, FlowField) else list(pred)
    gts = [gt] if isinstance(gt, GroundTruthFlow) else list(gt)
    cats: dict[str, list[float]] = {"fd": [], "fs": [], "bs": []}
    for p, g in zip(preds, gts):
        for _, cls, epe, _, speed in _oracle_points(p, g):
            if cls == BACKGROUND:
                cats["bs"].append(epe)
            elif speed > dynamic_speed:
                cats["fd"].append(epe)
            else:
                cats["fs"].append(epe)
    avg = {k: (sum(v) / len(v) if v else None) for k, v in cats.items()}
    return ThreewayResult(
        avg["fd"], avg["fs"], avg["bs"],
        counts={"foreground_dynamic": len(cats["fd"]), "foreground_static": len(cats["fs"]),
                "background_static": len(cats["bs"])},
    )
