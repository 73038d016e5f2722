"""Constant-velocity Kalman multi-object tracker in the AB3DMOT style.

State layout is ``(x, y, z, yaw, l, w, h, vx, vy, vz)``; detections measure
the first seven entries. Association is class-gated greedy matching on
planar centroid distance by default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from shapely.geometry import Polygon

from .core import Box3D, wrap_angle

STATE_DIM = 10
MEAS_DIM = 7
YAW = 3
DIMS = slice(4, 7)
VEL = slice(7, 10)
MIN_DIM = 1e-3
_PSD_TOL = 1e-9

_H = np.hstack([np.eye(MEAS_DIM), np.zeros((MEAS_DIM, STATE_DIM - MEAS_DIM))])


class NumericalError(RuntimeError):
    """The filter covariance lost positive semi-definiteness."""


@dataclass(frozen=True)
class TrackerConfig:
    metric: str = "centroid"
    # centroid: max planar distance in meters; iou: min 3D IoU
    threshold: float = 2.0
    matcher: str = "greedy"
    max_misses: int = 3
    min_hits: int = 1
    confidence_threshold: float = 0.2
    box_source: str = "filtered"
    init_pos_std: float = 1.0
    init_yaw_std: float = 0.5
    init_dim_std: float = 1.0
    init_vel_std: float = 10.0
    process_pos_std: float = 0.05
    process_yaw_std: float = 0.05
    process_dim_std: float = 0.05
    process_vel_std: float = 0.5
    meas_pos_std: float = 0.1
    meas_yaw_std: float = 0.1
    meas_dim_std: float = 0.1

    def __post_init__(self) -> None:
        if self.metric not in ("centroid", "iou"):
            raise ValueError(f"unknown association metric {self.metric!r}")
        if self.matcher not in ("greedy", "hungarian"):
            raise ValueError(f"unknown matcher {self.matcher!r}")
        if self.box_source not in ("filtered", "detection"):
            raise ValueError(f"unknown box_source {self.box_source!r}")
        if self.threshold <= 0 or (self.metric == "iou" and self.threshold > 1):
            raise ValueError("association threshold must be positive (and at most 1 for IoU)")
        if self.max_misses < 0 or self.min_hits < 1:
            raise ValueError("max_misses must be >= 0 and min_hits >= 1")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if any(getattr(self, f.name) < 0 for f in fields(self) if f.name.endswith("_std")):
            raise ValueError("noise standard deviations must be non-negative")

    @property
    def gate(self) -> float:
        """Largest admissible association cost."""
        return self.threshold if self.metric == "centroid" else 1.0 - self.threshold

    def process_noise(self) -> np.ndarray:
        return np.diag(np.square([
            *[self.process_pos_std] * 3, self.process_yaw_std, *[self.process_dim_std] * 3, *[self.process_vel_std] * 3,
        ]))

    def measurement_noise(self) -> np.ndarray:
        return np.diag(np.square([*[self.meas_pos_std] * 3, self.meas_yaw_std, *[self.meas_dim_std] * 3]))

    def initial_covariance(self) -> np.ndarray:
        return np.diag(np.square([
            *[self.init_pos_std] * 3, self.init_yaw_std, *[self.init_dim_std] * 3, *[self.init_vel_std] * 3,
        ]))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> TrackerConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tracker config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> TrackerConfig:
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True, eq=False)
class KalmanTrack:
    state: np.ndarray
    covariance: np.ndarray
    track_id: int
    class_id: str
    confidence: float
    hits: int = 1
    misses: int = 0
    age: int = 1
    last_detection: Box3D | None = field(default=None, repr=False)

    @classmethod
    def from_detection(cls, det: Box3D, track_id: int, config: TrackerConfig) -> KalmanTrack:
        state = np.zeros(STATE_DIM)
        state[:3] = det.center
        state[YAW] = det.yaw
        state[DIMS] = det.dims
        return cls(state, config.initial_covariance(), track_id, det.class_id, det.confidence, last_detection=det)

    @property
    def velocity(self) -> np.ndarray:
        return self.state[VEL]

    def box(self) -> Box3D:
        s = self.state
        return Box3D(
            center=tuple(s[:3]),
            dims=tuple(np.maximum(s[DIMS], MIN_DIM)),
            yaw=float(s[YAW]),
            class_id=self.class_id,
            confidence=self.confidence,
            track_id=self.track_id,
        )


def transition_matrix(dt: float) -> np.ndarray:
    f = np.eye(STATE_DIM)
    f[0:3, 7:10] = dt * np.eye(3)
    return f


def _check_psd(p: np.ndarray) -> np.ndarray:
    p = 0.5 * (p + p.T)
    if not np.all(np.isfinite(p)):
        raise NumericalError("covariance contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(np.diag(p)))))
    if np.linalg.eigvalsh(p)[0] < -_PSD_TOL * scale:
        raise NumericalError("covariance is not positive semi-definite")
    return p


def kf_predict(track: KalmanTrack, dt: float, config: TrackerConfig = TrackerConfig()) -> KalmanTrack:
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = transition_matrix(dt)
    state = f @ track.state
    state[YAW] = wrap_angle(state[YAW])
    cov = _check_psd(f @ track.covariance @ f.T + config.process_noise())
    return replace(track, state=state, covariance=cov)


def yaw_innovation(track_yaw: float, measured_yaw: float) -> float:
    """Wrapped yaw residual; a heading off by more than 90 degrees is treated as flipped."""
    innov = wrap_angle(measured_yaw - track_yaw)
    if abs(innov) > math.pi / 2:
        innov = wrap_angle(innov + math.pi)
    return innov


def kf_update(track: KalmanTrack, detection: Box3D, config: TrackerConfig = TrackerConfig()) -> KalmanTrack:
    if detection.class_id != track.class_id:
        raise ValueError(f"detection class {detection.class_id!r} does not match track class {track.class_id!r}")
    z = np.array([*detection.center, detection.yaw, *detection.dims])
    innov = z - _H @ track.state
    innov[YAW] = yaw_innovation(track.state[YAW], detection.yaw)
    p = track.covariance
    r = config.measurement_noise()
    s = _H @ p @ _H.T + r
    # pinv keeps zero-noise configurations (singular S) well defined
    gain = p @ _H.T @ np.linalg.pinv(s, hermitian=True)
    state = track.state + gain @ innov
    state[YAW] = wrap_angle(state[YAW])
    state[DIMS] = np.maximum(state[DIMS], MIN_DIM)
    i_kh = np.eye(STATE_DIM) - gain @ _H
    cov = _check_psd(i_kh @ p @ i_kh.T + gain @ r @ gain.T)
    return replace(
        track,
        state=state,
        covariance=cov,
        confidence=detection.confidence,
        hits=track.hits + 1,
        misses=0,
        last_detection=detection,
    )


# -- association -------------------------------------------------------------


def bev_polygon(box: Box3D) -> Polygon:
    return Polygon(box.corners()[[0, 2, 6, 4], :2])


def iou_3d(a: Box3D, b: Box3D) -> float:
    inter_area = bev_polygon(a).intersection(bev_polygon(b)).area
    if inter_area <= 0:
        return 0.0
    za0, za1 = a.center[2] - a.dims[2] / 2, a.center[2] + a.dims[2] / 2
    zb0, zb1 = b.center[2] - b.dims[2] / 2, b.center[2] + b.dims[2] / 2
    inter = inter_area * max(0.0, min(za1, zb1) - max(za0, zb0))
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def association_costs(track_boxes: Sequence[Box3D], detections: Sequence[Box3D], metric: str = "centroid") -> np.ndarray:
    """(T, D) cost matrix; pairs of different class get ``inf``."""
    cost = np.full((len(track_boxes), len(detections)), np.inf)
    for ti, tb in enumerate(track_boxes):
        for di, db in enumerate(detections):
            if tb.class_id != db.class_id:
                continue
            if metric == "centroid":
                cost[ti, di] = math.hypot(tb.center[0] - db.center[0], tb.center[1] - db.center[1])
            else:
                cost[ti, di] = 1.0 - iou_3d(tb, db)
    return cost


def greedy_match(cost: np.ndarray, gate: float) -> list[tuple[int, int]]:
    """Repeatedly take the cheapest admissible pair; ties go to the lower detection, then track, index."""
    candidates = sorted(
        (float(cost[t, d]), d, t) for t, d in zip(*np.nonzero(np.isfinite(cost) & (cost <= gate)))
    )
    used_t, used_d, matches = set(), set(), []
    for _, d, t in candidates:
        if t in used_t or d in used_d:
            continue
        used_t.add(t)
        used_d.add(d)
        matches.append((int(t), int(d)))
    return sorted(matches)


def optimal_match(cost: np.ndarray, gate: float) -> list[tuple[int, int]]:
    """Minimum-total-cost assignment restricted to admissible pairs."""
    if cost.size == 0:
        return []
    admissible = np.isfinite(cost) & (cost <= gate)
    finite = cost[admissible]
    big = (finite.max() if finite.size else 0.0) * cost.size + 1.0
    rows, cols = linear_sum_assignment(np.where(admissible, cost, big))
    return sorted((int(t), int(d)) for t, d in zip(rows, cols) if admissible[t, d])


def associate(
    predicted_tracks: Sequence[KalmanTrack], detections: Sequence[Box3D], config: TrackerConfig = TrackerConfig()
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Match tracks to detections. Returns (track, detection) index pairs and the leftovers."""
    cost = association_costs([t.box() for t in predicted_tracks], detections, config.metric)
    match = greedy_match if config.matcher == "greedy" else optimal_match
    matches = match(cost, config.gate)
    mt = {t for t, _ in matches}
    md = {d for _, d in matches}
    return (
        matches,
        [i for i in range(len(predicted_tracks)) if i not in mt],
        [j for j in range(len(detections)) if j not in md],
    )


# -- lifecycle ---------------------------------------------------------------


class Tracker:
    """Sequential multi-object tracker over one sequence."""

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.tracks: list[KalmanTrack] = []
        self.timestamp: float | None = None
        self._next_id = 0

    @property
    def issued_ids(self) -> int:
        """Number of track ids handed out so far."""
        return self._next_id

    def _spawn(self, det: Box3D) -> KalmanTrack:
        track = KalmanTrack.from_detection(det, self._next_id, self.config)
        self._next_id += 1
        return track

    def _output_box(self, track: KalmanTrack) -> Box3D:
        if self.config.box_source == "detection" and track.misses == 0 and track.last_detection is not None:
            return track.last_detection.with_track(track.track_id)
        return track.box()

    def step(self, detections: Sequence[Box3D], timestamp: float) -> list[Box3D]:
        """Advance to ``timestamp`` and ingest one frame of (already filtered) detections."""
        cfg = self.config
        if self.timestamp is not None:
            if timestamp <= self.timestamp:
                raise ValueError(f"timestamps must increase: {timestamp} after {self.timestamp}")
            dt = timestamp - self.timestamp
            self.tracks = [replace(kf_predict(t, dt, cfg), age=t.age + 1) for t in self.tracks]
        self.timestamp = timestamp

        matches, unmatched_t, unmatched_d = associate(self.tracks, detections, cfg)
        updated = list(self.tracks)
        for t, d in matches:
            updated[t] = kf_update(updated[t], detections[d], cfg)
        for t in unmatched_t:
            updated[t] = replace(updated[t], misses=updated[t].misses + 1)
        alive = [t for t in updated if t.misses <= cfg.max_misses]
        alive.extend(self._spawn(detections[d]) for d in unmatched_d)
        self.tracks = alive

        out = [self._output_box(t) for t in self.tracks if t.hits >= cfg.min_hits]
        return sorted(out, key=lambda b: b.track_id)


def tracker_step(tracker: Tracker, detections: Sequence[Box3D], timestamp: float) -> list[Box3D]:
    return tracker.step(detections, timestamp)
