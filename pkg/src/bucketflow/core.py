"""Geometry and container types shared across the package.

Poses are rigid SE(3) transforms. Boxes carry a yaw-only orientation about
the z axis; pitch and roll are always zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

BACKGROUND = "BACKGROUND"
CAR = "CAR"
OTHER_VEHICLES = "OTHER_VEHICLES"
PEDESTRIAN = "PEDESTRIAN"
WHEELED_VRU = "WHEELED_VRU"
META_CLASSES = (BACKGROUND, CAR, OTHER_VEHICLES, PEDESTRIAN, WHEELED_VRU)

SMALL = "SMALL"
MEDIUM = "MEDIUM"
LARGE = "LARGE"
SIZE_CLASSES = (BACKGROUND, SMALL, MEDIUM, LARGE)

_ORTHO_TOL = 1e-9


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    wrapped = np.mod(np.asarray(angle, dtype=np.float64) + math.pi, 2.0 * math.pi) - math.pi
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    wrapped = np.where(wrapped >= math.pi, wrapped - 2.0 * math.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform ``p -> R @ p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad pose shapes: rotation {r.shape}, translation {t.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> SE3Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> SE3Pose:
        return cls(yaw_rotation(yaw), np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> SE3Pose:
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a single point ``(3,)`` or a batch ``(N, 3)``."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: SE3Pose) -> SE3Pose:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return SE3Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> SE3Pose:
        rt = self.rotation.T
        return SE3Pose(rt, -(rt @ self.translation))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> SE3Pose:
        return cls(np.asarray(d["rotation"], dtype=np.float64), np.asarray(d["translation"], dtype=np.float64))

    def allclose(self, other: SE3Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )


def se3_apply(pose: SE3Pose, p: np.ndarray) -> np.ndarray:
    return pose.apply(p)


def se3_compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    return a.compose(b)


def se3_inverse(a: SE3Pose) -> SE3Pose:
    return a.inverse()


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box. ``dims`` is (length, width, height); yaw is about +z."""

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float
    class_id: str
    confidence: float = 1.0
    track_id: int | None = None

    def __post_init__(self) -> None:
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims must have three components")
        if not all(math.isfinite(v) for v in center + dims) or not math.isfinite(self.yaw):
            raise ValueError("box contains non-finite values")
        if min(dims) <= 0.0:
            raise ValueError(f"box dims must be strictly positive, got {dims}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.track_id is not None and self.track_id < 0:
            raise ValueError("track_id must be non-negative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        object.__setattr__(self, "confidence", float(self.confidence))
        if self.track_id is not None:
            object.__setattr__(self, "track_id", int(self.track_id))

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    @property
    def pose(self) -> SE3Pose:
        return SE3Pose.from_yaw(self.yaw, self.center)

    @property
    def volume(self) -> float:
        return box_volume(self)

    def corners(self) -> np.ndarray:
        """The eight corners in the global frame, shape (8, 3)."""
        half = np.asarray(self.dims) / 2.0
        signs = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=np.float64)
        return self.pose.apply(signs * half)

    def with_track(self, track_id: int | None) -> Box3D:
        return replace(self, track_id=track_id)

    def to_dict(self) -> dict:
        d = {
            "center": list(self.center),
            "dims": list(self.dims),
            "yaw": self.yaw,
            "class": self.class_id,
            "confidence": self.confidence,
        }
        if self.track_id is not None:
            d["track_id"] = self.track_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> Box3D:
        return cls(
            center=tuple(d["center"]),
            dims=tuple(d["dims"]),
            yaw=float(d["yaw"]),
            class_id=str(d["class"]),
            confidence=float(d.get("confidence", 1.0)),
            track_id=d.get("track_id"),
        )


def box_volume(box: Box3D) -> float:
    length, width, height = box.dims
    return length * width * height


def box_contains_points(box: Box3D, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of ``points`` (N, 3) lying inside ``box`` grown by ``margin``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return box_local_inside(p, np.asarray([box_params(box)]), margin)[:, 0]


def box_params(box: Box3D) -> tuple[float, ...]:
    """Flat parameters (cx, cy, cz, cos yaw, sin yaw, half l, half w, half h)."""
    return (*box.center, math.cos(box.yaw), math.sin(box.yaw), *(d / 2.0 for d in box.dims))


def box_local_inside(points: np.ndarray, params: np.ndarray, margin: float) -> np.ndarray:
    """(N, B) containment matrix. The arithmetic mirrors the compiled kernel exactly."""
    dx = points[:, 0:1] - params[:, 0]
    dy = points[:, 1:2] - params[:, 1]
    dz = points[:, 2:3] - params[:, 2]
    lx = params[:, 3] * dx + params[:, 4] * dy
    ly = params[:, 3] * dy - params[:, 4] * dx
    return (
        (np.abs(lx) <= params[:, 5] + margin)
        & (np.abs(ly) <= params[:, 6] + margin)
        & (np.abs(dz) <= params[:, 7] + margin)
    )


def box_contains_point(box: Box3D, p: Sequence[float], margin: float = 0.0) -> bool:
    return bool(box_contains_points(box, np.asarray(p, dtype=np.float64)[None, :], margin)[0])


def box_relative_transform(box_t: Box3D, box_t1: Box3D) -> SE3Pose:
    """Rigid motion carrying points attached to ``box_t`` onto ``box_t1``.

    Built from the yaw difference directly so identical boxes give an exact
    identity rotation.
    """
    if box_t.track_id != box_t1.track_id:
        raise ValueError(f"track_id mismatch: {box_t.track_id} vs {box_t1.track_id}")
    rot = yaw_rotation(wrap_angle(box_t1.yaw - box_t.yaw))
    c0 = box_t.center_array
    c1 = box_t1.center_array
    return SE3Pose(rot, c1 - rot @ c0)


def rigid_box_flow(box_t: Box3D, box_t1: Box3D, points: np.ndarray) -> np.ndarray:
    """Displacement of ``points`` rigidly attached to ``box_t`` when it moves to ``box_t1``.

    Evaluated as ``(R - I)(p - c0) + (c1 - c0)`` so a pure translation yields
    exactly the center offset and a static box yields exact zeros.
    """
    if box_t.track_id != box_t1.track_id:
        raise ValueError(f"track_id mismatch: {box_t.track_id} vs {box_t1.track_id}")
    rot = yaw_rotation(wrap_angle(box_t1.yaw - box_t.yaw))
    c0 = box_t.center_array
    offset = np.asarray(points, dtype=np.float64) - c0
    return offset @ (rot - np.eye(3)).T + (box_t1.center_array - c0)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    frame_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class FlowField:
    """One displacement per source point plus a validity mask."""

    vectors: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        vec = np.asarray(self.vectors, dtype=np.float64).reshape(-1, 3)
        valid = np.ones(len(vec), dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if valid.shape != (len(vec),):
            raise ValueError(f"valid mask length {valid.shape} does not match {len(vec)} vectors")
        if not np.all(np.isfinite(vec[valid])):
            raise ValueError("valid flow vectors must be finite")
        valid = valid.copy()
        valid.setflags(write=False)
        object.__setattr__(self, "vectors", _frozen(vec))
        object.__setattr__(self, "valid", valid)

    @classmethod
    def zeros(cls, n: int) -> FlowField:
        return cls(np.zeros((n, 3)))

    def __len__(self) -> int:
        return len(self.vectors)


class ClassMap:
    """Total mapping from fine dataset classes to meta-classes.

    ``meta_classes`` fixes the class order used everywhere downstream;
    BACKGROUND is always first and is reserved for points outside every box.
    """

    def __init__(self, mapping: Mapping[str, str], meta_classes: Iterable[str] | None = None, name: str = "custom"):
        metas = tuple(meta_classes) if meta_classes is not None else None
        if metas is None:
            seen = sorted(set(mapping.values()))
            metas = (BACKGROUND, *[m for m in seen if m != BACKGROUND])
        if not metas or metas[0] != BACKGROUND:
            raise ValueError("meta_classes must start with BACKGROUND")
        if len(set(metas)) != len(metas):
            raise ValueError("duplicate meta-class names")
        for fine, meta in mapping.items():
            if meta == BACKGROUND:
                raise ValueError(f"fine class {fine!r} maps to BACKGROUND, which is reserved for unboxed points")
            if meta not in metas:
                raise ValueError(f"fine class {fine!r} maps to unknown meta-class {meta!r}")
        self.mapping = dict(mapping)
        self.meta_classes = metas
        self.name = name
        self._index = {m: i for i, m in enumerate(metas)}

    def __call__(self, fine_class: str) -> str:
        return self.lookup(fine_class)

    def lookup(self, fine_class: str) -> str:
        try:
            return self.mapping[fine_class]
        except KeyError:
            raise KeyError(f"class {fine_class!r} is not covered by class map {self.name!r}") from None

    def index(self, meta_class: str) -> int:
        return self._index[meta_class]

    def to_dict(self) -> dict:
        return {"name": self.name, "meta_classes": list(self.meta_classes), "mapping": dict(sorted(self.mapping.items()))}

    @classmethod
    def from_dict(cls, d: Mapping) -> ClassMap:
        return cls(d["mapping"], d.get("meta_classes"), name=d.get("name", "custom"))

    @classmethod
    def from_json(cls, path: str | Path) -> ClassMap:
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ClassMap) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"ClassMap({self.name!r}, {len(self.mapping)} fine classes -> {self.meta_classes})"


_AV2_GROUPS = {
    CAR: ["REGULAR_VEHICLE"],
    OTHER_VEHICLES: [
        "ARTICULATED_BUS", "BOX_TRUCK", "BUS", "LARGE_VEHICLE", "MESSAGE_BOARD_TRAILER",
        "RAILED_VEHICLE", "SCHOOL_BUS", "TRUCK", "TRUCK_CAB", "VEHICULAR_TRAILER",
    ],
    PEDESTRIAN: ["OFFICIAL_SIGNALER", "PEDESTRIAN", "STROLLER", "WHEELCHAIR"],
    WHEELED_VRU: ["BICYCLE", "BICYCLIST", "MOTORCYCLE", "MOTORCYCLIST", "WHEELED_DEVICE", "WHEELED_RIDER"],
}

DEFAULT_CLASS_MAP = ClassMap(
    {fine: meta for meta, fines in _AV2_GROUPS.items() for fine in fines}
    | {m: m for m in META_CLASSES if m != BACKGROUND},
    META_CLASSES,
    name="av2-meta",
)

SIZE_CLASS_MAP = ClassMap({SMALL: SMALL, MEDIUM: MEDIUM, LARGE: LARGE}, SIZE_CLASSES, name="size-buckets")
