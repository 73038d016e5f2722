"""On-disk dataset layout.

One directory per sequence::

    <root>/<sequence_id>/
        manifest.json            sequence id, dt, frame ids and timestamps
        frames/000000.bin        point cloud in the sensor frame
        frames/000000.json       ego pose (sensor -> global) and annotated boxes
        gt_flow/000000.bin       ground-truth flow from frame 0 to frame 1
        gt_flow/meta.json        taxonomy of the class indices in gt_flow/*.bin

Detections and predicted flow live in parallel trees keyed by sequence id:
``<detections>/<sequence_id>/000000.json`` and ``<pred>/<sequence_id>/000000.bin``.
Binary files follow :mod:`bucketflow.binfmt`; everything else is JSON.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import binfmt
from .binfmt import LoadError
from .core import Box3D, ClassMap, FlowField, PointCloud, SE3Pose
from .gtflow import AnnotatedFrame, GroundTruthFlow
from .trackflow import SensorFrame

log = logging.getLogger(__name__)

SEQUENCE_SCHEMA = "bucketflow-sequence/1"
GT_SCHEMA = "bucketflow-gtflow/1"


class DatasetError(LoadError):
    """The dataset layout is malformed or incomplete."""


def frame_name(frame_id: int) -> str:
    return f"{frame_id:06d}"


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path: str | Path, frame: int | None = None) -> Any:
    path = Path(path)
    if not path.is_file():
        raise DatasetError("missing file", path, frame)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON: {exc}", path, frame) from None


@dataclass(frozen=True, eq=False)
class LoadedSequence:
    """A sequence with clouds already moved into the global frame."""

    sequence_id: str
    dt: float
    frames: tuple[AnnotatedFrame, ...]
    sensor_clouds: tuple[PointCloud, ...]

    @property
    def frame_ids(self) -> list[int]:
        return [f.cloud.frame_id for f in self.frames]

    def sensor_frames(self, detections: Sequence[Sequence[Box3D] | None] | None = None) -> list[SensorFrame]:
        dets = detections if detections is not None else [None] * len(self.frames)
        if len(dets) != len(self.frames):
            raise DatasetError(f"{len(dets)} detection frames for {len(self.frames)} clouds in sequence {self.sequence_id}")
        return [
            SensorFrame(cloud, f.ego_pose, None if d is None else tuple(d))
            for cloud, f, d in zip(self.sensor_clouds, self.frames, dets)
        ]


def list_sequences(root: str | Path) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError("dataset root is not a directory", root)
    return sorted(p.name for p in root.iterdir() if (p / "manifest.json").is_file())


def save_sequence(root: str | Path, sequence_id: str, frames: Sequence[AnnotatedFrame], dt: float) -> Path:
    """Write annotated global-frame ``frames``; clouds are stored in the sensor frame."""
    seq = Path(root) / sequence_id
    entries = []
    for f in frames:
        fid = f.cloud.frame_id
        entries.append({"frame_id": fid, "timestamp": f.cloud.timestamp})
        local = f.ego_pose.inverse().apply(f.cloud.points)
        binfmt.write_bytes(seq / "frames" / f"{frame_name(fid)}.bin", binfmt.cloud_bytes(local))
        write_json(
            seq / "frames" / f"{frame_name(fid)}.json",
            {"ego_pose": f.ego_pose.to_dict(), "boxes": [b.to_dict() for b in f.boxes]},
        )
    write_json(seq / "manifest.json", {"schema": SEQUENCE_SCHEMA, "sequence_id": sequence_id, "dt": dt, "frames": entries})
    return seq


def _parse_manifest(path: Path) -> tuple[str, float, list[int], list[float]]:
    m = read_json(path)
    try:
        if m.get("schema") != SEQUENCE_SCHEMA:
            raise DatasetError(f"unsupported manifest schema {m.get('schema')!r}", path)
        ids = [int(e["frame_id"]) for e in m["frames"]]
        stamps = [float(e["timestamp"]) for e in m["frames"]]
        dt = float(m["dt"])
        seq_id = str(m["sequence_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed manifest: {exc}", path) from None
    if dt <= 0:
        raise DatasetError("manifest dt must be positive", path)
    for a, b in zip(ids, ids[1:]):
        if b <= a:
            raise DatasetError(f"frame ids must strictly increase ({a} then {b})", path, b)
    for fid, (a, b) in zip(ids[1:], zip(stamps, stamps[1:])):
        if b <= a:
            raise DatasetError("timestamps must strictly increase", path, fid)
    return seq_id, dt, ids, stamps


def load_sequence(path: str | Path) -> LoadedSequence:
    """Load one sequence directory; any missing or corrupt file aborts with a :class:`LoadError`."""
    seq = Path(path)
    seq_id, dt, ids, stamps = _parse_manifest(seq / "manifest.json")
    frames, clouds = [], []
    for k, (fid, ts) in enumerate(zip(ids, stamps)):
        bin_path = seq / "frames" / f"{frame_name(fid)}.bin"
        json_path = seq / "frames" / f"{frame_name(fid)}.json"
        if not bin_path.is_file():
            raise DatasetError("missing point cloud", bin_path, fid)
        local = PointCloud(binfmt.read_cloud(bin_path, fid), fid, ts)
        record = read_json(json_path, fid)
        try:
            pose = SE3Pose.from_dict(record["ego_pose"])
            boxes = tuple(Box3D.from_dict(b) for b in record["boxes"])
            dt_next = stamps[k + 1] - ts if k + 1 < len(ids) else dt
            frame = AnnotatedFrame(PointCloud(pose.apply(local.points), fid, ts), boxes, pose, dt_next)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed frame record: {exc}", json_path, fid) from None
        frames.append(frame)
        clouds.append(local)
    return LoadedSequence(seq_id, dt, tuple(frames), tuple(clouds))


# -- detections ---------------------------------------------------------------


def save_detections(root: str | Path, sequence_id: str, frame_ids: Sequence[int], detections: Sequence[Sequence[Box3D]]) -> None:
    for fid, dets in zip(frame_ids, detections, strict=True):
        write_json(Path(root) / sequence_id / f"{frame_name(fid)}.json", [d.to_dict() for d in dets])


def load_detections(root: str | Path, sequence_id: str, frame_ids: Sequence[int]) -> list[tuple[Box3D, ...] | None]:
    """Detections per frame; a frame without a file comes back as ``None``.

    The number of detection files must equal the number of frames.
    """
    seq = Path(root) / sequence_id
    if not seq.is_dir():
        raise DatasetError(f"no detections for sequence {sequence_id}", seq)
    files = sorted(seq.glob("*.json"))
    if len(files) != len(frame_ids):
        raise DatasetError(
            f"sequence {sequence_id}: {len(files)} detection files but {len(frame_ids)} point cloud frames", seq
        )
    out: list[tuple[Box3D, ...] | None] = []
    for fid in frame_ids:
        path = seq / f"{frame_name(fid)}.json"
        if not path.is_file():
            out.append(None)
            continue
        try:
            out.append(tuple(Box3D.from_dict(d) for d in read_json(path, fid)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed detection record: {exc}", path, fid) from None
    return out


# -- flow fields ----------------------------------------------------------------


def save_flow(directory: str | Path, frame_ids: Sequence[int], flows: Sequence[FlowField]) -> None:
    """Write one flow file per source frame id."""
    for fid, flow in zip(frame_ids, flows, strict=True):
        binfmt.write_bytes(Path(directory) / f"{frame_name(fid)}.bin", binfmt.flow_bytes(flow.vectors, flow.valid))


def load_flow(
    directory: str | Path, frame_ids: Iterable[int], expected_counts: Sequence[int] | None = None
) -> dict[int, FlowField | None]:
    """Flow per frame id; frames without a file map to ``None``."""
    out: dict[int, FlowField | None] = {}
    ids = list(frame_ids)
    counts = expected_counts if expected_counts is not None else [None] * len(ids)
    for fid, n in zip(ids, counts, strict=True):
        path = Path(directory) / f"{frame_name(fid)}.bin"
        if not path.is_file():
            out[fid] = None
            continue
        vec, valid = binfmt.read_flow(path, fid, n)
        out[fid] = FlowField(vec, valid)
    return out


def save_gt_flows(
    seq_dir: str | Path, frame_ids: Sequence[int], flows: Sequence[GroundTruthFlow], class_map: ClassMap
) -> None:
    """Store ground truth for each source frame; vectors are quantized to float32 on disk."""
    gt_dir = Path(seq_dir) / "gt_flow"
    for fid, gt in zip(frame_ids, flows, strict=True):
        data = binfmt.gtflow_bytes(gt.flow.vectors, gt.flow.valid, gt.class_index)
        binfmt.write_bytes(gt_dir / f"{frame_name(fid)}.bin", data)
    write_json(
        gt_dir / "meta.json",
        {
            "schema": GT_SCHEMA,
            "taxonomy": class_map.name,
            "classes": list(class_map.meta_classes),
            "frames": [{"frame_id": fid, "dt": gt.dt} for fid, gt in zip(frame_ids, flows)],
        },
    )


@dataclass(frozen=True)
class StoredGroundTruth:
    taxonomy: str
    classes: tuple[str, ...]
    frames: dict[int, tuple[FlowField, np.ndarray]]


def load_gt_flows(seq_dir: str | Path, expected_counts: dict[int, int] | None = None) -> StoredGroundTruth | None:
    """Stored ground truth for a sequence, or ``None`` when none was written."""
    gt_dir = Path(seq_dir) / "gt_flow"
    if not (gt_dir / "meta.json").is_file():
        return None
    meta = read_json(gt_dir / "meta.json")
    if meta.get("schema") != GT_SCHEMA:
        raise DatasetError(f"unsupported ground-truth schema {meta.get('schema')!r}", gt_dir / "meta.json")
    frames = {}
    for entry in meta["frames"]:
        fid = int(entry["frame_id"])
        path = gt_dir / f"{frame_name(fid)}.bin"
        if not path.is_file():
            raise DatasetError("missing ground-truth flow", path, fid)
        n = None if expected_counts is None else expected_counts.get(fid)
        vec, valid, cls = binfmt.read_gtflow(path, fid, n)
        if cls.size and cls.max() >= len(meta["classes"]):
            raise DatasetError("class index outside the stored taxonomy", path, fid)
        frames[fid] = (FlowField(vec, valid), cls)
    return StoredGroundTruth(str(meta["taxonomy"]), tuple(meta["classes"]), frames)
