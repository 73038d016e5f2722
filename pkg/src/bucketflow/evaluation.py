"""Dataset-level evaluation: ground truth + predictions -> mergeable partial results."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DEFAULT_CLASS_MAP, SIZE_CLASS_MAP, ClassMap, FlowField
from .dataset import LoadedSequence, list_sequences, load_flow, load_gt_flows, load_sequence
from .gtflow import DEFAULT_MAX_RADIUS, AnnotatedFrame, GroundTruthFlow, generate_gt_flow, radius_mask
from .metrics import (
    BUCKET_WIDTH,
    DEFAULT_DT,
    MAX_SPEED,
    THREEWAY_DYNAMIC_SPEED,
    BucketMatrix,
    ThreewayAccumulator,
    size_bucket_classes,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    max_radius: float = DEFAULT_MAX_RADIUS
    dt: float = DEFAULT_DT
    class_map: ClassMap = DEFAULT_CLASS_MAP
    size_buckets: bool = False
    bucket_width: float = BUCKET_WIDTH
    max_speed: float = MAX_SPEED
    threeway_speed: float = THREEWAY_DYNAMIC_SPEED

    def __post_init__(self) -> None:
        if self.max_radius <= 0 or self.dt <= 0:
            raise ValueError("radius and dt must be positive")

    @property
    def taxonomy(self) -> ClassMap:
        return SIZE_CLASS_MAP if self.size_buckets else self.class_map

    def to_dict(self) -> dict:
        return {
            "max_radius": self.max_radius,
            "dt": self.dt,
            "bucket_width": self.bucket_width,
            "max_speed": self.max_speed,
            "threeway_dynamic_speed": self.threeway_speed,
            "size_buckets": self.size_buckets,
            "taxonomy": self.taxonomy.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class EvalPartial:
    """Everything a report needs, in a form where merging is exact addition."""

    matrix: BucketMatrix
    threeway: ThreewayAccumulator | None = None
    histogram: tuple[int, ...] | None = None
    sequences: tuple[str, ...] = ()
    frames_evaluated: int = 0
    missing: tuple[tuple[str, int], ...] = field(default=())

    @classmethod
    def empty(cls, config: EvalConfig) -> EvalPartial:
        classes = config.taxonomy.meta_classes
        return cls(
            BucketMatrix.empty(classes, config.dt, config.bucket_width, config.max_speed),
            ThreewayAccumulator(dynamic_speed=config.threeway_speed),
            (0,) * len(classes),
        )

    def merge(self, other: EvalPartial) -> EvalPartial:
        overlap = set(self.sequences) & set(other.sequences)
        if overlap:
            raise ValueError(f"sequences evaluated twice: {sorted(overlap)}")
        threeway = histogram = None
        if self.threeway is not None and other.threeway is not None:
            threeway = self.threeway.merge(other.threeway)
        if self.histogram is not None and other.histogram is not None:
            histogram = tuple(a + b for a, b in zip(self.histogram, other.histogram, strict=True))
        return EvalPartial(
            self.matrix.merge(other.matrix),
            threeway,
            histogram,
            tuple(sorted(self.sequences + other.sequences)),
            self.frames_evaluated + other.frames_evaluated,
            tuple(sorted(self.missing + other.missing)),
        )

    __add__ = merge

    def add_frame(self, pred: FlowField, gt: GroundTruthFlow) -> EvalPartial:
        hist = np.bincount(gt.class_index[gt.selected], minlength=len(gt.classes))
        return replace(
            self,
            matrix=self.matrix.accumulate(pred, gt),
            threeway=None if self.threeway is None else self.threeway.add(pred, gt),
            histogram=None if self.histogram is None else tuple(int(a + b) for a, b in zip(self.histogram, hist)),
            frames_evaluated=self.frames_evaluated + 1,
        )


def _quantized(gt: GroundTruthFlow, dt: float) -> GroundTruthFlow:
    # ground truth is compared at the precision it is stored with on disk
    flow = FlowField(gt.flow.vectors.astype(np.float32), gt.flow.valid)
    return GroundTruthFlow.from_flow(flow, gt.class_index, gt.classes, dt, gt.eval_mask)


def _relabel(frame: AnnotatedFrame) -> AnnotatedFrame:
    return replace(frame, boxes=tuple(size_bucket_classes(frame.boxes)))


def sequence_ground_truth(
    seq: LoadedSequence, config: EvalConfig, seq_dir: str | Path | None = None
) -> list[tuple[int, GroundTruthFlow]]:
    """Ground truth for every frame with a successor.

    Stored ``gt_flow`` files are used when their taxonomy matches the requested
    one; otherwise ground truth is generated from the annotated boxes.
    """
    taxonomy = config.taxonomy
    pairs = list(zip(seq.frames[:-1], seq.frames[1:]))
    stored = None
    if seq_dir is not None:
        counts = {f.cloud.frame_id: len(f.cloud) for f in seq.frames}
        stored = load_gt_flows(seq_dir, counts)
    out = []
    if stored is not None and stored.taxonomy == taxonomy.name and stored.classes == taxonomy.meta_classes:
        for f, _ in pairs:
            fid = f.cloud.frame_id
            if fid not in stored.frames:
                raise ValueError(f"stored ground truth lacks frame {fid} of sequence {seq.sequence_id}")
            flow, cls = stored.frames[fid]
            mask = radius_mask(f.cloud, f.ego_position, config.max_radius)
            out.append((fid, GroundTruthFlow.from_flow(flow, cls, stored.classes, config.dt, mask)))
        return out
    for a, b in pairs:
        if config.size_buckets:
            a, b = _relabel(a), _relabel(b)
        gt = generate_gt_flow(a, b, taxonomy, config.max_radius)
        out.append((a.cloud.frame_id, _quantized(gt, config.dt)))
    return out


def evaluate_sequence(seq_dir: str | Path, pred_root: str | Path, config: EvalConfig) -> EvalPartial:
    seq_dir = Path(seq_dir)
    seq = load_sequence(seq_dir)
    if abs(seq.dt - config.dt) > 1e-9:
        log.warning("sequence %s has dt %g but speeds use dt %g", seq.sequence_id, seq.dt, config.dt)
    gts = sequence_ground_truth(seq, config, seq_dir)
    counts = [len(gt) for _, gt in gts]
    preds = load_flow(Path(pred_root) / seq.sequence_id, [fid for fid, _ in gts], counts)
    partial = replace(EvalPartial.empty(config), sequences=(seq.sequence_id,))
    missing = []
    for fid, gt in gts:
        pred = preds[fid]
        if pred is None:
            log.warning("missing prediction for sequence %s frame %d; frame excluded", seq.sequence_id, fid)
            missing.append((seq.sequence_id, fid))
            continue
        partial = partial.add_frame(pred, gt)
    return replace(partial, missing=tuple(missing))


def evaluate_dataset(
    gt_root: str | Path,
    pred_root: str | Path,
    config: EvalConfig = EvalConfig(),
    sequences: Sequence[str] | None = None,
    threads: int = 1,
) -> EvalPartial:
    """Evaluate ``sequences`` (default: all under ``gt_root``) and merge the results."""
    names = list_sequences(gt_root) if sequences is None else sorted(sequences)
    if not names:
        raise ValueError(f"no sequences found under {gt_root}")

    def run(name: str) -> EvalPartial:
        return evaluate_sequence(Path(gt_root) / name, pred_root, config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run, names))
    else:
        partials = [run(n) for n in names]
    total = partials[0]
    for p in partials[1:]:
        total = total.merge(p)
    return total
