"""Scene-flow evaluation with class-aware, speed-normalized metrics, and flow from 3D tracking."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BACKGROUND,
    DEFAULT_CLASS_MAP,
    META_CLASSES,
    SIZE_CLASS_MAP,
    Box3D,
    ClassMap,
    FlowField,
    PointCloud,
    SE3Pose,
)
from .gtflow import AnnotatedFrame, GroundTruthFlow, generate_gt_flow  # noqa: E402
from .metrics import (  # noqa: E402
    BucketMatrix,
    ThreewayResult,
    average_epe,
    mean_summary,
    summarize_buckets,
    threeway_epe,
)
from .tracker import Tracker, TrackerConfig  # noqa: E402
from .trackflow import run_trackflow, tracks_to_flow  # noqa: E402

__all__ = [
    "BACKGROUND",
    "DEFAULT_CLASS_MAP",
    "META_CLASSES",
    "SIZE_CLASS_MAP",
    "AnnotatedFrame",
    "Box3D",
    "BucketMatrix",
    "ClassMap",
    "FlowField",
    "GroundTruthFlow",
    "PointCloud",
    "SE3Pose",
    "ThreewayResult",
    "Tracker",
    "TrackerConfig",
    "average_epe",
    "generate_gt_flow",
    "mean_summary",
    "run_trackflow",
    "summarize_buckets",
    "threeway_epe",
    "tracks_to_flow",
]
