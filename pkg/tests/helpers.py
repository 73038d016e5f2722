"""Shared builders for tests that work at the dataset or report level."""

from bucketflow import kernels
from bucketflow.core import META_CLASSES
from bucketflow.metrics import BucketMatrix

# per-class dynamic normalized EPE of one reference method
TABLE_ROW = {"CAR": 0.182092, "OTHER_VEHICLES": 0.312882, "PEDESTRIAN": 0.396849, "WHEELED_VRU": 0.257647}


def table_matrix() -> BucketMatrix:
    """A matrix whose only dynamic cell per class reproduces ``TABLE_ROW`` exactly."""
    m = BucketMatrix.empty(META_CLASSES)
    counts, epe, disp = m.counts.copy(), m.epe_fixed.copy(), m.disp_fixed.copy()
    for name, value in TABLE_ROW.items():
        ci = META_CLASSES.index(name)
        counts[ci, 1] = 1
        disp[ci, 1] = 10**6 * kernels.FIXED_ONE
        epe[ci, 1] = round(value * 10**6) * kernels.FIXED_ONE
    return BucketMatrix(m.classes, m.dt, counts, epe, disp)


def build_dataset(root, n_sequences=4, n_frames=4, noise=0.1, seed=0):
    """Write sequences with stored ground truth plus noisy predictions under ``root``.

    Returns ``(gt_root, pred_root)``.
    """
    import numpy as np

    from bucketflow.core import DEFAULT_CLASS_MAP, FlowField
    from bucketflow.dataset import save_flow, save_gt_flows, save_sequence
    from bucketflow.synth import random_scene, scene_gt_flows

    gt_root, pred_root = root / "gt", root / "pred"
    rng = np.random.default_rng(seed)
    for i in range(n_sequences):
        frames = random_scene(seed + i, n_frames=n_frames, background_points=300)
        seq_id = f"seq{i:04d}"
        seq_dir = save_sequence(gt_root, seq_id, frames, 0.1)
        gts = scene_gt_flows(frames, max_radius=None)
        ids = [f.cloud.frame_id for f in frames[:-1]]
        save_gt_flows(seq_dir, ids, gts, DEFAULT_CLASS_MAP)
        preds = [FlowField(g.flow.vectors + rng.normal(0, noise, g.flow.vectors.shape)) for g in gts]
        save_flow(pred_root / seq_id, ids, preds)
    return gt_root, pred_root
