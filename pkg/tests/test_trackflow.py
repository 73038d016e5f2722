import logging

import numpy as np
import pytest

from bucketflow.core import Box3D, PointCloud, SE3Pose
from bucketflow.metrics import BucketMatrix, summarize_buckets
from bucketflow.synth import (
    DetectionNoise,
    generate_scene,
    linear_script,
    perturb_detections,
    random_scene,
    scene_gt_flows,
    to_sensor_frames,
)
from bucketflow.tracker import TrackerConfig
from bucketflow.trackflow import (
    SensorFrame,
    TrackedFramePair,
    filter_detections,
    run_trackflow,
    tracks_to_flow,
)

PASS_THROUGH = TrackerConfig(box_source="detection")


def box(x, conf=0.9, tid=0, cls="CAR", dims=(4.0, 2.0, 1.5), y=0.0):
    return Box3D((x, y, 0.75), dims, 0.0, cls, conf, tid)


class TestFilter:
    def test_identity(self):
        dets = [box(0, 0.05), box(1, 0.5)]
        assert filter_detections(dets, 0.0) == dets

    def test_boundary_inclusive(self):
        dets = [box(0, 0.1), box(1, 0.2), box(2, 0.9)]
        assert [d.confidence for d in filter_detections(dets, 0.2)] == [0.2, 0.9]

    def test_all_removed(self):
        assert filter_detections([box(0, 0.99)], 1.0) == []


class TestTracksToFlow:
    def cloud(self, n=20, seed=0):
        pts = np.random.default_rng(seed).uniform(-1, 1, (n, 3)) * [1.9, 0.9, 0.7] + [0, 0, 0.75]
        return PointCloud(np.vstack([pts, [[20.0, 20.0, 0.0]]]))

    def test_no_boxes(self):
        flow = tracks_to_flow(TrackedFramePair((), (), self.cloud(), 0.1))
        assert not flow.vectors.any()

    def test_translation(self):
        flow = tracks_to_flow(TrackedFramePair((box(0),), (box(0.5),), self.cloud(), 0.1))
        assert np.array_equal(flow.vectors[:-1], np.tile([0.5, 0, 0], (20, 1)))
        assert not flow.vectors[-1].any()

    def test_margin_catches_boundary_points(self):
        cloud = PointCloud(np.array([[2.05, 0.0, 0.75], [2.2, 0.0, 0.75]]))
        flow = tracks_to_flow(TrackedFramePair((box(0),), (box(1),), cloud, 0.1))
        assert flow.vectors[:, 0].tolist() == [1.0, 0.0]

    def test_no_successor_zero(self):
        flow = tracks_to_flow(TrackedFramePair((box(0),), (box(1, tid=4),), self.cloud(), 0.1))
        assert not flow.vectors.any()

    def test_overlap_priority(self):
        small_lo = box(0, 0.3, tid=1, dims=(1, 1, 1))
        small_hi = box(0, 0.8, tid=2, dims=(1, 1, 1))
        big = box(0, 0.99, tid=0)
        nxt = (box(5, tid=0), box(0, tid=1, y=1.0, dims=(1, 1, 1)), box(0, tid=2, y=2.0, dims=(1, 1, 1)))
        cloud = PointCloud(np.array([[0.0, 0.0, 0.75], [1.5, 0.0, 0.75]]))
        flow = tracks_to_flow(TrackedFramePair((big, small_lo, small_hi), nxt, cloud, 0.1))
        np.testing.assert_allclose(flow.vectors, [[0, 2, 0], [5, 0, 0]], atol=1e-12)
        same = (box(0, 0.5, tid=3, dims=(1, 1, 1)), box(0, 0.5, tid=1, dims=(1, 1, 1)))
        nxt2 = (box(0, tid=3, y=3.0, dims=(1, 1, 1)), box(0, tid=1, y=1.0, dims=(1, 1, 1)))
        flow = tracks_to_flow(TrackedFramePair(same, nxt2, cloud, 0.1))
        np.testing.assert_allclose(flow.vectors[0], [0, 1, 0], atol=1e-12)

    def test_unique_track_ids(self):
        with pytest.raises(ValueError):
            TrackedFramePair((box(0), box(5)), (), self.cloud(), 0.1)


def two_object_scene(n_frames=6):
    scripts = [
        linear_script("REGULAR_VEHICLE", (-10.0, -5.0), (10.0, 0.0, 0.0), n_frames, 0.1, point_count=200),
        linear_script("PEDESTRIAN", (5.0, 5.0), (0.0, 1.2, 0.0), n_frames, 0.1, point_count=60),
    ]
    return generate_scene(scripts, 1500, n_frames, 0.1, seed=3, ego_velocity=(5.0, 0.0, 0.0))


def dynamic_of(frames, flows, cls):
    gts = scene_gt_flows(frames)
    m = BucketMatrix.empty(gts[0].classes)
    for f, g in zip(flows, gts):
        m = m.accumulate(f, g)
    return summarize_buckets(m)[cls].dynamic_normalized_epe


class TestPipeline:
    def test_no_detections(self):
        frames = random_scene(0)
        flows = run_trackflow(to_sensor_frames(frames, [[] for _ in frames]))
        assert len(flows) == len(frames) - 1
        assert all(not f.vectors.any() and len(f) == len(fr.cloud) for f, fr in zip(flows, frames))

    def test_missing_detections_warn(self, caplog):
        frames = random_scene(0)
        with caplog.at_level(logging.WARNING):
            flows = run_trackflow(to_sensor_frames(frames))
        assert "no detections" in caplog.text
        assert not any(f.vectors.any() for f in flows)

    def test_noiseless_pedestrian(self):
        frames = two_object_scene()
        flows = run_trackflow(to_sensor_frames(frames, [f.boxes for f in frames]))
        assert dynamic_of(frames, flows, "PEDESTRIAN") < 0.05

    def test_perfect_equals_gt(self):
        frames = two_object_scene()
        dets = [[b.with_track(None) for b in f.boxes] for f in frames]
        flows = run_trackflow(to_sensor_frames(frames, dets), PASS_THROUGH)
        for flow, gt in zip(flows, scene_gt_flows(frames)):
            inside = gt.class_index > 0
            assert np.abs(flow.vectors[inside] - gt.flow.vectors[inside]).max() < 1e-9
            assert not flow.vectors[~inside].any()

    def test_dropout_coasts(self):
        frames = two_object_scene()
        dets = [list(f.boxes) for f in frames]
        dets[3] = [b for b in dets[3] if b.class_id != "PEDESTRIAN"]
        flows = run_trackflow(to_sensor_frames(frames, dets))
        gt = scene_gt_flows(frames)[3]
        ped = gt.class_index == 3
        assert np.linalg.norm(flows[3].vectors[ped], axis=1).min() > 0.05

    def test_lower_threshold_keeps_tracks(self):
        frames = random_scene(2, n_frames=5)
        noise = DetectionNoise(center_std=0.1, tp_confidence=(0.1, 0.9), false_positive_rate=1.0)
        dets = perturb_detections([f.boxes for f in frames], noise, seed=2)
        for lo, hi in [(0.1, 0.3), (0.3, 0.6), (0.6, 0.9)]:
            for d in dets:
                assert set(filter_detections(d, hi)) <= set(filter_detections(d, lo))

    def test_ego_motion_does_not_create_flow(self):
        frames = two_object_scene()
        flows = run_trackflow(to_sensor_frames(frames, [f.boxes for f in frames]), PASS_THROUGH)
        for flow, gt in zip(flows, scene_gt_flows(frames)):
            assert not flow.vectors[gt.class_index == 0].any()

    def test_sensor_frame_round_trip(self):
        frames = two_object_scene(2)
        sensor = to_sensor_frames(frames)
        for s, f in zip(sensor, frames):
            assert isinstance(s, SensorFrame)
            np.testing.assert_allclose(s.ego_pose.apply(s.cloud.points), f.cloud.points, atol=1e-9)
            assert s.ego_pose.allclose(f.ego_pose, 0.0)
        assert not sensor[1].ego_pose.allclose(SE3Pose.identity())
