import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bucketflow import binfmt
from bucketflow.core import DEFAULT_CLASS_MAP, FlowField
from bucketflow.dataset import (
    DatasetError,
    list_sequences,
    load_detections,
    load_flow,
    load_gt_flows,
    load_sequence,
    save_detections,
    save_flow,
    save_gt_flows,
    save_sequence,
)
from bucketflow.synth import DetectionNoise, perturb_detections, random_scene, scene_gt_flows


@pytest.fixture
def cloud():
    return np.random.default_rng(0).normal(0, 30, (1000, 3)).astype(np.float32)


class TestBinaryFormat:
    def test_cloud_roundtrip_bit_identical(self, tmp_path, cloud):
        path = tmp_path / "c.bin"
        binfmt.write_bytes(path, binfmt.cloud_bytes(cloud))
        back = binfmt.read_cloud(path)
        assert back.dtype == np.float32
        assert back.tobytes() == cloud.tobytes()

    def test_flow_roundtrip(self, tmp_path, cloud):
        valid = np.arange(1000) % 3 != 0
        binfmt.write_bytes(tmp_path / "f.bin", binfmt.flow_bytes(cloud, valid))
        vec, v = binfmt.read_flow(tmp_path / "f.bin", 4, 1000)
        assert vec.tobytes() == cloud.tobytes() and np.array_equal(v, valid)

    def test_gtflow_roundtrip(self, tmp_path, cloud):
        cls = np.arange(1000) % 5
        binfmt.write_bytes(tmp_path / "g.bin", binfmt.gtflow_bytes(cloud, np.ones(1000, bool), cls))
        vec, valid, back = binfmt.read_gtflow(tmp_path / "g.bin")
        assert vec.tobytes() == cloud.tobytes() and valid.all() and np.array_equal(back, cls)

    def test_header_layout(self, cloud):
        data = binfmt.cloud_bytes(cloud)
        assert data[:4] == b"BFLW" and data[4] == binfmt.KIND_CLOUD
        assert int.from_bytes(data[8:16], "little") == 1000
        assert len(data) == 16 + 12000 + 4

    @given(arrays(np.float32, st.tuples(st.integers(0, 40), st.just(3))))
    def test_roundtrip_any_floats(self, pts):
        n, payload = binfmt.decode(binfmt.cloud_bytes(pts), binfmt.KIND_CLOUD)
        assert n == len(pts) and bytes(payload) == pts.tobytes()

    def _corrupt(self, tmp_path, data):
        path = tmp_path / "000007.bin"
        path.write_bytes(data)
        return path

    def test_bad_magic(self, tmp_path, cloud):
        path = self._corrupt(tmp_path, b"XXXX" + binfmt.cloud_bytes(cloud)[4:])
        with pytest.raises(binfmt.BadMagicError, match=r"file .*000007\.bin.*frame 7"):
            binfmt.read_cloud(path, 7)

    @pytest.mark.parametrize("cut", [3, 20, 100])
    def test_truncated(self, tmp_path, cloud, cut):
        path = self._corrupt(tmp_path, binfmt.cloud_bytes(cloud)[:cut])
        with pytest.raises(binfmt.TruncatedFileError) as info:
            binfmt.read_cloud(path, 7)
        assert info.value.path == path and info.value.frame == 7

    def test_checksum(self, tmp_path, cloud):
        data = bytearray(binfmt.cloud_bytes(cloud))
        data[500] ^= 0x01
        with pytest.raises(binfmt.ChecksumError, match="frame 7"):
            binfmt.read_cloud(self._corrupt(tmp_path, bytes(data)), 7)

    def test_count_mismatch(self, tmp_path, cloud):
        path = self._corrupt(tmp_path, binfmt.flow_bytes(cloud, np.ones(1000, bool)))
        with pytest.raises(binfmt.CountMismatchError, match="1000 points but the cloud has 999"):
            binfmt.read_flow(path, 7, 999)

    def test_wrong_kind_and_trailing(self, tmp_path, cloud):
        with pytest.raises(binfmt.FormatError, match="expected a flow file"):
            binfmt.read_flow(self._corrupt(tmp_path, binfmt.cloud_bytes(cloud)))
        with pytest.raises(binfmt.FormatError, match="trailing"):
            binfmt.read_cloud(self._corrupt(tmp_path, binfmt.cloud_bytes(cloud) + b"\0"))

    def test_errors_are_load_errors(self):
        for exc in (binfmt.BadMagicError, binfmt.ChecksumError, DatasetError):
            assert issubclass(exc, binfmt.LoadError)


@pytest.fixture
def scene():
    return random_scene(3, n_frames=4)


class TestDataset:
    def test_sequence_roundtrip(self, tmp_path, scene):
        save_sequence(tmp_path, "s0", scene, 0.1)
        assert list_sequences(tmp_path) == ["s0"]
        seq = load_sequence(tmp_path / "s0")
        assert seq.sequence_id == "s0" and seq.frame_ids == [0, 1, 2, 3]
        for a, b in zip(scene, seq.frames):
            assert b.boxes == a.boxes
            assert np.array_equal(b.ego_pose.rotation, a.ego_pose.rotation)
            assert np.array_equal(b.ego_pose.translation, a.ego_pose.translation)
            # stored in float32 in the sensor frame
            np.testing.assert_allclose(b.cloud.points, a.cloud.points, atol=1e-4)
        assert [f.dt_to_next for f in seq.frames] == pytest.approx([0.1] * 4)

    def test_sensor_frames(self, tmp_path, scene):
        save_sequence(tmp_path, "s0", scene, 0.1)
        seq = load_sequence(tmp_path / "s0")
        frames = seq.sensor_frames()
        assert all(f.detections is None for f in frames)
        with pytest.raises(DatasetError):
            seq.sensor_frames([()])

    def test_missing_cloud(self, tmp_path, scene):
        save_sequence(tmp_path, "s0", scene, 0.1)
        (tmp_path / "s0" / "frames" / "000002.bin").unlink()
        with pytest.raises(DatasetError, match=r"000002\.bin.*frame 2"):
            load_sequence(tmp_path / "s0")

    def test_corrupt_cloud(self, tmp_path, scene):
        save_sequence(tmp_path, "s0", scene, 0.1)
        path = tmp_path / "s0" / "frames" / "000001.bin"
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(binfmt.FormatError, match="frame 1"):
            load_sequence(tmp_path / "s0")

    def test_non_increasing_manifest(self, tmp_path, scene):
        save_sequence(tmp_path, "s0", scene, 0.1)
        path = tmp_path / "s0" / "manifest.json"
        m = json.loads(path.read_text())
        m["frames"][2]["timestamp"] = m["frames"][1]["timestamp"]
        path.write_text(json.dumps(m))
        with pytest.raises(DatasetError, match="timestamps"):
            load_sequence(tmp_path / "s0")

    def test_missing_root(self, tmp_path):
        with pytest.raises(DatasetError):
            list_sequences(tmp_path / "nope")

    def test_detections(self, tmp_path, scene):
        dets = perturb_detections([f.boxes for f in scene], DetectionNoise(center_std=0.1), 1)
        save_detections(tmp_path, "s0", [0, 1, 2, 3], dets)
        back = load_detections(tmp_path, "s0", [0, 1, 2, 3])
        assert [list(b) for b in back] == dets

    def test_detection_count_mismatch(self, tmp_path, scene):
        save_detections(tmp_path, "s0", [0, 1, 2], [[], [], []])
        with pytest.raises(DatasetError, match="sequence s0: 3 detection files but 4"):
            load_detections(tmp_path, "s0", [0, 1, 2, 3])

    def test_missing_detection_frame_is_none(self, tmp_path):
        save_detections(tmp_path, "s0", [0, 1, 5], [[], [], []])
        assert load_detections(tmp_path, "s0", [0, 1, 2]) == [(), (), None]

    def test_flow(self, tmp_path):
        flows = [FlowField(np.full((5, 3), k, np.float32)) for k in range(2)]
        save_flow(tmp_path, [0, 1], flows)
        back = load_flow(tmp_path, [0, 1, 2], [5, 5, 5])
        assert back[2] is None
        assert np.array_equal(back[1].vectors, flows[1].vectors)
        with pytest.raises(binfmt.CountMismatchError):
            load_flow(tmp_path, [0], [4])

    def test_gt_flows(self, tmp_path, scene):
        gts = scene_gt_flows(scene)
        save_gt_flows(tmp_path, [0, 1, 2], gts, DEFAULT_CLASS_MAP)
        stored = load_gt_flows(tmp_path)
        assert stored.taxonomy == DEFAULT_CLASS_MAP.name and stored.classes == gts[0].classes
        flow, cls = stored.frames[1]
        assert np.array_equal(cls, gts[1].class_index)
        assert np.array_equal(flow.vectors, gts[1].flow.vectors.astype(np.float32))
        assert load_gt_flows(tmp_path / "absent") is None
