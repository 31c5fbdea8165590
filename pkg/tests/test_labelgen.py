import itertools
import math

import numpy as np
import pytest

from egotrack.camera import default_rig
from egotrack.geometry import Pose, Quaternion
from egotrack.labelgen import (
    CUBE_BOUNDS,
    Box2D,
    FrameRecord,
    bounding_cube_corners,
    clean_dataset,
    flag_suspect_frames,
    label_dataset,
    label_sample,
    project_hand_box,
    sample_from_json,
    samples_from_jsonl,
    samples_to_jsonl,
)

from conftest import random_quaternion


def record(pos, valid=True, fid=0):
    return FrameRecord(
        timestamp=fid / 30.0,
        frame_id=fid,
        T_Cam_CT=Pose(Quaternion.identity(), np.asarray(pos, dtype=float)),
        T_World_Cam=Pose.identity(),
        tracking_valid=valid,
    )


def visible_pose(rng):
    """Random tip pose whose cube is comfortably inside the default rig FOV."""
    q = random_quaternion(rng)
    t = rng.uniform(-0.15, 0.15, 3) + [0, 0, rng.uniform(0.35, 0.8)]
    return Pose(q, t)


class TestCubeCorners:
    def test_identity_gives_local_permutation(self):
        corners = bounding_cube_corners(Pose.identity())
        expected = np.array(list(itertools.product(*CUBE_BOUNDS)))
        assert np.allclose(corners, expected)

    def test_translation_shifts(self):
        shifted = bounding_cube_corners(Pose(Quaternion.identity(), np.array([0, 0, 0.5])))
        base = bounding_cube_corners(Pose.identity())
        assert np.allclose(shifted - base, [0, 0, 0.5])

    def test_rotation_matches_matrix_oracle(self, rng):
        q = Quaternion.from_axis_angle((0, 0, 1), math.pi / 2)
        T = Pose(q, np.zeros(3))
        got = bounding_cube_corners(T)
        R = q.to_matrix()
        want = (R @ np.array(list(itertools.product(*CUBE_BOUNDS))).T).T
        assert np.allclose(got, want, atol=1e-12)


class TestProjectHandBox:
    def test_centered_cube(self):
        rig = default_rig()
        T = Pose(Quaternion.identity(), np.array([0.0, 0.0, 0.5]))
        box = project_hand_box(bounding_cube_corners(T), rig.left)
        # cube straddles the optical axis; center lands near the principal point
        assert abs(box.cx - 0.5) < 0.1 and abs(box.cy - 0.5) < 0.1

    def test_containment(self, rng):
        rig = default_rig()
        for _ in range(1000):
            T = visible_pose(rng)
            corners = bounding_cube_corners(T)
            box = project_hand_box(corners, rig.left)
            x0, y0, x1, y1 = box.corners()
            for c in corners:
                u, v = rig.left.project(c)
                assert x0 - 1e-12 <= u / rig.left.width <= x1 + 1e-12
                assert y0 - 1e-12 <= v / rig.left.height <= y1 + 1e-12

    def test_minimality(self, rng):
        rig = default_rig()
        px_w = 1.0 / rig.left.width
        px_h = 1.0 / rig.left.height
        for _ in range(200):
            corners = bounding_cube_corners(visible_pose(rng))
            box = project_hand_box(corners, rig.left)
            uv = np.array([rig.left.project(c) for c in corners])
            un = uv[:, 0] / rig.left.width
            vn = uv[:, 1] / rig.left.height
            x0, y0, x1, y1 = box.corners()
            # shrinking any side by one pixel must exclude at least one corner
            assert np.any(un < x0 + px_w)
            assert np.any(un > x1 - px_w)
            assert np.any(vn < y0 + px_h)
            assert np.any(vn > y1 - px_h)

    def test_invisible_hand_raises(self):
        rig = default_rig()
        T = Pose(Quaternion.identity(), np.array([0.0, 0.0, -0.5]))  # behind camera
        with pytest.raises(ValueError, match="not visible"):
            project_hand_box(bounding_cube_corners(T), rig.left)


class TestCleanDataset:
    def test_all_valid_kept(self):
        recs = [record([0, 0, 0.5], fid=i) for i in range(50)]
        kept, rep = clean_dataset(recs)
        assert len(kept) == 50 and rep.kept == 50
        assert rep.total() == 50

    def test_dropout_removes_window(self):
        recs = [record([0, 0, 0.5], valid=(i != 10), fid=i) for i in range(60)]
        kept, rep = clean_dataset(recs)
        dropped_ids = {r.frame_id for r in recs} - {r.frame_id for r in kept}
        assert dropped_ids == set(range(10, 31))  # frame 10 plus 20 subsequent
        assert rep.dropped_missing == 1
        assert rep.dropped_reinit == 20

    def test_out_of_range_dropped(self):
        recs = [record([0, 0, 0.5], fid=0), record([0, 0, 1.2], fid=1)]
        kept, rep = clean_dataset(recs)
        assert rep.dropped_range == 1 and rep.kept == 1

    def test_reason_order_missing_first(self):
        # an invalid frame that is also out of range counts as missing
        recs = [record([0, 0, 1.5], valid=False, fid=0)]
        _, rep = clean_dataset(recs)
        assert rep.dropped_missing == 1 and rep.dropped_range == 0

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        recs = [
            record(rng.uniform(-0.3, 1.3, 3), valid=bool(rng.random() > 0.05), fid=i)
            for i in range(200)
        ]
        once, _ = clean_dataset(recs)
        twice, rep2 = clean_dataset(once)
        assert [r.frame_id for r in once] == [r.frame_id for r in twice]
        assert rep2.kept == len(once)


class TestFlagSuspect:
    def _samples(self, rng, n=5):
        rig = default_rig()
        recs = [
            FrameRecord(i / 30.0, i, visible_pose(rng), Pose.identity(), True) for i in range(n)
        ]
        return label_dataset(recs, rig)

    def test_perfect_predictions(self, rng):
        samples = self._samples(rng)
        preds = [s.record.T_Cam_CT.translation for s in samples]
        assert flag_suspect_frames(samples, preds) == []

    def test_displaced_prediction_flagged(self, rng):
        samples = self._samples(rng)
        preds = [s.record.T_Cam_CT.translation.copy() for s in samples]
        preds[2] = preds[2] + [0.05, 0, 0]
        assert flag_suspect_frames(samples, preds) == [samples[2].record.frame_id]

    def test_boundary_not_flagged(self, rng):
        samples = self._samples(rng, n=1)
        preds = [samples[0].record.T_Cam_CT.translation + [0.03, 0, 0]]
        assert flag_suspect_frames(samples, preds) == []

    def test_length_mismatch(self, rng):
        samples = self._samples(rng, n=3)
        with pytest.raises(ValueError, match="mismatch"):
            flag_suspect_frames(samples, [np.zeros(3)])


class TestLabelSample:
    def test_stereo_keypoint_consistency(self, rng):
        rig = default_rig()
        for _ in range(100):
            T = visible_pose(rng)
            rec = FrameRecord(0.0, 0, T, Pose.identity(), True)
            s = label_sample(rec, rig)
            # right keypoint equals the left tip transformed through the extrinsics
            tip_r = rig.T_left_right.inverse().apply(T.translation)
            u, v = rig.right.project(tip_r)
            assert abs(s.keypoint_right[0] - u) < 1e-6
            assert abs(s.keypoint_right[1] - v) < 1e-6
            assert abs(s.keypoint_right[2] - tip_r[2]) < 1e-12

    def test_jsonl_round_trip_and_determinism(self, rng):
        rig = default_rig()
        recs = [FrameRecord(i / 30.0, i, visible_pose(rng), Pose.identity(), True) for i in range(10)]
        samples = label_dataset(recs, rig)
        text = samples_to_jsonl(samples)
        assert text == samples_to_jsonl(samples)  # byte-identical
        back = samples_from_jsonl(text)
        assert len(back) == len(samples)
        for a, b in zip(back, samples):
            assert np.allclose(a.keypoint_left, b.keypoint_left)
            assert abs(a.box_left.cx - b.box_left.cx) < 1e-12
            assert a.orientation.rotation_equal(b.orientation, tol=1e-9)

    def test_corrupt_row_reports_line(self):
        good = '{"t": 0, "frame_id": 0, "box_l": [0.5,0.5,0.1,0.1], "box_r": [0.5,0.5,0.1,0.1], "kp_l": [320,240,0.5], "kp_r": [300,240,0.5], "q": [1,0,0,0], "label": "right_hand"}'
        bad = '{"t": 1}'
        with pytest.raises(ValueError, match="line 2"):
            samples_from_jsonl(good + "\n" + bad + "\n")
