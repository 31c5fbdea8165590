import math

import numpy as np
import pytest

from egotrack.geometry import EulerAngles, Quaternion
from egotrack.labelgen import Box2D
from egotrack.metrics import (
    DEFAULT_T_C,
    DEFAULT_T_IOU,
    IOU_THRESHOLDS,
    DetectionOutcome,
    bin_map,
    classify_detection,
    evaluate,
    pose_errors,
    precision,
)
from egotrack.ssdaf import Detection, bin_orientation

from conftest import random_quaternion


def det(score, box=None):
    return Detection(box or Box2D(0.5, 0.5, 0.2, 0.2), np.zeros(3), score)


GT = Box2D(0.5, 0.5, 0.2, 0.2)


class TestClassification:
    def test_true_positive(self):
        assert classify_detection(GT, det(0.9)) is DetectionOutcome.TP

    def test_true_negative(self):
        assert classify_detection(None, None) is DetectionOutcome.TN

    def test_low_score_no_gt_is_tn(self):
        # 0.00005 < t_c = 0.0001
        assert classify_detection(None, det(0.00005)) is DetectionOutcome.TN

    def test_low_score_with_gt_is_fn(self):
        assert classify_detection(GT, det(0.00005)) is DetectionOutcome.FN

    def test_spurious_detection_is_fp(self):
        assert classify_detection(None, det(0.9)) is DetectionOutcome.FP

    def test_low_iou_is_fp(self):
        # disjoint boxes: IOU 0.0 < 0.05 despite confident score
        off = Box2D(0.1, 0.1, 0.05, 0.05)
        assert classify_detection(GT, det(0.9, off)) is DetectionOutcome.FP

    def test_iou_just_below_threshold_is_fp(self):
        # overlap area tuned so IOU ~ 0.03 < 0.05
        gt = Box2D(0.0, 0.0, 0.2, 0.2)
        pred_box = Box2D(0.188, 0.0, 0.2, 0.2)
        from egotrack.ssdaf import iou

        assert iou(gt, pred_box) < 0.05
        assert classify_detection(gt, det(0.9, pred_box)) is DetectionOutcome.FP

    def test_score_exactly_at_threshold_is_fp(self):
        # strict comparisons on both sides of t_c
        assert classify_detection(GT, det(DEFAULT_T_C)) is DetectionOutcome.FP

    def test_missed_gt_is_fn(self):
        assert classify_detection(GT, None) is DetectionOutcome.FN


class TestPrecision:
    def test_three_tp_one_fp(self):
        o = [DetectionOutcome.TP] * 3 + [DetectionOutcome.FP]
        assert precision(o) == 0.75

    def test_vacuous_is_one(self):
        assert precision([DetectionOutcome.TN, DetectionOutcome.FN]) == 1.0

    def test_ignores_tn_fn(self):
        o = [DetectionOutcome.TP, DetectionOutcome.TN, DetectionOutcome.FN]
        assert precision(o) == 1.0


class TestPoseErrors:
    def test_single_345_triangle(self):
        mae, rmse = pose_errors([((0.0, 0.0), (3.0, 4.0))], "uv")
        assert mae == 5.0 and rmse == 5.0

    def test_mae_rmse_distinct(self):
        # distances 1 and 7: mae 4, rmse sqrt((1+49)/2) = 5
        pairs = [((0.0, 0.0), (1.0, 0.0)), ((0.0, 0.0), (7.0, 0.0))]
        mae, rmse = pose_errors(pairs, "uv")
        assert abs(mae - 4.0) < 1e-12 and abs(rmse - 5.0) < 1e-12

    def test_rmse_at_least_mae(self, rng):
        pairs = [(rng.normal(size=3), rng.normal(size=3)) for _ in range(100)]
        mae, rmse = pose_errors(pairs, "xyz")
        assert rmse >= mae

    def test_rayleigh_mean(self):
        # isotropic 2D gaussian noise: E|d| = sigma * sqrt(pi/2)
        rng = np.random.default_rng(21)
        sigma = 2.0
        pairs = [((0.0, 0.0), tuple(rng.normal(0, sigma, 2))) for _ in range(200000)]
        mae, rmse = pose_errors(pairs, "uv")
        assert abs(mae - sigma * math.sqrt(math.pi / 2)) < 0.02
        assert abs(rmse - sigma * math.sqrt(2.0)) < 0.02

    def test_orientation_axis_split(self):
        g = Quaternion.identity()
        p = EulerAngles(0.1, 0.0, -0.2).to_quaternion()
        mae, rmse = pose_errors([(g, p)], "orientation")
        yaw, pitch, roll = mae
        assert abs(yaw - 0.2) < 1e-9 and abs(pitch) < 1e-9 and abs(roll - 0.1) < 1e-9

    def test_orientation_wrapping(self):
        g = EulerAngles(0.0, 0.0, math.pi - 0.05).to_quaternion()
        p = EulerAngles(0.0, 0.0, -math.pi + 0.05).to_quaternion()
        mae, _ = pose_errors([(g, p)], "orientation")
        assert abs(mae[0] - 0.1) < 1e-9  # wraps across the pi boundary

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no true positives"):
            pose_errors([], "uv")

    def test_unknown_space(self):
        with pytest.raises(ValueError, match="unknown"):
            pose_errors([((0, 0), (0, 0))], "se3")


class TestBinMap:
    def test_perfect(self):
        scores = np.zeros(27)
        scores[5] = 1.0
        assert bin_map([(5, scores)]) == 1.0

    def test_half(self):
        right = np.zeros(27)
        right[3] = 1.0
        wrong = np.zeros(27)
        wrong[4] = 1.0
        assert bin_map([(3, right), (3, wrong)]) == 0.5

    def test_chance_level(self):
        # random scores vs random bins over 512 cells converges to 1/512
        rng = np.random.default_rng(9)
        samples = [
            (int(rng.integers(0, 512)), rng.uniform(size=512)) for _ in range(200000)
        ]
        acc = bin_map(samples)
        assert abs(acc - 1 / 512) < 5e-4

    def test_consistent_with_binning(self, rng):
        samples = []
        for _ in range(50):
            q = random_quaternion(rng)
            idx = bin_orientation(q, "full", 27)
            scores = np.zeros(27)
            scores[idx] = 1.0
            samples.append((idx, scores))
        assert bin_map(samples) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bin_map([])


class TestEvaluate:
    def _pairs(self):
        # 3 TP, 1 FP (spurious), 1 TN, 1 FN
        return [
            (GT, det(0.9)),
            (GT, det(0.8)),
            (GT, det(0.7)),
            (None, det(0.9)),
            (None, None),
            (GT, None),
        ]

    def test_counts_and_precision(self):
        rep = evaluate(self._pairs())
        assert rep.counts == {"TP": 3, "FP": 1, "TN": 1, "FN": 1}
        assert rep.map_at[DEFAULT_T_IOU] == 0.75

    def test_monotone_in_iou_threshold(self, rng):
        pairs = []
        for _ in range(300):
            cx = rng.uniform(0.3, 0.7)
            gt = Box2D(cx, 0.5, 0.2, 0.2)
            shift = rng.uniform(0.0, 0.25)
            pairs.append((gt, det(0.9, Box2D(cx + shift, 0.5, 0.2, 0.2))))
        rep = evaluate(pairs)
        ts = sorted(IOU_THRESHOLDS)
        vals = [rep.map_at[t] for t in ts]
        assert vals[0] >= vals[1] >= vals[2]
        assert vals[0] > vals[2]  # the spread actually exercises the thresholds

    def test_errors_restricted_to_tp(self):
        pairs = self._pairs()
        uv = [((0.0, 0.0), (3.0, 4.0))] * len(pairs)
        rep = evaluate(pairs, uv_pairs=uv)
        assert rep.uv_mae == 5.0 and rep.uv_rmse == 5.0

    def test_to_dict_keys(self):
        d = evaluate(self._pairs()).to_dict()
        assert {"map_at", "uv_mae_px", "xyz_rmse_m", "orient_mae_rad", "bin_map", "counts"} <= set(d)

    def test_orientation_and_bins_pass_through(self, rng):
        pairs = self._pairs()
        q = random_quaternion(rng)
        orient = [(q, q)] * len(pairs)
        scores = np.zeros(27)
        scores[0] = 1.0
        rep = evaluate(pairs, orient_pairs=orient, bin_pairs=[(0, scores)] * len(pairs))
        assert max(rep.orient_mae) < 1e-9
        assert rep.bin_map == 1.0
