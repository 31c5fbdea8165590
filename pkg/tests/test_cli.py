import json
import os

import numpy as np
import pytest

from egotrack.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from egotrack.labelgen import samples_from_jsonl


@pytest.fixture(scope="module")
def session(tmp_path_factory):
    """One shared noiseless simulated session for the CLI tests."""
    root = tmp_path_factory.mktemp("session")
    out = root / "sim"
    cfg = root / "config.json"
    cfg.write_text(json.dumps({"duration": 5.0, "camera_rate": 25.0}))
    rc = main(["simulate", "--seed", "3", "--config", str(cfg), "--out", str(out)])
    assert rc == EXIT_OK
    return out


def read_labels(session):
    return samples_from_jsonl((session / "labels.jsonl").read_text())


class TestSimulate:
    def test_outputs_exist(self, session):
        for name in (
            "rig.json",
            "mocap_headset.jsonl",
            "mocap_controller.jsonl",
            "mocap_tip.jsonl",
            "camera_traj.jsonl",
            "labels.jsonl",
            "manifest.json",
        ):
            assert (session / name).exists()

    def test_manifest_consistent(self, session):
        manifest = json.loads((session / "manifest.json").read_text())
        assert manifest["n_labels"] == len(read_labels(session))
        assert manifest["config"]["camera_rate"] == 25.0

    def test_deterministic(self, session, tmp_path):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"duration": 5.0, "camera_rate": 25.0}))
        out2 = tmp_path / "sim2"
        assert main(["simulate", "--seed", "3", "--config", str(cfg), "--out", str(out2)]) == EXIT_OK
        assert (out2 / "labels.jsonl").read_text() == (session / "labels.jsonl").read_text()

    def test_bad_config_is_validation_error(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"camera_rate": -1.0}))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


class TestCalibrate:
    def test_recovers_truth(self, session, tmp_path):
        out = tmp_path / "calib.json"
        rc = main(
            [
                "calibrate",
                "--mocap", str(session / "mocap_headset.jsonl"),
                "--camera", str(session / "camera_traj.jsonl"),
                "--cb", str(session / "mocap_controller.jsonl"),
                "--ct", str(session / "mocap_tip.jsonl"),
                "--search-window", "0.5",
                "--out", str(out),
            ]
        )
        assert rc == EXIT_OK
        report = json.loads(out.read_text())
        manifest = json.loads((session / "manifest.json").read_text())
        got = np.array(report["hand_eye"]["translation_m"])
        want = np.array(manifest["true_hand_eye"]["translation_m"])
        assert np.linalg.norm(got - want) < 1e-6
        got_tip = np.array(report["tip_offset"]["translation_m"])
        want_tip = np.array(manifest["true_tip_offset"]["translation_m"])
        assert np.linalg.norm(got_tip - want_tip) < 1e-6
        assert abs(report["time_offset_s"]) < 1e-3

    def test_missing_file_is_io_error(self, session, tmp_path):
        rc = main(
            [
                "calibrate",
                "--mocap", str(tmp_path / "nope.jsonl"),
                "--camera", str(session / "camera_traj.jsonl"),
                "--out", str(tmp_path / "c.json"),
            ]
        )
        assert rc == EXIT_IO


@pytest.fixture(scope="module")
def calib_file(session, tmp_path_factory):
    out = tmp_path_factory.mktemp("calib") / "calib.json"
    rc = main(
        [
            "calibrate",
            "--mocap", str(session / "mocap_headset.jsonl"),
            "--camera", str(session / "camera_traj.jsonl"),
            "--cb", str(session / "mocap_controller.jsonl"),
            "--ct", str(session / "mocap_tip.jsonl"),
            "--out", str(out),
        ]
    )
    assert rc == EXIT_OK
    return out


class TestLabelgen:
    def test_matches_simulated_labels(self, session, calib_file, tmp_path):
        out = tmp_path / "labels.jsonl"
        rc = main(
            [
                "labelgen",
                "--rig", str(session / "rig.json"),
                "--traj", str(session / "mocap_headset.jsonl"), str(session / "mocap_controller.jsonl"),
                "--calib", str(calib_file),
                "--camera-traj", str(session / "camera_traj.jsonl"),
                "--out", str(out),
            ]
        )
        assert rc == EXIT_OK
        got = samples_from_jsonl(out.read_text())
        want = read_labels(session)
        assert len(got) == len(want)
        for a, b in zip(got, want):
            assert abs(a.keypoint_left[0] - b.keypoint_left[0]) < 1e-6
            assert abs(a.keypoint_left[2] - b.keypoint_left[2]) < 1e-9

    def test_single_traj_rejected(self, session, calib_file, tmp_path):
        rc = main(
            [
                "labelgen",
                "--rig", str(session / "rig.json"),
                "--traj", str(session / "mocap_headset.jsonl"),
                "--calib", str(calib_file),
                "--out", str(tmp_path / "l.jsonl"),
            ]
        )
        assert rc == EXIT_VALIDATION


@pytest.fixture(scope="module")
def schema_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("schema") / "schema.json"
    p.write_text(json.dumps({"variant": "AFStereo3D"}))
    return p


class TestEncodeRoundtrip:
    def test_encode_writes_binary_and_sidecar(self, session, schema_file, tmp_path):
        out = tmp_path / "enc"
        rc = main(
            [
                "encode",
                "--labels", str(session / "labels.jsonl"),
                "--schema", str(schema_file),
                "--rig", str(session / "rig.json"),
                "--out", str(out),
            ]
        )
        assert rc == EXIT_OK
        sidecar = json.loads((out / "targets.json").read_text())
        rows = np.fromfile(out / "targets.bin", dtype="<f4")
        assert rows.size == sidecar["n_samples"] * sidecar["n_anchors"] * sidecar["row_width"]
        assert sidecar["row_width"] == 4 + 6 + 2

    def test_roundtrip_gate_passes(self, session, schema_file, tmp_path):
        out = tmp_path / "rt.json"
        rc = main(
            [
                "roundtrip",
                "--labels", str(session / "labels.jsonl"),
                "--schema", str(schema_file),
                "--rig", str(session / "rig.json"),
                "--out", str(out),
            ]
        )
        assert rc == EXIT_OK
        assert json.loads(out.read_text())["max_error"] <= 1e-9

    def test_roundtrip_binned_variant(self, session, tmp_path):
        schema = tmp_path / "binned.json"
        schema.write_text(json.dumps({"variant": "AFBinned", "bins": 27}))
        rc = main(
            [
                "roundtrip",
                "--labels", str(session / "labels.jsonl"),
                "--schema", str(schema),
                "--rig", str(session / "rig.json"),
            ]
        )
        assert rc == EXIT_OK

    def test_corrupt_labels_is_validation_error(self, schema_file, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"t": 0}\n')
        rc = main(["roundtrip", "--labels", str(bad), "--schema", str(schema_file)])
        assert rc == EXIT_VALIDATION


class TestEvaluate:
    def _perfect_preds(self, session, tmp_path):
        pred = tmp_path / "pred.jsonl"
        lines = []
        for line in (session / "labels.jsonl").read_text().splitlines():
            obj = json.loads(line)
            obj["score"] = 0.99
            lines.append(json.dumps(obj))
        pred.write_text("\n".join(lines) + "\n")
        return pred

    def test_perfect_predictions(self, session, tmp_path):
        pred = self._perfect_preds(session, tmp_path)
        out = tmp_path / "eval"
        rc = main(
            [
                "evaluate",
                "--labels", str(session / "labels.jsonl"),
                "--pred", str(pred),
                "--rig", str(session / "rig.json"),
                "--out", str(out),
            ]
        )
        assert rc == EXIT_OK
        rep = json.loads((out / "metrics.json").read_text())
        assert all(v == 1.0 for v in rep["map_at"].values())
        assert rep["uv_mae_px"] == 0.0
        assert rep["xyz_rmse_m"] == 0.0
        assert (out / "per_frame_errors.csv").exists()

    def test_figure_rendered_next_to_csv(self, session, tmp_path):
        pred = self._perfect_preds(session, tmp_path)
        out = tmp_path / "eval_png"
        rc = main(
            [
                "evaluate",
                "--labels", str(session / "labels.jsonl"),
                "--pred", str(pred),
                "--out", str(out),
                "--format", "png",
            ]
        )
        assert rc == EXIT_OK
        assert (out / "error_hist.png").exists()
        assert (out / "per_frame_errors.csv").exists()

    def test_count_mismatch(self, session, tmp_path):
        pred = tmp_path / "short.jsonl"
        pred.write_text((session / "labels.jsonl").read_text().splitlines()[0] + "\n")
        rc = main(
            [
                "evaluate",
                "--labels", str(session / "labels.jsonl"),
                "--pred", str(pred),
                "--out", str(tmp_path / "e"),
            ]
        )
        assert rc == EXIT_VALIDATION


class TestStats:
    def test_csv_outputs(self, session, tmp_path):
        out = tmp_path / "stats"
        rc = main(["stats", "--labels", str(session / "labels.jsonl"), "--out", str(out)])
        assert rc == EXIT_OK
        names = os.listdir(out)
        assert "occupancy.csv" in names
        assert "pos_z.csv" in names and "yaw_deg.csv" in names
        assert not any(n.endswith(".svg") or n.endswith(".png") for n in names)

    def test_figures_alongside_csv(self, session, tmp_path):
        out = tmp_path / "stats_svg"
        rc = main(
            ["stats", "--labels", str(session / "labels.jsonl"), "--out", str(out), "--format", "svg"]
        )
        assert rc == EXIT_OK
        names = os.listdir(out)
        assert "occupancy.csv" in names
        assert any(n.endswith(".svg") for n in names)

    def test_empty_labels(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        rc = main(["stats", "--labels", str(empty), "--out", str(tmp_path / "s")])
        assert rc == EXIT_VALIDATION
