import json
import subprocess
import sys

import pytest

from dynsfm.cli import main

SMALL = {"duration_s": 20.0, "beta": [0.0, 13.0], "n_static_points": 60, "n_objects": 3, "n_control_points": 10,
         "emit_prior_intrinsics": True}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root


def test_synth_writes_layout(dataset):
    names = sorted(p.name for p in (dataset / "data").iterdir())
    assert names == ["cameras.json", "control_points.csv", "matches.csv", "tracklets.csv", "truth.json"]


def test_pipeline_and_evaluate(dataset, tmp_path):
    data = dataset / "data"
    assert main(["sync", "--data", str(data), "--out", str(tmp_path / "timemaps.json")]) == 0
    tm = json.loads((tmp_path / "timemaps.json").read_text())
    assert tm["cameras"][1]["beta"] == pytest.approx(13.0, abs=0.5)
    for mode in ("so", "sd_sc"):
        out = tmp_path / mode
        assert main(["reconstruct", "--data", str(data), "--mode", mode, "--timemaps", str(tmp_path / "timemaps.json"),
                     "--out", str(out)]) == 0
        assert {p.name for p in out.iterdir()} == {"scene.json", "report.json", "scene.ply"}
    assert main(["evaluate", "--data", str(data), "--scene", str(tmp_path / "so" / "scene.json"),
                 "--scene", str(tmp_path / "sd_sc" / "scene.json"), "--out", str(tmp_path / "eval.json"),
                 "--residuals", str(tmp_path / "res.csv")]) == 0
    ev = json.loads((tmp_path / "eval.json").read_text())
    assert ev["success"] is True
    assert len(ev["table4"]["columns"]) == 12 and len(ev["table4"]["rows"]) == 1
    assert [r["mode"] for r in ev["table3"]["rows"]] == ["so", "so", "sd_sc", "sd_sc"]
    assert (tmp_path / "res.csv").read_text().startswith("scene,camera_id,object_id,frame,error_px\n")


def test_sync_is_byte_deterministic(dataset, tmp_path):
    data = dataset / "data"
    for k in range(2):
        assert main(["sync", "--data", str(data), "--seed", "3", "--out", str(tmp_path / f"t{k}.json")]) == 0
    assert (tmp_path / "t0.json").read_bytes() == (tmp_path / "t1.json").read_bytes()


def test_static_only_on_tracklet_only_data_fails_with_init_failed(dataset, tmp_path, capsys):
    data = dataset / "data"
    trk = tmp_path / "trk"
    trk.mkdir()
    for name in ("cameras.json", "tracklets.csv"):
        (trk / name).write_bytes((data / name).read_bytes())
    (trk / "matches.csv").write_text("cam_i,cam_j,u1,v1,u2,v2\n")
    assert main(["reconstruct", "--data", str(trk), "--mode", "so"]) == 3
    assert "init-failed" in capsys.readouterr().err


def test_malformed_input_exits_with_validation_error(tmp_path, capsys):
    (tmp_path / "cameras.json").write_text('{"cameras": [{"id": 0, "fps": "fast"}]}')
    assert main(["calibrate", "--data", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("validation-error") and "cameras.json" in err
    assert main(["calibrate", "--data", str(tmp_path / "missing")]) == 2


def test_module_entry_point(dataset):
    r = subprocess.run([sys.executable, "-m", "dynsfm", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "reconstruct" in r.stdout
