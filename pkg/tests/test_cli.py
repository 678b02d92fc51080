import json

import pytest

from vesselwall.cli import main
from vesselwall.io import write_json
from vesselwall.phantom import PhantomSpec, VesselSpec


def small_spec():
    return PhantomSpec(
        width=160, height=96, depth=8, seed=4, dropout_slices=[3],
        vessels=[VesselSpec(x=35, y=48, lumen_radius=10, wall_thickness=4, amplitude=(2, 1)),
                 VesselSpec(x=125, y=50, lumen_radius=(11, 12), wall_thickness=5)])


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("ph")
    write_json(small_spec().to_dict(), root / "spec.json")
    assert main(["phantom", "--spec", str(root / "spec.json"), "--out", str(root / "p")]) == 0
    return root / "p"


def test_phantom_files(phantom_dir):
    for name in ("spec.json", "volume.json", "volume.raw", "truth.json", "truth_contours.json",
                 "truth_masks.json"):
        assert (phantom_dir / name).exists()


def test_commands_chain(phantom_dir, tmp_path, capsys):
    vol = str(phantom_dir / "volume.json")
    assert main(["detect", "--volume", vol, "--out", str(tmp_path / "d")]) == 0
    assert main(["track", "--detections", str(tmp_path / "d" / "detections.json"),
                 "--out", str(tmp_path / "t")]) == 0
    cl = str(tmp_path / "t" / "centerlines.json")
    assert main(["segment", "--volume", vol, "--centerlines", cl,
                 "--out", str(tmp_path / "s")]) == 0
    assert main(["refine", "--volume", vol, "--centerlines", cl,
                 "--out", str(tmp_path / "r")]) == 0
    for name in ("contours.json", "confidence.json", "masks.json", "report.json"):
        assert (tmp_path / "r" / name).exists()
    assert (tmp_path / "r" / "refined_centerlines.json").exists()
    out = capsys.readouterr().out
    assert "target 0" in out and "not converged" in out


def test_pipeline_with_eval(phantom_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["pipeline", "--volume", str(phantom_dir / "volume.json"),
                 "--truth", str(phantom_dir), "--out", str(out)]) == 0
    e = json.loads((out / "eval.json").read_text())
    assert e["mean_dsc"] > 0.9 and e["mean_iou"] > 0.8
    assert "mean DSC" in capsys.readouterr().out
    capsys.readouterr()
    assert main(["eval", "--pred", str(out), "--truth", str(phantom_dir)]) == 0
    assert "mean DSC" in capsys.readouterr().out


def test_empty_detections_fail_track(tmp_path, capsys):
    p = tmp_path / "dets.json"
    p.write_text("[]")
    code = main(["track", "--detections", str(p), "--out", str(tmp_path / "t")])
    assert code == 2
    assert "no tracklets" in capsys.readouterr().err
    assert not (tmp_path / "t").exists()
    assert list(tmp_path.iterdir()) == [p]


def test_missing_input_is_exit_1(tmp_path, capsys):
    code = main(["detect", "--volume", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "vesselwall: detect:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_config_is_exit_1(tmp_path, phantom_dir, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tau_link": 2}))
    code = main(["detect", "--volume", str(phantom_dir / "volume.json"), "--config", str(cfg),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "tau_link" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["detect"])
    assert exc.value.code == 1
    assert main(["pipeline", "--out", str(tmp_path / "o")]) == 1
    assert main(["detect", "--volume", "x.json"]) == 1


def test_failure_keeps_previous_outputs(tmp_path, phantom_dir):
    out = tmp_path / "d"
    vol = str(phantom_dir / "volume.json")
    assert main(["detect", "--volume", vol, "--out", str(out)]) == 0
    before = (out / "detections.json").read_bytes()
    assert main(["detect", "--volume", str(tmp_path / "missing.json"), "--out", str(out)]) == 1
    assert (out / "detections.json").read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["d"]
