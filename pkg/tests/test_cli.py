import filecmp
import json
import os

import numpy as np
import pytest
from PIL import Image

from semmap.cli import EXIT_INPUT, EXIT_OK, EXIT_STAGE, main
from semmap.scene import SemanticClass, SemanticMesh, save_mesh


SYNTH_FILES = ("map.mesh", "world.mesh", "store.txt", "cam.png",
               "manifest.json", "scenario.cfg")


def synth(out, seed=3, kind="wall", changes="add_banner"):
    rc = main(["synth", "--seed", str(seed), "--kind", kind,
               "--changes", changes, "--out", str(out)])
    assert rc == EXIT_OK
    return out


def pose_arg(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return ",".join(str(v) for v in json.load(fh)["pose"])


def small_grid_cfg(out, radius=2.0, span=4.0, yaw_step=2.0):
    path = os.path.join(out, "test.cfg")
    with open(os.path.join(out, "scenario.cfg")) as fh:
        base = fh.read()
    with open(path, "w") as fh:
        fh.write(base)
        fh.write(f"grid_radius_m = {radius}\n")
        fh.write(f"grid_yaw_span_deg = {span}\n")
        fh.write(f"grid_yaw_step_deg = {yaw_step}\n")
    return path


def test_synth_same_seed_byte_identical(tmp_path):
    a = synth(tmp_path / "a")
    b = synth(tmp_path / "b")
    for name in SYNTH_FILES:
        assert filecmp.cmp(a / name, b / name, shallow=False), name


def test_synth_different_seed_differs(tmp_path):
    a = synth(tmp_path / "a", seed=3)
    b = synth(tmp_path / "b", seed=4)
    assert not filecmp.cmp(a / "cam.png", b / "cam.png", shallow=False)


def test_render_empty_mesh_all_sky(tmp_path):
    empty = SemanticMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                         np.zeros(0, dtype=np.uint8))
    mesh_path = tmp_path / "empty.mesh"
    save_mesh(empty, mesh_path)
    out = tmp_path / "out"
    rc = main(["render", "--mesh", str(mesh_path), "--pose", "0,0,1.6,0,0,0",
               "--out", str(out)])
    assert rc == EXIT_OK
    img = np.asarray(Image.open(out / "render_class.png"))
    assert (img == int(SemanticClass.SKY)).all()


def test_render_scenario(tmp_path):
    out = synth(tmp_path / "s")
    rc = main(["render", "--config", str(out / "scenario.cfg"),
               "--mesh", str(out / "map.mesh"), "--pose", pose_arg(out),
               "--out", str(tmp_path / "r")])
    assert rc == EXIT_OK
    assert (tmp_path / "r" / "render_cloud.txt").exists()


def test_localize_self_render(tmp_path, capsys):
    out = synth(tmp_path / "s")
    rc = main(["render", "--config", str(out / "scenario.cfg"),
               "--mesh", str(out / "world.mesh"), "--pose", pose_arg(out),
               "--out", str(tmp_path / "r")])
    assert rc == EXIT_OK
    cfg = small_grid_cfg(str(out))
    rc = main(["localize", "--config", cfg,
               "--mesh", str(out / "world.mesh"),
               "--image", str(tmp_path / "r" / "render_class.png"),
               "--pose", pose_arg(out), "--out", str(tmp_path / "l")])
    assert rc == EXIT_OK
    printed = capsys.readouterr().out.strip().splitlines()[-1]
    got = [float(v) for v in printed.split(",")]
    truth = [float(v) for v in pose_arg(out).split(",")]
    assert got == pytest.approx(truth, abs=1e-12)


def test_update_no_localize_inserts_banner(tmp_path, capsys):
    out = synth(tmp_path / "s")
    store_before = (out / "store.txt").read_text()
    rc = main(["update", "--no-localize",
               "--config", str(out / "scenario.cfg"),
               "--mesh", str(out / "map.mesh"),
               "--image", str(out / "cam.png"),
               "--store", str(out / "store.txt"),
               "--pose", pose_arg(out), "--out", str(tmp_path / "u")])
    assert rc == EXIT_OK
    audit = capsys.readouterr().out
    assert "verdict=update" in audit
    store_after = (out / "store.txt").read_text()
    assert store_after != store_before
    assert "material" in store_after


def test_eval_sweep(tmp_path, capsys):
    out = synth(tmp_path / "s")
    rc = main(["eval-sweep", "--config", str(out / "scenario.cfg"),
               "--mesh", str(out / "map.mesh"),
               "--image", str(out / "cam.png"),
               "--store", str(out / "store.txt"),
               "--pose", pose_arg(out), "--errors", "0,1",
               "--direction", "0.7071067811865476,-0.7071067811865476,0",
               "--out", str(tmp_path / "e")])
    assert rc == EXIT_OK
    csv_path = capsys.readouterr().out.strip().splitlines()[-1]
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "injected_error_m,position_error_m,area_error_pct"
    assert len(lines) == 3


def test_bad_mesh_path_exits_2(tmp_path, capsys):
    rc = main(["render", "--mesh", str(tmp_path / "nope.mesh"),
               "--pose", "0,0,1.6,0,0,0", "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT
    assert "semmap:" in capsys.readouterr().err


def test_bad_pose_exits_2(tmp_path):
    out = synth(tmp_path / "s")
    rc = main(["render", "--mesh", str(out / "map.mesh"), "--pose", "1,2,3",
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT


def test_dimension_mismatch_exits_2(tmp_path, capsys):
    out = synth(tmp_path / "s")
    bad = tmp_path / "bad.png"
    Image.fromarray(np.full((10, 10), 6, dtype=np.uint8)).save(bad)
    rc = main(["localize", "--config", str(out / "scenario.cfg"),
               "--mesh", str(out / "map.mesh"), "--image", str(bad),
               "--pose", pose_arg(out), "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT
    assert "camera image" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path):
    out = synth(tmp_path / "s")
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 1\n")
    rc = main(["render", "--config", str(cfg), "--mesh", str(out / "map.mesh"),
               "--pose", pose_arg(out), "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT


def test_stage_failure_exits_3(tmp_path, capsys, monkeypatch):
    out = synth(tmp_path / "s")

    def boom(*args, **kwargs):
        raise RuntimeError("injected")

    import semmap.pipeline as pipeline

    monkeypatch.setattr(pipeline, "detect_changes", boom)
    rc = main(["update", "--no-localize",
               "--config", str(out / "scenario.cfg"),
               "--mesh", str(out / "map.mesh"),
               "--image", str(out / "cam.png"),
               "--store", str(out / "store.txt"),
               "--pose", pose_arg(out), "--out", str(tmp_path / "u")])
    assert rc == EXIT_STAGE
    assert "detect" in capsys.readouterr().err
