import math

import numpy as np
import pytest

from lidarscene import layout as layout_mod, scorenet, sensor
from lidarscene.cli import main
from lidarscene.layout import Pose, SceneParams, SemanticPrimitive

SMALL_SENSOR = """
sensor.rows = 16
sensor.cols = 64
render.tessellation = 8
"""

TRAIN_CFG = (
    SMALL_SENSOR
    + """
model.widths = 8,8
model.emb_dim = 8
model.blocks_per_level = 1
train.batch_size = 2
sampler.steps_per_level = 2
schedule.levels = 3
"""
)


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "sensor.cfg"
    path.write_text(SMALL_SENSOR)
    return str(path)


@pytest.fixture
def scene_file(tmp_path):
    scene = layout_mod.Layout()
    scene = layout_mod.add_primitive(
        scene, SemanticPrimitive(3, "cuboid", (6.0, 0.0, 0.75), (4.0, 1.8, 1.5), 0.0)  # car
    )
    path = tmp_path / "scene.layout"
    layout_mod.save_layout(path, scene)
    return str(path)


def test_gen_scenes(tmp_path, capsys):
    out = tmp_path / "scenes"
    assert main(["gen-scenes", "--num", "3", "--seed", "7", "--out", str(out)]) == 0
    files = sorted(out.glob("*.layout"))
    assert len(files) == 3
    # files are valid layouts, deterministic in the seed
    first = layout_mod.load_layout(files[0])
    again = layout_mod.generate_random_scene(7, SceneParams())
    assert len(first.primitives) == len(again.primitives)


def test_render_single_pose(tmp_path, scene_file, small_cfg):
    out = tmp_path / "frame.lri"
    rc = main(
        ["render", "--layout", scene_file, "--sensor", small_cfg, "--pose", "0,0,0,0",
         "--out", str(out), "--cloud"]
    )
    assert rc == 0
    img = sensor.read_lri(out)
    assert img.depth.shape == (16, 64)
    assert (img.depth > 0).any()
    cloud = sensor.read_point_cloud(str(out) + ".xyz")
    assert len(cloud) == int((img.depth > 0).sum())


def test_render_deterministic(tmp_path, scene_file, small_cfg):
    a, b = tmp_path / "a.lri", tmp_path / "b.lri"
    main(["render", "--layout", scene_file, "--sensor", small_cfg, "--out", str(a)])
    main(["render", "--layout", scene_file, "--sensor", small_cfg, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_render_trajectory(tmp_path, scene_file, small_cfg):
    traj = tmp_path / "traj.txt"
    traj.write_text("0 0 0 0\n1 0 0 15\n# comment\n2 0 0 30\n")
    out = tmp_path / "frames"
    rc = main(
        ["render", "--layout", scene_file, "--sensor", small_cfg,
         "--trajectory", str(traj), "--out", str(out)]
    )
    assert rc == 0
    assert len(sorted(out.glob("*.lri"))) == 3


def test_render_raydrop_drops_pixels(tmp_path, scene_file, small_cfg):
    plain, dropped = tmp_path / "p.lri", tmp_path / "d.lri"
    main(["render", "--layout", scene_file, "--sensor", small_cfg, "--out", str(plain)])
    main(["render", "--layout", scene_file, "--sensor", small_cfg, "--raydrop",
          "--seed", "1", "--out", str(dropped)])
    a = sensor.read_lri(plain).depth
    b = sensor.read_lri(dropped).depth
    assert int((b > 0).sum()) <= int((a > 0).sum())


def test_render_surface_sample(tmp_path, scene_file, small_cfg):
    out = tmp_path / "surf.xyz"
    rc = main(["render", "--layout", scene_file, "--sensor", small_cfg,
               "--surface-sample", "50", "--out", str(out)])
    assert rc == 0
    cloud = sensor.read_point_cloud(out)
    assert len(cloud) > 0


def test_extract_roundtrip(tmp_path, scene_file, small_cfg):
    # elevated side view gives a clean single-car cloud
    lri = tmp_path / "view.lri"
    main(["render", "--layout", scene_file, "--sensor", small_cfg,
          "--pose", "6,-10,3,90", "--out", str(lri), "--cloud"])
    out = tmp_path / "found.layout"
    rc = main(["extract", "--cloud", str(lri) + ".xyz", "--out", str(out)])
    assert rc == 0
    found = layout_mod.load_layout(out)
    assert isinstance(found, layout_mod.Layout)


def test_unproject(tmp_path, capsys):
    spec = sensor.SensorSpec(rows=8, cols=8)
    depth = sensor.RangeImage(spec, np.full((8, 8), 5.0))
    sem = sensor.RangeImage(spec, np.full((8, 8), 1.0))
    dpath, spath, out = tmp_path / "d.lri", tmp_path / "s.lri", tmp_path / "cloud.xyz"
    sensor.write_lri(dpath, depth)
    sensor.write_lri(spath, sem)
    rc = main(["unproject", "--depth", str(dpath), "--semantic", str(spath),
               "--intrinsics", "10,10,4,4", "--out", str(out)])
    assert rc == 0
    cloud = sensor.read_point_cloud(out)
    assert len(cloud) == 64
    assert (cloud.labels == 1).all()


def _write_training_data(tmp_path, n=4, with_cond=False):
    spec = sensor.SensorSpec(rows=16, cols=64)
    rng = np.random.default_rng(0)
    data = tmp_path / "data"
    data.mkdir(exist_ok=True)
    for i in range(n):
        depth = rng.uniform(1.0, 60.0, size=(16, 64))
        sensor.write_lri(data / f"img_{i:03d}.lri", sensor.RangeImage(spec, depth))
        if with_cond:
            cond = np.stack([rng.uniform(1.0, 60.0, size=(16, 64)), np.ones((16, 64))])
            sensor.write_lri(data / f"img_{i:03d}.cond.lri", sensor.RangeImage(spec, cond))
    return str(data)


@pytest.fixture
def train_cfg(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(TRAIN_CFG)
    return str(path)


def test_train_sample_eval_pipeline(tmp_path, train_cfg, scene_file):
    data = _write_training_data(tmp_path, with_cond=True)
    base = tmp_path / "base.ldck"
    rc = main(["train", "--data", data, "--config", train_cfg, "--steps", "4",
               "--out", str(base)])
    assert rc == 0
    state = scorenet.load_checkpoint(base)
    assert state.step == 4 and state.adapter is None

    ctrl = tmp_path / "ctrl.ldck"
    rc = main(["train", "--data", data, "--config", train_cfg, "--steps", "4",
               "--controlnet", "--base", str(base), "--out", str(ctrl)])
    assert rc == 0
    cstate = scorenet.load_checkpoint(ctrl)
    assert cstate.adapter is not None
    assert cstate.model.param_checksum() == state.model.param_checksum()

    samples = tmp_path / "samples"
    rc = main(["sample", "--ckpt", str(ctrl), "--config", train_cfg,
               "--layout", scene_file, "--pose", "0,0,0,0",
               "--num", "2", "--out", str(samples)])
    assert rc == 0
    files = sorted(samples.glob("*.lri"))
    assert len(files) == 2

    csv = tmp_path / "report.csv"
    rc = main(["eval", "--gen", str(samples), "--ref", data,
               "--metrics", "jsd,mmd,frechet", "--layout", scene_file,
               "--csv", str(csv)])
    assert rc == 0
    text = csv.read_text().splitlines()
    names = {ln.split(",")[0] for ln in text[1:]}
    assert {"jsd", "mmd", "frechet", "box_recall", "bev_iou"} <= names


def test_train_controlnet_requires_base(tmp_path, train_cfg):
    data = _write_training_data(tmp_path, with_cond=True)
    rc = main(["train", "--data", data, "--config", train_cfg, "--steps", "1",
               "--controlnet", "--out", str(tmp_path / "x.ldck")])
    assert rc == 1


def test_sample_cond_without_adapter_fails(tmp_path, train_cfg, scene_file, capsys):
    data = _write_training_data(tmp_path)
    base = tmp_path / "base.ldck"
    main(["train", "--data", data, "--config", train_cfg, "--steps", "1", "--out", str(base)])
    rc = main(["sample", "--ckpt", str(base), "--config", train_cfg,
               "--layout", scene_file, "--num", "1", "--out", str(tmp_path / "s")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_missing_layout_exits_nonzero(tmp_path, capsys):
    rc = main(["render", "--layout", str(tmp_path / "none.layout"),
               "--out", str(tmp_path / "o.lri")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_bad_pose_exits_nonzero(tmp_path, scene_file, small_cfg, capsys):
    rc = main(["render", "--layout", scene_file, "--sensor", small_cfg,
               "--pose", "1,2,3", "--out", str(tmp_path / "o.lri")])
    assert rc == 1
    assert "pose" in capsys.readouterr().err


def test_eval_empty_dir_exits_nonzero(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    rc = main(["eval", "--gen", str(tmp_path / "empty"), "--ref", str(tmp_path / "empty")])
    assert rc == 1
