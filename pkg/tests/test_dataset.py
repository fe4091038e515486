import math

import numpy as np
import pytest

from htmsp import dataset as ds
from htmsp.encoder import read_pgm
from htmsp.errors import ConfigError, InputError

W, H = 240, 134


def silhouette(img):
    return img != ds.BACKGROUND


def ideal_disc(radius_px, width=W, height=H):
    yy, xx = np.mgrid[0:height, 0:width]
    cx, cy = width / 2.0 - 0.5, height / 2.0 - 0.5
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius_px ** 2


@pytest.mark.parametrize("azimuth", [0.0, 37.0, 90.0, 211.5])
def test_sphere_projects_to_disc(azimuth):
    sil = silhouette(ds.render_frame(ds.mesh_for("sphere"), azimuth, 0.0, 1.0, W, H))
    # unit sphere at distance D under a pinhole: r_px = f * r / sqrt(D^2 - r^2)
    focal = 0.62 * H * ds.CAMERA_DISTANCE / 2.0
    radius = focal / math.sqrt(ds.CAMERA_DISTANCE ** 2 - 1.0)
    disc = ideal_disc(radius)
    iou = (sil & disc).sum() / (sil | disc).sum()
    assert iou > 0.95


def test_sphere_area_constant_over_rotation():
    mesh = ds.mesh_for("sphere")
    areas = [silhouette(ds.render_frame(mesh, a, 20.0, 1.0, W, H)).sum() for a in range(0, 360, 30)]
    assert (max(areas) - min(areas)) / max(areas) < 0.03


def test_cube_pose_changes_silhouette():
    mesh = ds.mesh_for("cube")
    a0 = silhouette(ds.render_frame(mesh, 0.0, 20.0, 1.0, W, H)).sum()
    a45 = silhouette(ds.render_frame(mesh, 45.0, 20.0, 1.0, W, H)).sum()
    assert a0 != a45


@pytest.mark.parametrize("shape", ds.SHAPES)
def test_every_shape_renders_in_frame(shape):
    img = ds.render_frame(ds.mesh_for(shape), 30.0, 20.0, 1.1, W, H)
    sil = silhouette(img)
    assert 0.03 < sil.mean() < 0.6
    # nothing touches the border
    assert not (sil[0].any() or sil[-1].any() or sil[:, 0].any() or sil[:, -1].any())


def test_render_video_deterministic():
    spec = ds.DatasetSpec(frames_per_video=4)
    a = ds.render_video("torus", 42, spec)
    b = ds.render_video("torus", 42, spec)
    c = ds.render_video("torus", 43, spec)
    assert [f.pixels.tobytes() for f in a] == [f.pixels.tobytes() for f in b]
    assert [f.pixels.tobytes() for f in a] != [f.pixels.tobytes() for f in c]
    assert all((f.width, f.height) == (W, H) for f in a)


def test_render_video_unknown_class():
    with pytest.raises(InputError):
        ds.render_video("cube", 1, ds.DatasetSpec(classes=("cone",)))


@pytest.mark.parametrize("kw", [
    dict(classes=()), dict(classes=("monkey",)), dict(classes=("cube", "cube")),
    dict(videos_per_class=0), dict(frame_width=-1), dict(rng_seed=-1),
])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        ds.DatasetSpec(**kw)


def test_split_ratio_and_balance():
    records = ds.plan_manifest(ds.DatasetSpec())
    assert len(records) == 600
    for label in ds.SHAPES:
        mine = [r for r in records if r.label == label]
        assert sum(r.split == "train" for r in mine) == 80
        assert sum(r.split == "test" for r in mine) == 20
    assert len({r.path for r in records}) == 600


def test_split_reproducible_and_seeded():
    spec = ds.DatasetSpec(videos_per_class=10)
    assert ds.plan_manifest(spec) == ds.plan_manifest(spec)
    assert ds.plan_manifest(spec) != ds.plan_manifest(ds.DatasetSpec(videos_per_class=10, rng_seed=1))


def test_build_dataset_tree(tmp_path):
    spec = ds.DatasetSpec(classes=("cube", "sphere"), videos_per_class=5, frames_per_video=3,
                          frame_width=48, frame_height=32, rng_seed=9)
    records = ds.build_dataset(spec, tmp_path)
    frames = sorted(tmp_path.rglob("*.pgm"))
    assert len(frames) == 2 * 5 * 3
    for path in frames:
        f = read_pgm(path)
        assert (f.width, f.height) == (48, 32)
    assert ds.read_manifest(tmp_path) == records
    assert ds.read_spec(tmp_path) == spec
    train = {r.path for r in records if r.split == "train"}
    test = {r.path for r in records if r.split == "test"}
    assert not train & test
    assert len(train) == 8 and len(test) == 2


def test_manifest_errors(tmp_path):
    with pytest.raises(InputError):
        ds.read_manifest(tmp_path)
    (tmp_path / ds.MANIFEST_NAME).write_text("path,class,split\ncube/a,cube,validate\n")
    with pytest.raises(InputError):
        ds.read_manifest(tmp_path)
    (tmp_path / ds.MANIFEST_NAME).write_text("file,label\nx,y\n")
    with pytest.raises(InputError):
        ds.read_manifest(tmp_path)
