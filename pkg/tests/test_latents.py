import pytest
import torch

from figurine.cameras import ViewPose
from figurine.geometry import make_orbit_cameras
from figurine.latents import (
    MAGIC,
    VERSION,
    LatentGrid,
    ViewBundle,
    encode_views,
    load_view_bundle,
    save_view_bundle,
    toy_encode,
    triangular_cfg,
    view_pose_schedule,
)
from figurine.utils.codec import BinaryWriter
from figurine.utils.exceptions import (
    ConfigValueError,
    DimensionMismatch,
    ImageSizeError,
    InvariantViolation,
    SchemaVersionMismatch,
)


def test_toy_encode_block_means(gen):
    image = torch.rand(16, 24, 3, generator=gen)
    features = toy_encode(image)
    assert features.shape == (2, 3, 4)
    assert features.dtype == torch.float32
    block = image[8:16, 16:24].double().mean(dim=(0, 1))
    assert torch.allclose(features[1, 2, :3].double(), block, atol=1e-6)


def test_toy_encode_gradient_channel():
    flat = toy_encode(torch.full((8, 8, 3), 0.4))
    assert flat[0, 0, 3].item() == 0.0

    ramp = torch.linspace(0.0, 0.7, 8).reshape(1, 8, 1).expand(8, 8, 3).clone()
    edge = toy_encode(ramp)
    # 7 forward differences of 0.1 per row, the last column is zero
    assert edge[0, 0, 3].item() == pytest.approx(0.1 * 7 / 8, rel=1e-5)


@pytest.mark.parametrize('shape', [(12, 16, 3), (16, 20, 3)])
def test_toy_encode_rejects_odd_sizes(shape):
    with pytest.raises(ImageSizeError):
        toy_encode(torch.zeros(shape))


def make_bundle(gen, n_views=3, h=2, w=3, c=4):
    cams = make_orbit_cameras(n_views, 0.0, 2.4, width=8 * w, height=8 * h)
    poses = view_pose_schedule(n_views)
    images = [torch.rand(8 * h, 8 * w, 3, generator=gen) for _ in range(n_views)]
    bundle = encode_views(images, cams, poses, center=(0.1, 0.2, 0.3), radius=0.9)
    assert bundle.features().shape == (n_views, h, w, c)
    return bundle


def test_encode_views_marks_the_first_view(gen):
    bundle = make_bundle(gen)
    assert [g.is_input for g in bundle.grids] == [True, False, False]
    assert bundle.input_grid is bundle.grids[0]
    assert bundle.radius == 0.9


def test_bundle_roundtrip(gen, tmp_path):
    bundle = make_bundle(gen)
    path = tmp_path / 'views.fglt'
    save_view_bundle(bundle, path)
    loaded = load_view_bundle(path)
    assert loaded.n_views == 3
    assert torch.equal(loaded.features(), bundle.features())
    assert torch.allclose(loaded.center, bundle.center)
    assert loaded.radius == pytest.approx(0.9)
    for before, after in zip(bundle.grids, loaded.grids):
        assert after.pose.azimuth == pytest.approx(before.pose.azimuth)
        assert after.is_input == before.is_input
        assert torch.allclose(after.camera.R, before.camera.R)
        assert (after.camera.width, after.camera.height) == (24, 16)


def test_view_poses_survive_a_file_exactly(gen, tmp_path):
    n = 7
    cams = make_orbit_cameras(n, 12.5, 2.4, width=16, height=16)
    poses = [ViewPose(12.5 + k / 3.0, 360.0 * k / n) for k in range(n)]
    images = [torch.rand(16, 16, 3, generator=gen) for _ in range(n)]
    path = tmp_path / 'views.fglt'
    save_view_bundle(encode_views(images, cams, poses), path)
    assert [g.pose for g in load_view_bundle(path).grids] == poses


def test_first_version_bundles_are_rejected(tmp_path):
    path = tmp_path / 'views.fglt'
    BinaryWriter(MAGIC, 1).pack('IIII', 1, 2, 2, 4).write(path)
    with pytest.raises(SchemaVersionMismatch):
        load_view_bundle(path)


def test_bundle_wrong_magic(tmp_path):
    path = tmp_path / 'views.fglt'
    BinaryWriter(b'FGBM', VERSION).write(path)
    with pytest.raises(SchemaVersionMismatch):
        load_view_bundle(path)


def test_bundle_record_dimension_mismatch(gen, tmp_path):
    cam = make_orbit_cameras(1, 0.0, 2.4, width=16, height=16)[0]
    writer = BinaryWriter(MAGIC, VERSION).pack('IIII', 2, 2, 2, 4)
    writer.array(torch.zeros(3, dtype=torch.float64), 'f8').pack('d', 1.0)
    for i, dims in enumerate([(2, 2, 4), (2, 3, 4)]):
        writer.pack('ffB', 0.0, 180.0 * i, int(i == 0))
        writer.array(cam.K.flatten(), 'f8').array(cam.R.flatten(), 'f8').array(cam.t, 'f8')
        writer.pack('II', 16, 16).pack('III', *dims).array(torch.zeros(dims), 'f4')
    path = tmp_path / 'views.fglt'
    writer.write(path)
    with pytest.raises(DimensionMismatch) as info:
        load_view_bundle(path)
    assert info.value.index == 1


def test_bundle_validation(gen):
    cam = make_orbit_cameras(1, 0.0, 2.4, width=16, height=16)[0]
    first = LatentGrid(torch.zeros(2, 2, 4), ViewPose(0.0, 0.0), cam, is_input=True)

    odd = LatentGrid(torch.zeros(2, 3, 4), ViewPose(0.0, 90.0), cam)
    with pytest.raises(DimensionMismatch):
        ViewBundle([first, odd]).validate()

    second_input = LatentGrid(torch.zeros(2, 2, 4), ViewPose(0.0, 90.0), cam, is_input=True)
    with pytest.raises(InvariantViolation):
        ViewBundle([first, second_input]).validate()

    full_turn = LatentGrid(torch.zeros(2, 2, 4), ViewPose(0.0, 360.0), cam)
    with pytest.raises(InvariantViolation) as info:
        ViewBundle([first, full_turn]).validate()
    assert info.value.field == 'views[1].azimuth'

    with pytest.raises(InvariantViolation):
        ViewBundle([]).validate()


def test_view_pose_schedule():
    assert [p.azimuth for p in view_pose_schedule(4)] == [0.0, 90.0, 180.0, 270.0]
    assert {p.elevation for p in view_pose_schedule(3, 10.0)} == {10.0}
    with pytest.raises(ConfigValueError):
        view_pose_schedule(0)


@pytest.mark.parametrize(
    'azimuth, scale', [(0.0, 1.0), (90.0, 1.75), (180.0, 2.5), (270.0, 1.75), (360.0, 1.0)]
)
def test_triangular_guidance(azimuth, scale):
    assert triangular_cfg(azimuth) == pytest.approx(scale)
