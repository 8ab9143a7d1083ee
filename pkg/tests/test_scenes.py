import dataclasses

import pytest
import torch

from figurine.body_prior import bounding_sphere, pose_body
from figurine.geometry import project_points, rasterize_part_masks
from figurine.gradcheck import TINY_MODEL
from figurine.training.scenes import HEAD_JOINT, SceneConfig, generate_scene, part_palette
from figurine.utils.classes import FramingTier
from figurine.utils.exceptions import ConfigValueError


@pytest.fixture(scope='module')
def scene_args(body):
    return body, SceneConfig(render_size=16, views_per_tier=2, held_out=2), TINY_MODEL


def test_same_seed_same_scene(scene_args):
    first = generate_scene(11, *scene_args)
    second = generate_scene(11, *scene_args)
    assert torch.equal(first.theta, second.theta)
    assert torch.equal(first.bundle.features(), second.bundle.features())
    for a, b in zip(first.held_out, second.held_out):
        assert torch.equal(a.image, b.image)
    assert not torch.equal(first.theta, generate_scene(12, *scene_args).theta)


def test_view_counts_and_input_flags(scene_args):
    scene = generate_scene(0, *scene_args)
    assert list(scene.tiers) == [FramingTier.FULL_BODY, FramingTier.FACE]
    assert [len(views) for views in scene.supervision()] == [2, 2]
    assert len(scene.held_out) == 2
    assert scene.bundle.n_views == 2
    assert scene.bundle.features().shape == (2, 4, 4, 4)
    flags = [v.is_input for views in scene.supervision() for v in views]
    assert flags == [True, False, False, False]
    assert not any(v.is_input for v in scene.held_out)


def test_held_out_views_sit_between_supervision_views(scene_args):
    scene = generate_scene(0, *scene_args)
    train_azimuths = {v.pose.azimuth for v in scene.tiers[FramingTier.FULL_BODY]}
    held = [v.pose.azimuth for v in scene.held_out]
    assert held == [90.0, 270.0]
    assert not train_azimuths & set(held)


def test_body_is_normalized_and_root_fixed(scene_args):
    scene = generate_scene(3, *scene_args)
    assert scene.mesh.vertices.norm(dim=1).max().item() == pytest.approx(1.0, abs=1e-6)
    assert scene.theta[0].abs().sum() == 0


def test_rest_pose_path(scene_args):
    body, cfg, model_cfg = scene_args
    scene = generate_scene(0, body, cfg, model_cfg, beta=torch.zeros(10), theta=torch.zeros(24, 3))
    center, radius = bounding_sphere(body.template)
    expected = (body.template - center) / radius
    assert torch.allclose(scene.mesh.vertices, expected, atol=1e-12)


def test_masks_follow_the_rasterizer(scene_args):
    scene = generate_scene(5, *scene_args)
    for views in scene.supervision():
        for view in views:
            parts = rasterize_part_masks(scene.mesh, None, view.camera, 16, 16)
            assert torch.equal(view.parts.labels, parts.labels)
            assert torch.equal(view.mask.bool(), parts.foreground)
    assert scene.tiers[FramingTier.FULL_BODY][0].mask.any()


def test_background_and_colors(scene_args):
    scene = generate_scene(5, *scene_args)
    view = scene.held_out[0]
    empty = ~view.mask.bool()
    assert empty.any()
    assert torch.equal(view.image[empty], torch.ones(int(empty.sum()), 3))
    assert (scene.vertex_colors >= 0).all() and (scene.vertex_colors <= 1).all()


def test_face_tier_looks_at_the_head(scene_args):
    scene = generate_scene(2, *scene_args)
    head = scene.mesh.joints[HEAD_JOINT].unsqueeze(0)
    for view in scene.tiers[FramingTier.FACE]:
        proj = project_points(head, view.camera)
        assert torch.allclose(proj.uv, torch.tensor([[8.0, 8.0]], dtype=torch.float64), atol=1e-9)


def test_palette():
    palette = part_palette()
    assert palette.shape == (25, 3)
    assert palette[0].abs().sum() == 0
    assert torch.equal(palette, part_palette())


def test_unknown_tier_is_rejected(scene_args):
    body, cfg, model_cfg = scene_args
    with pytest.raises(ConfigValueError):
        generate_scene(0, body, dataclasses.replace(cfg, tiers=('full', 'torso')), model_cfg)


def test_posed_joints_survive_normalization(body):
    theta = torch.zeros(24, 3, dtype=torch.float64)
    theta[16, 2] = 1.0
    mesh = pose_body(body, torch.zeros(10), theta)
    center, radius = bounding_sphere(mesh.vertices)
    unit = mesh.normalized(center, radius)
    assert unit.joints.shape == (24, 3)


def test_clean_scene_gives_the_model_the_true_body(scene_args):
    scene = generate_scene(4, *scene_args)
    assert scene.prior_mesh is None
    assert scene.model_mesh is scene.mesh
    assert scene.body_noise == 0.0


def test_body_noise_only_changes_the_model_input(scene_args):
    body, cfg, model_cfg = scene_args
    clean = generate_scene(4, *scene_args)
    noisy = generate_scene(4, body, dataclasses.replace(cfg, body_noise=0.1), model_cfg)
    assert noisy.body_noise == 0.1
    assert torch.equal(noisy.mesh.vertices, clean.mesh.vertices)
    assert torch.equal(noisy.bundle.features(), clean.bundle.features())
    for a, b in zip(noisy.held_out, clean.held_out):
        assert torch.equal(a.image, b.image)

    shift = (noisy.model_mesh.vertices - noisy.mesh.vertices).norm(dim=1)
    assert shift.max() > 1e-3
    assert torch.equal(noisy.model_mesh.faces, noisy.mesh.faces)
    again = generate_scene(4, *scene_args, body_noise=0.1)
    assert torch.equal(again.model_mesh.vertices, noisy.model_mesh.vertices)


def test_negative_body_noise_is_rejected(scene_args):
    with pytest.raises(ConfigValueError):
        generate_scene(0, *scene_args, body_noise=-0.5)
    with pytest.raises(ConfigValueError):
        SceneConfig(body_noise=-0.5).validate()
