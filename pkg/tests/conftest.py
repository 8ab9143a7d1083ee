import pytest
import torch

from figurine.body_prior import build_capsule_model
from figurine.geometry import look_at
from figurine.model import ModelConfig
from figurine.training.scenes import SceneConfig


@pytest.fixture(scope='session')
def body():
    return build_capsule_model()


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def front_camera():
    """32×32 camera at z = -3 looking at the origin."""
    return look_at((0.0, 0.0, -3.0), (0.0, 0.0, 0.0), 32, 32, 32.0)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(
        dim=16,
        patch=2,
        heads=2,
        n_intra=1,
        n_inter=1,
        n_human_intra=1,
        k_win=2,
        latent_h=4,
        latent_w=4,
        n_views=2,
        ffn_ratio=2,
    )


@pytest.fixture
def small_scene_cfg():
    return SceneConfig(render_size=16, views_per_tier=2, held_out=1, tiers=('full', 'face'))
