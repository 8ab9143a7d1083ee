"""Seeded synthetic humans rendered by the mesh rasterizer, the only training data."""

from __future__ import annotations  # PEP563

import logging
from dataclasses import dataclass, field

import torch

from ..body_prior import BodyMesh, BodyModel, NUM_BETAS, bounding_sphere, pose_body
from ..cameras import ViewPose
from ..geometry import (
    CameraView,
    PartMaskSet,
    make_orbit_cameras,
    rasterize_mesh,
    rasterize_part_masks,
    shade_vertex_colors,
)
from ..latents import ViewBundle, encode_views, view_pose_schedule
from ..model.config import ModelConfig
from ..utils.classes import FramingTier
from ..utils.exceptions import ConfigValueError

log = logging.getLogger(f'figurine.{__name__}')

HEAD_JOINT = 15
CHEST_JOINT = 9
# seed offset of the simulated body-estimate stream
BODY_NOISE_STREAM = 7919


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic data settings, keys 'scene.<field>' in config files."""

    render_size: int = 64
    views_per_tier: int = 8
    held_out: int = 4
    tiers: tuple[str, ...] = ('full', 'face')
    orbit_radius: float = 2.4
    half_radius: float = 1.4
    face_radius: float = 0.7
    elevation: float = 0.0
    beta_range: float = 1.0
    pose_scale: float = 0.25
    color_noise: float = 0.05
    body_noise: float = 0.0
    background: tuple[float, ...] = (1.0, 1.0, 1.0)

    @property
    def framing(self) -> list[FramingTier]:
        try:
            return [FramingTier(name) for name in self.tiers]
        except ValueError as e:
            raise ConfigValueError('scene.tiers', str(e))

    def validate(self) -> SceneConfig:
        self.framing
        if len(self.background) != 3:
            raise ConfigValueError('scene.background', 'needs three values')
        if self.views_per_tier < 1 or self.render_size < 1:
            raise ConfigValueError('scene.views_per_tier', 'views and render size must be positive')
        if self.body_noise < 0:
            raise ConfigValueError('scene.body_noise', f'{self.body_noise} is negative')
        return self


@dataclass(frozen=True, eq=False)
class SceneView:
    camera: CameraView
    pose: ViewPose
    image: torch.Tensor
    mask: torch.Tensor
    parts: PartMaskSet
    is_input: bool = False


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    seed: int
    beta: torch.Tensor
    theta: torch.Tensor
    mesh: BodyMesh
    vertex_colors: torch.Tensor
    bundle: ViewBundle
    tiers: dict[FramingTier, list[SceneView]] = field(default_factory=dict)
    held_out: list[SceneView] = field(default_factory=list)
    prior_mesh: BodyMesh | None = None
    body_noise: float = 0.0

    @property
    def model_mesh(self) -> BodyMesh:
        """The body handed to the model; ground truth unless an estimate was simulated."""
        return self.mesh if self.prior_mesh is None else self.prior_mesh

    def supervision(self) -> list[list[SceneView]]:
        return list(self.tiers.values())


def part_palette() -> torch.Tensor:
    """A fixed color per label 0..24, background first."""
    gen = torch.Generator().manual_seed(24)
    palette = 0.2 + 0.7 * torch.rand(25, 3, generator=gen, dtype=torch.float64)
    palette[0] = 0.0
    return palette


def sample_body(gen: torch.Generator, cfg: SceneConfig) -> tuple[torch.Tensor, torch.Tensor]:
    beta = (torch.rand(NUM_BETAS, generator=gen, dtype=torch.float64) * 2 - 1) * cfg.beta_range
    theta = torch.randn(24, 3, generator=gen, dtype=torch.float64) * cfg.pose_scale
    theta[0] = 0.0
    return beta, theta


def render_view(
    mesh: BodyMesh,
    colors: torch.Tensor,
    cam: CameraView,
    size: int,
    background,
    pose: ViewPose,
    is_input: bool = False,
) -> SceneView:
    fragments = rasterize_mesh(mesh.vertices, mesh.faces, cam, size, size)
    image = shade_vertex_colors(fragments, mesh.faces, colors, torch.tensor(background))
    parts = rasterize_part_masks(mesh, None, cam, size, size, fragments=fragments)
    return SceneView(
        camera=cam,
        pose=pose,
        image=image.to(torch.float32),
        mask=fragments.coverage.to(torch.float32),
        parts=parts,
        is_input=is_input,
    )


def _tier_target(tier: FramingTier, mesh: BodyMesh) -> torch.Tensor:
    match tier:
        case FramingTier.FULL_BODY:
            return torch.zeros(3, dtype=torch.float64)
        case FramingTier.HALF_BODY:
            return mesh.joints[CHEST_JOINT]
        case FramingTier.FACE:
            return mesh.joints[HEAD_JOINT]


def _tier_radius(tier: FramingTier, cfg: SceneConfig) -> float:
    match tier:
        case FramingTier.FULL_BODY:
            return cfg.orbit_radius
        case FramingTier.HALF_BODY:
            return cfg.half_radius
        case FramingTier.FACE:
            return cfg.face_radius


def generate_scene(
    seed: int,
    body: BodyModel,
    cfg: SceneConfig,
    model_cfg: ModelConfig,
    beta: torch.Tensor | None = None,
    theta: torch.Tensor | None = None,
    body_noise: float | None = None,
) -> SyntheticScene:
    """Pose a random body, normalize it to the unit sphere and render every camera.

    Explicit 'beta' or 'theta' replace the sampled ones. Input views use the
    model's image size and orbit; supervision uses cfg.render_size.

    With a positive 'body_noise' (default cfg.body_noise) the model is given
    an imperfect body estimate: β and θ plus N(0, body_noise²) noise, placed
    in the clean mesh's normalized frame. Images and masks always come from
    the clean body.
    """

    cfg.validate()
    body_noise = cfg.body_noise if body_noise is None else body_noise
    if body_noise < 0:
        raise ConfigValueError('scene.body_noise', f'{body_noise} is negative')
    gen = torch.Generator().manual_seed(seed)
    sampled_beta, sampled_theta = sample_body(gen, cfg)
    beta = sampled_beta if beta is None else torch.as_tensor(beta, dtype=torch.float64)
    theta = sampled_theta if theta is None else torch.as_tensor(theta, dtype=torch.float64)

    posed = pose_body(body, beta, theta)
    center, radius = bounding_sphere(posed.vertices)
    mesh = posed.normalized(center, radius)
    noise = cfg.color_noise * torch.randn(mesh.vertices.shape, generator=gen, dtype=torch.float64)
    colors = (part_palette()[mesh.part_labels] + noise).clamp(0.0, 1.0)

    height, width = model_cfg.image_size
    poses = view_pose_schedule(model_cfg.n_views, cfg.elevation)
    input_cams = make_orbit_cameras(
        model_cfg.n_views, cfg.elevation, cfg.orbit_radius, width=width, height=height
    )
    inputs = [
        render_view(mesh, colors, cam, width, cfg.background, pose)
        for cam, pose in zip(input_cams, poses)
    ]
    bundle = encode_views([v.image for v in inputs], input_cams, poses)

    size = cfg.render_size
    tiers = {}
    for tier in cfg.framing:
        cams = make_orbit_cameras(
            cfg.views_per_tier,
            cfg.elevation,
            _tier_radius(tier, cfg),
            target=_tier_target(tier, mesh),
            width=size,
            height=size,
        )
        tier_poses = view_pose_schedule(cfg.views_per_tier, cfg.elevation)
        tiers[tier] = [
            render_view(
                mesh, colors, cam, size, cfg.background, pose,
                is_input=(tier is FramingTier.FULL_BODY and k == 0),
            )
            for k, (cam, pose) in enumerate(zip(cams, tier_poses))
        ]  # fmt: skip

    offset = 180.0 / max(cfg.held_out, 1)
    held_cams = make_orbit_cameras(
        max(cfg.held_out, 1), cfg.elevation, cfg.orbit_radius, width=size, height=size,
        azimuth_offset_deg=offset,
    )  # fmt: skip
    held_out = [
        render_view(
            mesh, colors, cam, size, cfg.background,
            ViewPose(cfg.elevation, (offset + 360.0 * k / len(held_cams)) % 360.0),
        )
        for k, cam in enumerate(held_cams[: cfg.held_out])
    ]  # fmt: skip

    prior = None
    if body_noise > 0:
        prior = perturbed_body(body, beta, theta, body_noise, seed).normalized(center, radius)
        log.debug(f'scene {seed}: body estimate perturbed with σ = {body_noise}')

    log.debug(f'scene {seed}: {sum(len(v) for v in tiers.values())} supervision views')
    return SyntheticScene(
        seed, beta, theta, mesh, colors, bundle, tiers, held_out, prior, body_noise
    )


def perturbed_body(
    body: BodyModel, beta: torch.Tensor, theta: torch.Tensor, sigma: float, seed: int
) -> BodyMesh:
    """Pose the body with Gaussian noise on every β and θ entry, seeded per scene."""

    gen = torch.Generator().manual_seed(seed + BODY_NOISE_STREAM)
    noisy_beta = beta + sigma * torch.randn(beta.shape, generator=gen, dtype=torch.float64)
    noisy_theta = theta + sigma * torch.randn(theta.shape, generator=gen, dtype=torch.float64)
    return pose_body(body, noisy_beta, noisy_theta)
