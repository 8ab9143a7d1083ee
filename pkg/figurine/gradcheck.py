"""Central finite-difference checks for every analytic gradient in the pipeline.

All checks run in float64. An entry passes when
|analytic - numeric| <= max(tol * max(|analytic|, |numeric|), floor).
Steps that straddle a discontinuity (the 1/255 opacity cutoff, a depth
swap) show up as disagreeing one-sided differences and are retried with a
smaller step.
"""

from __future__ import annotations  # PEP563

import logging
from dataclasses import dataclass, field
from typing import Callable

import torch

from .body_prior import BodyMesh
from .cameras import ViewPose
from .geometry import PartMaskSet, look_at, make_orbit_cameras
from .latents import LatentGrid, ViewBundle
from .model import ModelConfig, ReconTransformer, backward
from .objectives import LossWeights, SupervisedView, SupervisionSet, rendered_gradients, total_loss
from .splats import GaussianSet, render, render_backward
from .utils.exceptions import GradientCheckFailed

log = logging.getLogger(f'figurine.{__name__}')

REL_TOL = 1e-3
ABS_FLOOR = 1e-6
STEP = 1e-6
RETRIES = 3
SHRINK = 8.0
SPLAT_ATTRIBUTES = ('means', 'quats', 'scales', 'colors', 'opacities')

TINY_MODEL = ModelConfig(
    dim=8,
    patch=2,
    heads=2,
    n_intra=1,
    n_inter=1,
    n_human_intra=1,
    k_win=1,
    latent_channels=4,
    latent_h=4,
    latent_w=4,
    n_views=2,
    ffn_ratio=2,
)
TINY_VERTICES = 10


@dataclass(frozen=True)
class CheckResult:
    name: str
    entries: int
    max_rel_error: float
    failed: int

    @property
    def passed(self) -> bool:
        return self.failed == 0

    def as_record(self) -> dict:
        return {
            'name': self.name,
            'entries': self.entries,
            'max_rel_error': self.max_rel_error,
            'passed': self.passed,
        }


@dataclass
class GradcheckReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def failures(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def extend(self, results: list[CheckResult]):
        self.results.extend(results)

    def raise_for_failures(self):
        if self.failures:
            raise GradientCheckFailed(self.failures)


def numeric_derivative(
    f: Callable[[], float], tensor: torch.Tensor, index: int, step: float = STEP
) -> float:
    """Central difference of f with respect to tensor.view(-1)[index], in place."""

    flat = tensor.data.view(-1)
    original = float(flat[index])
    f0 = None
    for _ in range(RETRIES + 1):
        flat[index] = original + step
        f_plus = f()
        flat[index] = original - step
        f_minus = f()
        flat[index] = original
        central = (f_plus - f_minus) / (2 * step)
        if f0 is None:
            f0 = f()
        forward, backward_ = (f_plus - f0) / step, (f0 - f_minus) / step
        if abs(forward - backward_) <= max(1e-2 * abs(central), 1e-2):
            return central
        step /= SHRINK
    return central


def compare(
    name: str,
    analytic: torch.Tensor,
    f: Callable[[], float],
    tensor: torch.Tensor,
    indices: list[int] | None = None,
    tol: float = REL_TOL,
    floor: float = ABS_FLOOR,
) -> CheckResult:
    analytic = analytic.detach().reshape(-1)
    indices = range(analytic.numel()) if indices is None else indices
    worst, failed, count = 0.0, 0, 0
    for k in indices:
        a = float(analytic[k])
        n = numeric_derivative(f, tensor, k)
        diff = abs(a - n)
        worst = max(worst, diff / max(abs(a), abs(n), floor))
        if diff > max(tol * max(abs(a), abs(n)), floor):
            failed += 1
            log.debug(f'{name}[{k}]: analytic {a:.6e}, numeric {n:.6e}')
        count += 1
    result = CheckResult(name, count, worst, failed)
    log.debug(f'{name}: {count} entries, max rel error {worst:.2e}, {failed} failed')
    return result


def _sample(numel: int, limit: int | None, gen: torch.Generator) -> list[int] | None:
    if limit is None or numel <= limit:
        return None
    return torch.randperm(numel, generator=gen)[:limit].tolist()


def random_splats(gen: torch.Generator, count: int = 16) -> GaussianSet:
    """Splats in a unit cube around the origin, kept away from opacity saturation."""
    dtype = torch.float64
    quats = torch.randn(count, 4, generator=gen, dtype=dtype)
    return GaussianSet(
        means=torch.rand(count, 3, generator=gen, dtype=dtype) - 0.5,
        quats=quats / quats.norm(dim=-1, keepdim=True),
        scales=0.05 + 0.15 * torch.rand(count, 3, generator=gen, dtype=dtype),
        colors=torch.rand(count, 3, generator=gen, dtype=dtype),
        opacities=0.1 + 0.5 * torch.rand(count, generator=gen, dtype=dtype),
    )


def check_splats(seed: int = 0, count: int = 16, size: int = 24) -> list[CheckResult]:
    """Renderer attribute gradients against differences of ⟨U, image⟩ + ⟨V, alpha⟩."""

    gen = torch.Generator().manual_seed(seed)
    cam = look_at((0.0, 0.0, -2.5), (0.0, 0.0, 0.0), size, size, float(size))
    gaussians = random_splats(gen, count)
    background = torch.rand(3, generator=gen, dtype=torch.float64).tolist()
    upstream = torch.randn(size, size, 3, generator=gen, dtype=torch.float64)
    upstream_alpha = torch.randn(size, size, generator=gen, dtype=torch.float64)

    grads = render_backward(gaussians, cam, size, size, upstream, background, upstream_alpha)

    def objective() -> float:
        out = render(gaussians, cam, size, size, background)
        return float((out.color * upstream).sum() + (out.alpha * upstream_alpha).sum())

    return [
        compare(f'splat.{name}', analytic, objective, tensor)
        for name, analytic, tensor in zip(SPLAT_ATTRIBUTES, grads.tensors(), gaussians.tensors())
    ]


def tiny_instance(
    gen: torch.Generator, cfg: ModelConfig = TINY_MODEL
) -> tuple[ViewBundle, BodyMesh]:
    height, width = cfg.image_size
    shape = (cfg.latent_h, cfg.latent_w, cfg.latent_channels)
    cams = make_orbit_cameras(cfg.n_views, 0.0, 2.4, width=width, height=height)
    grids = [
        LatentGrid(
            torch.rand(shape, generator=gen, dtype=torch.float64),
            ViewPose(0.0, 360.0 * i / cfg.n_views),
            cam,
            is_input=(i == 0),
        )
        for i, cam in enumerate(cams)
    ]
    vertices = torch.rand(TINY_VERTICES, 3, generator=gen, dtype=torch.float64) - 0.5
    mesh = BodyMesh(
        vertices=vertices,
        faces=torch.zeros(0, 3, dtype=torch.long),
        part_labels=torch.ones(TINY_VERTICES, dtype=torch.long),
    )
    return ViewBundle(grids).validate(), mesh


def randomize_parameters(model: torch.nn.Module, gen: torch.Generator, std: float = 0.3):
    """Replace the residual-identity initialization so every path carries gradient."""
    with torch.no_grad():
        for param in model.parameters():
            param.copy_(std * torch.randn(param.shape, generator=gen, dtype=param.dtype))


def check_transformer(
    seed: int = 0, cfg: ModelConfig = TINY_MODEL, max_entries: int | None = None
) -> list[CheckResult]:
    """Every parameter tensor, plus the latent features, of a randomized tiny model."""

    gen = torch.Generator().manual_seed(seed)
    bundle, mesh = tiny_instance(gen, cfg)
    model = ReconTransformer(cfg).double()
    randomize_parameters(model, gen)
    features = bundle.features().clone().requires_grad_(True)

    recon = model(bundle, mesh, features)
    upstream = torch.randn(recon.raw.shape, generator=gen, dtype=torch.float64)
    param_grads, (feature_grad,) = backward(model, recon, upstream, [features])
    log.debug(f'tiny model: {sum(p.count for p in recon.pairs)} window pairs')

    @torch.no_grad()
    def objective() -> float:
        return float((model(bundle, mesh, features.detach()).raw * upstream).sum())

    results = []
    for name, param in model.named_parameters():
        indices = _sample(param.numel(), max_entries, gen)
        results.append(compare(f'model.{name}', param_grads[name], objective, param, indices))
    indices = _sample(features.numel(), max_entries, gen)
    results.append(compare('model.features', feature_grad, objective, features, indices))
    return results


def random_supervision(
    gen: torch.Generator, size: int = 8, tiers: int = 2, views: int = 2
) -> SupervisionSet:
    dtype = torch.float64
    levels = []
    for level in range(tiers):
        entries = []
        for k in range(views):
            labels = torch.randint(0, 25, (size, size), generator=gen)
            entries.append(
                SupervisedView(
                    image=torch.rand(size, size, 3, generator=gen, dtype=dtype),
                    mask=(labels > 0).to(dtype),
                    parts=PartMaskSet(labels, torch.zeros(size, size, dtype=dtype)),
                    rendered=torch.rand(size, size, 3, generator=gen, dtype=dtype).requires_grad_(),
                    alpha=torch.rand(size, size, generator=gen, dtype=dtype).requires_grad_(True),
                    is_input=(level == 0 and k == 0),
                )
            )
        levels.append(entries)
    return SupervisionSet(levels)


def check_losses(seed: int = 0, weights: LossWeights | None = None) -> list[CheckResult]:
    """Total loss gradients with respect to rendered images and alpha."""

    gen = torch.Generator().manual_seed(seed)
    weights = weights or LossWeights(input_view_weight=2.0)
    sup = random_supervision(gen)
    grads = rendered_gradients(total_loss(sup, weights).total, sup)

    @torch.no_grad()
    def objective() -> float:
        return float(total_loss(sup, weights).total)

    results = []
    for i, (view, (d_image, d_alpha)) in enumerate(zip(sup.views(), grads)):
        results.append(compare(f'loss.view{i}.rendered', d_image, objective, view.rendered))
        results.append(compare(f'loss.view{i}.alpha', d_alpha, objective, view.alpha))
    return results


def run_gradcheck(
    seed: int = 0, splat_instances: int = 3, max_entries: int | None = None
) -> GradcheckReport:
    """Renderer, transformer and loss checks in one report.

    Parameters
    ----------
    seed, optional
        base seed, instance k uses seed + k, by default 0
    splat_instances, optional
        random renderer instances, by default 3
    max_entries, optional
        entries sampled per model tensor, by default all of them
    """

    report = GradcheckReport()
    for k in range(splat_instances):
        report.extend(check_splats(seed + k))
    report.extend(check_transformer(seed, max_entries=max_entries))
    report.extend(check_losses(seed))
    for result in report.results:
        log.info(
            f'{"ok  " if result.passed else "FAIL"} {result.name}: '
            f'{result.entries} entries, max rel error {result.max_rel_error:.2e}'
        )
    return report
