"""Training objectives and image metrics.

Images are h×w×3 tensors in [0, 1], masks h×w. Every loss is plain tensor
code, so gradients with respect to the rendered images come from autograd.
"""

from __future__ import annotations  # PEP563

import logging
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .geometry import PartMaskSet
from .utils.classes import EMPHASIZED_PARTS, BodyPart
from .utils.exceptions import ConfigValueError, DimensionMismatch

log = logging.getLogger(f'figurine.{__name__}')

PSNR_CAP = 100.0
PROXY_SCALES = 3
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def default_part_weights() -> dict[int, float]:
    return {int(p): 2.0 if p in EMPHASIZED_PARTS else 1.0 for p in BodyPart}


@dataclass(frozen=True)
class LossWeights:
    """λ per framing tier and per part, perceptual and mask weights, input-view reweighting."""

    level: dict[int, float] = field(default_factory=lambda: {0: 1.0, 1: 1.0, 2: 1.0})
    part: dict[int, float] = field(default_factory=default_part_weights)
    perceptual: float = 1.0
    mask: float = 1.0
    input_view_weight: float = 1.0

    def validate(self) -> LossWeights:
        for name, table in (('level', self.level), ('part', self.part)):
            for key, value in table.items():
                if value < 0:
                    raise ConfigValueError(f'loss.{name}.{key}', f'weight {value} is negative')
        for name in ('perceptual', 'mask'):
            if getattr(self, name) < 0:
                raise ConfigValueError(f'loss.{name}', f'weight {getattr(self, name)} is negative')
        if self.input_view_weight < 1:
            raise ConfigValueError(
                'loss.input_view_weight', f'must be at least 1, got {self.input_view_weight}'
            )
        return self


@dataclass(frozen=True, eq=False)
class SupervisedView:
    image: torch.Tensor
    mask: torch.Tensor
    parts: PartMaskSet
    rendered: torch.Tensor
    alpha: torch.Tensor
    is_input: bool = False


@dataclass(frozen=True, eq=False)
class SupervisionSet:
    """Views grouped by framing tier; tier i is level i of the hierarchical loss."""

    levels: list[list[SupervisedView]]

    def views(self) -> list[SupervisedView]:
        return [view for level in self.levels for view in level]

    def validate(self) -> SupervisionSet:
        for i, level in enumerate(self.levels):
            for view in level:
                shape = view.image.shape
                if view.rendered.shape != shape:
                    raise DimensionMismatch(
                        'level', i, f'rendered {tuple(view.rendered.shape)} vs truth {tuple(shape)}'
                    )
                if view.parts.labels.shape != shape[:2] or view.mask.shape != shape[:2]:
                    raise DimensionMismatch('level', i, 'masks do not match the image resolution')
                if view.alpha.shape != shape[:2]:
                    raise DimensionMismatch('level', i, 'rendered alpha does not match the image')
        return self


@dataclass(frozen=True)
class LossTerms:
    hierarchical: torch.Tensor
    reconstruction: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.hierarchical + self.reconstruction

    def as_record(self) -> dict[str, float]:
        return {
            'loss': float(self.total),
            'loss_hierarchical': float(self.hierarchical),
            'loss_reconstruction': float(self.reconstruction),
        }


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.mean((a - b) ** 2)


def _pool(image: torch.Tensor, factor: int) -> torch.Tensor:
    if factor == 1:
        return image
    x = image.movedim(-1, 0).unsqueeze(0)
    return F.avg_pool2d(x, factor).squeeze(0).movedim(0, -1)


def perceptual_proxy(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Multi-scale structural distance: L1 between finite-difference gradient maps
    at three dyadic scales, plus L2 between the coarsest images."""

    total = a.new_zeros(())
    for s in range(PROXY_SCALES):
        pa, pb = _pool(a, 2**s), _pool(b, 2**s)
        if pa.shape[1] > 1:
            total = total + torch.mean(
                torch.abs(torch.diff(pa, dim=1) - torch.diff(pb, dim=1))
            )
        if pa.shape[0] > 1:
            total = total + torch.mean(
                torch.abs(torch.diff(pa, dim=0) - torch.diff(pb, dim=0))
            )
    return total + mse(pa, pb)


def masked_mse(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Squared error over the masked pixels, normalized by their count."""
    count = mask.sum()
    if count == 0:
        return a.new_zeros(())
    diff = (a - b) ** 2 * mask.unsqueeze(-1).to(a.dtype)
    return diff.sum() / (count * a.shape[-1])


def _zero(sup: SupervisionSet) -> torch.Tensor:
    views = sup.views()
    return views[0].rendered.new_zeros(()) if views else torch.zeros(())


def hierarchical_loss(sup: SupervisionSet, weights: LossWeights) -> torch.Tensor:
    """(1/n)(1/m) Σ_i Σ_j λ_i λ_j (part MSE + λ_p · proxy of the part-masked images).

    n is the number of tiers and m the number of parts in the weight table;
    views inside a tier are averaged. Parts absent from a view add nothing.
    """

    sup.validate()
    n, m = len(sup.levels), len(weights.part)
    if n == 0 or m == 0:
        return _zero(sup)
    total = None
    for i, level in enumerate(sup.levels):
        lam_i = weights.level.get(i, 1.0)
        for view in level:
            for part_id, lam_j in weights.part.items():
                part = view.parts.part(part_id)
                if not part.any():
                    continue
                keep = part.unsqueeze(-1).to(view.image.dtype)
                term = masked_mse(view.image, view.rendered, part)
                if weights.perceptual:
                    term = term + weights.perceptual * perceptual_proxy(
                        view.image * keep, view.rendered * keep
                    )
                term = lam_i * lam_j * term / len(level)
                total = term if total is None else total + term
    if total is None:
        return _zero(sup)
    return total / (n * m)


def reconstruction_loss(sup: SupervisionSet, weights: LossWeights) -> torch.Tensor:
    """Σ over views of MSE + λ_m · mask MSE + λ_p · proxy; the input view counts w_in times."""

    sup.validate()
    total = None
    for view in sup.views():
        term = mse(view.image, view.rendered)
        if weights.mask:
            term = term + weights.mask * mse(view.mask.to(view.alpha.dtype), view.alpha)
        if weights.perceptual:
            term = term + weights.perceptual * perceptual_proxy(view.image, view.rendered)
        if view.is_input:
            term = weights.input_view_weight * term
        total = term if total is None else total + term
    return _zero(sup) if total is None else total


def total_loss(sup: SupervisionSet, weights: LossWeights) -> LossTerms:
    return LossTerms(hierarchical_loss(sup, weights), reconstruction_loss(sup, weights))


def rendered_gradients(
    loss: torch.Tensor, sup: SupervisionSet
) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """d loss / d (rendered image, rendered alpha) for every view, in views() order."""

    views = sup.views()
    targets = [t for v in views for t in (v.rendered, v.alpha)]
    grads = torch.autograd.grad(loss, targets, allow_unused=True, retain_graph=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(targets, grads)]
    return [(grads[2 * k], grads[2 * k + 1]) for k in range(len(views))]


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    err = float(mse(a.detach().to(torch.float64), b.detach().to(torch.float64)))
    if err < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean SSIM over channels with an 11×11 Gaussian window (σ = 1.5), valid region only.

    Images smaller than the window use the largest odd window that fits.
    """

    a = a.detach().to(torch.float64).movedim(-1, 0).unsqueeze(1)
    b = b.detach().to(torch.float64).movedim(-1, 0).unsqueeze(1)
    size = min(SSIM_WINDOW, a.shape[-2], a.shape[-1])
    size -= 1 - size % 2
    window = _gaussian_window(size, SSIM_SIGMA, torch.float64).view(1, 1, size, size)

    mu_a = F.conv2d(a, window)
    mu_b = F.conv2d(b, window)
    var_a = F.conv2d(a * a, window) - mu_a**2
    var_b = F.conv2d(b * b, window) - mu_b**2
    cov = F.conv2d(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())
