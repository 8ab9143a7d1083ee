"""Tiled, depth-ordered Gaussian splat rasterizer.

Projection (3D covariance to a dilated 2D conic) is plain tensor code and
differentiates through autograd; compositing runs per 16×16 tile inside
_CompositeSplats, whose backward is written out by hand.
"""

from __future__ import annotations  # PEP563

import logging
import math
from dataclasses import dataclass

import torch

from ..geometry import CameraView
from .gaussians import GaussianSet, RenderOutput, covariance_from

log = logging.getLogger(f'figurine.{__name__}')

TILE = 16
NEAR_CLIP = 0.01
DILATION = 0.3
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 1.0 - 1e-5
T_MIN = 1e-4


@dataclass(frozen=True)
class ProjectedSplats:
    """Screen-space splats; conic holds (a, b, c) of the inverse 2D covariance."""

    mean2d: torch.Tensor
    conic: torch.Tensor
    cov2d: torch.Tensor
    depth: torch.Tensor
    visible: torch.Tensor


@dataclass(frozen=True)
class TilePlan:
    tiles: list[tuple[int, int, torch.Tensor]]
    pairs: int


@dataclass(frozen=True)
class SplatGradients:
    means: torch.Tensor
    quats: torch.Tensor
    scales: torch.Tensor
    colors: torch.Tensor
    opacities: torch.Tensor

    def tensors(self) -> tuple[torch.Tensor, ...]:
        return self.means, self.quats, self.scales, self.colors, self.opacities


def project_gaussians(gaussians: GaussianSet, cam: CameraView) -> ProjectedSplats:
    """Local-affine (EWA) projection with a 0.3 px² low-pass dilation.

    Gaussians at depth <= 0.01 are marked invisible.
    """

    dtype = gaussians.dtype
    K, R, t = cam.K.to(dtype), cam.R.to(dtype), cam.t.to(dtype)
    p_cam = gaussians.means @ R.T + t
    x, y, z = p_cam.unbind(-1)
    visible = z > NEAR_CLIP
    z = torch.where(visible, z, torch.ones_like(z))

    fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
    mean2d = torch.stack([fx * x / z + cx, fy * y / z + cy], dim=-1)

    zero = torch.zeros_like(z)
    J = torch.stack(
        [
            torch.stack([fx / z, zero, -fx * x / (z * z)], dim=-1),
            torch.stack([zero, fy / z, -fy * y / (z * z)], dim=-1),
        ],
        dim=-2,
    )
    cov3d = covariance_from(gaussians.quats, gaussians.scales)
    JW = J @ R
    cov2d = JW @ cov3d @ JW.transpose(-1, -2)
    cov2d = cov2d + DILATION * torch.eye(2, dtype=dtype)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = torch.stack([c / det, -b / det, a / det], dim=-1)
    return ProjectedSplats(mean2d, conic, cov2d, p_cam[:, 2], visible)


def plan_tiles(
    projected: ProjectedSplats, opacities: torch.Tensor, h: int, w: int
) -> TilePlan:
    """Bin splats into tiles and sort each tile's list by (depth, index).

    A splat's footprint is the bounding box of its α = 1/255 contour,
    padded slightly, so binning never drops a contributing pixel.
    """

    with torch.no_grad():
        n = projected.depth.shape[0]
        tiles_x, tiles_y = math.ceil(w / TILE), math.ceil(h / TILE)
        sigma = opacities.detach().to(torch.float64)
        reach = 2.0 * torch.log(torch.clamp(sigma * 255.0, min=1.0))
        cov = projected.cov2d.detach().to(torch.float64)
        half_x = torch.sqrt(reach * cov[:, 0, 0]) * (1 + 1e-6) + 1e-3
        half_y = torch.sqrt(reach * cov[:, 1, 1]) * (1 + 1e-6) + 1e-3
        mean = projected.mean2d.detach().to(torch.float64)

        col0 = torch.ceil(mean[:, 0] - half_x - 0.5).clamp(min=0)
        col1 = torch.floor(mean[:, 0] + half_x - 0.5).clamp(max=w - 1)
        row0 = torch.ceil(mean[:, 1] - half_y - 0.5).clamp(min=0)
        row1 = torch.floor(mean[:, 1] + half_y - 0.5).clamp(max=h - 1)
        live = (
            projected.visible
            & (sigma >= ALPHA_MIN)
            & (col0 <= col1)
            & (row0 <= row1)
            & torch.isfinite(mean).all(dim=-1)
        )

        ids = torch.nonzero(live).flatten()
        if ids.numel() == 0:
            return TilePlan([], 0)
        tx0 = (col0[ids].long() // TILE)
        tx1 = (col1[ids].long() // TILE)
        ty0 = (row0[ids].long() // TILE)
        ty1 = (row1[ids].long() // TILE)
        nx = tx1 - tx0 + 1
        counts = nx * (ty1 - ty0 + 1)

        owner = torch.repeat_interleave(torch.arange(ids.numel()), counts)
        first = torch.cumsum(counts, 0) - counts
        local = torch.arange(int(counts.sum())) - first[owner]
        tile_id = (ty0[owner] + local // nx[owner]) * tiles_x + tx0[owner] + local % nx[owner]

        # stable depth rank breaks ties by gaussian index
        depth_rank = torch.empty(n, dtype=torch.long)
        depth_rank[torch.sort(projected.depth.detach(), stable=True).indices] = torch.arange(n)
        key = tile_id * n + depth_rank[ids[owner]]
        order = torch.argsort(key)
        tile_sorted = tile_id[order]
        splat_sorted = ids[owner[order]]

        uniq, per_tile = torch.unique_consecutive(tile_sorted, return_counts=True)
        tiles = [
            (int(tid) // tiles_x, int(tid) % tiles_x, chunk)
            for tid, chunk in zip(uniq.tolist(), torch.split(splat_sorted, per_tile.tolist()))
        ]
        log.debug(
            f'{ids.numel()} splats over {len(tiles)}/{tiles_x * tiles_y} tiles, {len(order)} pairs'
        )
        return TilePlan(tiles, len(order))


def _tile_pixels(ty: int, tx: int, h: int, w: int, dtype: torch.dtype):
    rows = torch.arange(ty * TILE, min((ty + 1) * TILE, h))
    cols = torch.arange(tx * TILE, min((tx + 1) * TILE, w))
    r, c = torch.meshgrid(rows, cols, indexing='ij')
    r, c = r.flatten(), c.flatten()
    return r, c, torch.stack([c.to(dtype) + 0.5, r.to(dtype) + 0.5], dim=-1)


def _tile_weights(pix, ids, mean2d, conic, opacities):
    """Per (pixel, splat) alpha, transmittance before the splat and blend weight."""

    delta = pix.unsqueeze(1) - mean2d[ids].unsqueeze(0)
    dx, dy = delta[..., 0], delta[..., 1]
    a, b, c = conic[ids].unbind(-1)
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    raw = opacities[ids] * torch.exp(power)
    clamped = raw > ALPHA_MAX
    alpha = torch.where(clamped, torch.full_like(raw, ALPHA_MAX), raw)
    alpha = torch.where(alpha >= ALPHA_MIN, alpha, torch.zeros_like(alpha))

    keep = torch.cumprod(1.0 - alpha, dim=1)
    t_before = torch.cat([torch.ones_like(keep[:, :1]), keep[:, :-1]], dim=1)
    active = (t_before >= T_MIN) & (alpha > 0)
    alpha = torch.where(active, alpha, torch.zeros_like(alpha))
    t_before = torch.cat(
        [torch.ones_like(keep[:, :1]), torch.cumprod(1.0 - alpha, dim=1)[:, :-1]], dim=1
    )
    weight = alpha * t_before
    t_final = t_before[:, -1] * (1.0 - alpha[:, -1])
    return delta, power, alpha, clamped, active, t_before, weight, t_final


class _CompositeSplats(torch.autograd.Function):
    @staticmethod
    def forward(ctx, mean2d, conic, opacities, colors, background, plan, h, w):
        dtype = colors.dtype
        image = background.to(dtype).expand(h, w, 3).clone()
        alpha_img = torch.zeros(h, w, dtype=dtype)
        counts = torch.zeros(h, w, dtype=torch.long)

        for ty, tx, ids in plan.tiles:
            r, c, pix = _tile_pixels(ty, tx, h, w, dtype)
            _, _, alpha, _, active, _, weight, t_final = _tile_weights(
                pix, ids, mean2d, conic, opacities
            )
            image[r, c] = weight @ colors[ids] + t_final.unsqueeze(-1) * background.to(dtype)
            alpha_img[r, c] = 1.0 - t_final
            counts[r, c] = active.sum(dim=1)

        ctx.plan = plan
        ctx.hw = (h, w)
        ctx.save_for_backward(mean2d, conic, opacities, colors, background)
        ctx.mark_non_differentiable(counts)
        return image, alpha_img, counts

    @staticmethod
    def backward(ctx, grad_image, grad_alpha, _grad_counts):
        mean2d, conic, opacities, colors, background = ctx.saved_tensors
        h, w = ctx.hw
        dtype = colors.dtype
        d_mean2d = torch.zeros_like(mean2d)
        d_conic = torch.zeros_like(conic)
        d_opacity = torch.zeros_like(opacities)
        d_colors = torch.zeros_like(colors)
        if grad_image is None:
            grad_image = torch.zeros(h, w, 3, dtype=dtype)
        if grad_alpha is None:
            grad_alpha = torch.zeros(h, w, dtype=dtype)

        for ty, tx, ids in ctx.plan.tiles:
            r, c, pix = _tile_pixels(ty, tx, h, w, dtype)
            delta, power, alpha, clamped, active, t_before, weight, t_final = _tile_weights(
                pix, ids, mean2d, conic, opacities
            )
            g = grad_image[r, c]
            G = g @ colors[ids].T
            E = g @ background.to(dtype) - grad_alpha[r, c]

            later = G * weight
            behind = torch.flip(torch.cumsum(torch.flip(later, [1]), 1), [1]) - later
            behind = behind + (E * t_final).unsqueeze(-1)
            d_alpha = t_before * G - behind / (1.0 - alpha)
            d_alpha = torch.where(active & ~clamped, d_alpha, torch.zeros_like(d_alpha))

            gauss = torch.exp(power)
            d_sigma = (d_alpha * gauss).sum(dim=0)
            d_power = d_alpha * opacities[ids] * gauss
            dx, dy = delta[..., 0], delta[..., 1]
            a, b, cc = conic[ids].unbind(-1)
            d_mu = torch.stack(
                [
                    (d_power * (a * dx + b * dy)).sum(dim=0),
                    (d_power * (b * dx + cc * dy)).sum(dim=0),
                ],
                dim=-1,
            )
            d_con = torch.stack(
                [
                    (-0.5 * d_power * dx * dx).sum(dim=0),
                    (-d_power * dx * dy).sum(dim=0),
                    (-0.5 * d_power * dy * dy).sum(dim=0),
                ],
                dim=-1,
            )
            d_mean2d.index_add_(0, ids, d_mu)
            d_conic.index_add_(0, ids, d_con)
            d_opacity.index_add_(0, ids, d_sigma)
            d_colors.index_add_(0, ids, weight.T @ g)

        return d_mean2d, d_conic, d_opacity, d_colors, None, None, None, None


def render(
    gaussians: GaussianSet,
    cam: CameraView,
    h: int,
    w: int,
    background=(0.0, 0.0, 0.0),
) -> RenderOutput:
    """Front-to-back α-compositing of the projected splats.

    Parameters
    ----------
    gaussians
        the splats, float32 or float64
    cam
        camera; intrinsics are rescaled if its resolution differs from h×w
    h, w
        output resolution
    background, optional
        RGB filled into the remaining transmittance, by default black

    Returns
    -------
        color (h,w,3), alpha (h,w) and per-pixel contributing-splat counts
    """

    dtype = gaussians.dtype
    cam = cam if (cam.width, cam.height) == (w, h) else cam.resized(w, h)
    bg = torch.as_tensor(background, dtype=dtype)
    if gaussians.count == 0:
        return RenderOutput(
            color=bg.expand(h, w, 3).clone(),
            alpha=torch.zeros(h, w, dtype=dtype),
            contributors=torch.zeros(h, w, dtype=torch.long),
        )

    projected = project_gaussians(gaussians, cam)
    plan = plan_tiles(projected, gaussians.opacities, h, w)
    color, alpha, counts = _CompositeSplats.apply(
        projected.mean2d,
        projected.conic,
        gaussians.opacities,
        gaussians.colors,
        bg,
        plan,
        h,
        w,
    )
    return RenderOutput(color=color, alpha=alpha, contributors=counts)


def tangent_projection(quats: torch.Tensor, d_quats: torch.Tensor) -> torch.Tensor:
    """Remove the component of a quaternion gradient along the quaternion."""
    unit = quats / quats.norm(dim=-1, keepdim=True)
    return d_quats - (d_quats * unit).sum(dim=-1, keepdim=True) * unit


def render_backward(
    gaussians: GaussianSet,
    cam: CameraView,
    h: int,
    w: int,
    upstream: torch.Tensor,
    background=(0.0, 0.0, 0.0),
    upstream_alpha: torch.Tensor | None = None,
) -> SplatGradients:
    """Gradients of ⟨upstream, image⟩ (+ ⟨upstream_alpha, alpha⟩) per attribute.

    Quaternion gradients are projected onto the tangent space of the unit
    sphere at each quaternion.
    """

    leaves = [t.detach().clone().requires_grad_(True) for t in gaussians.tensors()]
    if gaussians.count == 0:
        return SplatGradients(*(torch.zeros_like(t) for t in leaves))
    with torch.enable_grad():
        out = render(GaussianSet(*leaves), cam, h, w, background)
        outputs, grads_out = [out.color], [upstream.to(gaussians.dtype)]
        if upstream_alpha is not None:
            outputs.append(out.alpha)
            grads_out.append(upstream_alpha.to(gaussians.dtype))
        grads = torch.autograd.grad(outputs, leaves, grads_out, allow_unused=True)
    grads = [torch.zeros_like(leaf) if g is None else g for leaf, g in zip(leaves, grads)]
    grads[1] = tangent_projection(leaves[1].detach(), grads[1])
    return SplatGradients(*grads)
