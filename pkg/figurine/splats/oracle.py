from __future__ import annotations  # PEP563

import logging
import math

import torch

from ..geometry import CameraView
from .gaussians import GaussianSet, RenderOutput, covariance_from
from .rasterize import ALPHA_MAX, ALPHA_MIN, DILATION, NEAR_CLIP, T_MIN

log = logging.getLogger(f'figurine.{__name__}')


def render_oracle(
    gaussians: GaussianSet,
    cam: CameraView,
    h: int,
    w: int,
    background=(0.0, 0.0, 0.0),
) -> RenderOutput:
    """Reference compositor: every pixel walks every Gaussian in (depth, index) order.

    No tiling, no footprint bounds. Only for small inputs.
    """

    cam = cam if (cam.width, cam.height) == (w, h) else cam.resized(w, h)
    g = gaussians.detach().to(torch.float64)
    bg = [float(v) for v in background]
    color = torch.tensor(bg, dtype=torch.float64).expand(h, w, 3).clone()
    alpha_img = torch.zeros(h, w, dtype=torch.float64)
    counts = torch.zeros(h, w, dtype=torch.long)

    splats = []
    if g.count:
        p_cam = g.means @ cam.R.T + cam.t
        cov3d = covariance_from(g.quats, g.scales)
        fx, fy = cam.focal
        cx, cy = cam.principal_point
        for i in range(g.count):
            x, y, z = p_cam[i].tolist()
            if z <= NEAR_CLIP:
                continue
            J = torch.tensor(
                [[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]],
                dtype=torch.float64,
            )
            cov2d = J @ cam.R @ cov3d[i] @ cam.R.T @ J.T
            a = float(cov2d[0, 0]) + DILATION
            b = float(cov2d[0, 1])
            c = float(cov2d[1, 1]) + DILATION
            det = a * c - b * b
            splats.append(
                (
                    z,
                    i,
                    fx * x / z + cx,
                    fy * y / z + cy,
                    (c / det, -b / det, a / det),
                    float(g.opacities[i]),
                    g.colors[i].tolist(),
                )
            )
    splats.sort(key=lambda s: (s[0], s[1]))

    for row in range(h):
        for col in range(w):
            px, py = col + 0.5, row + 0.5
            T = 1.0
            acc = [0.0, 0.0, 0.0]
            used = 0
            for _, _, u, v, (ca, cb, cc), sigma, rgb in splats:
                dx, dy = px - u, py - v
                power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                alpha = min(sigma * math.exp(power), ALPHA_MAX)
                if alpha < ALPHA_MIN:
                    continue
                for k in range(3):
                    acc[k] += rgb[k] * alpha * T
                T *= 1.0 - alpha
                used += 1
                if T < T_MIN:
                    break
            color[row, col] = torch.tensor([acc[k] + T * bg[k] for k in range(3)])
            alpha_img[row, col] = 1.0 - T
            counts[row, col] = used

    dtype = gaussians.dtype
    return RenderOutput(color=color.to(dtype), alpha=alpha_img.to(dtype), contributors=counts)
