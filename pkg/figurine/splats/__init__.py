from .gaussians import GaussianSet, RenderOutput, covariance_from
from .oracle import render_oracle
from .ply import export_splats, import_splats
from .rasterize import render, render_backward

__all__ = [
    'GaussianSet',
    'RenderOutput',
    'covariance_from',
    'export_splats',
    'import_splats',
    'render',
    'render_backward',
    'render_oracle',
]
