"""Splat export in the layout common 3DGS viewers read."""

import logging
from pathlib import Path

import numpy as np
import torch
from plyfile import PlyData, PlyElement, PlyParseError

from ..utils.exceptions import FileMissing, PathUnwritable, SchemaError
from .gaussians import GaussianSet

log = logging.getLogger(f'figurine.{__name__}')

SH_C0 = 0.28209479177387814
OPACITY_EPS = 1e-7

PROPERTIES = (
    ['x', 'y', 'z', 'opacity']
    + [f'scale_{i}' for i in range(3)]
    + [f'rot_{i}' for i in range(4)]
    + [f'f_dc_{i}' for i in range(3)]
)


def export_splats(gaussians: GaussianSet, path: Path):
    """Write a binary little-endian PLY with 14 float properties per vertex.

    Opacity is stored as a logit, scales as logs and colors as the
    zeroth spherical-harmonic coefficient.
    """

    path = Path(path)
    g = gaussians.detach().to(torch.float64)
    sigma = g.opacities.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS)
    columns = torch.cat(
        [
            g.means,
            torch.logit(sigma).unsqueeze(-1),
            torch.log(g.scales),
            g.quats,
            (g.colors - 0.5) / SH_C0,
        ],
        dim=-1,
    ).numpy()

    elements = np.empty(g.count, dtype=[(name, 'f4') for name in PROPERTIES])
    for i, name in enumerate(PROPERTIES):
        elements[name] = columns[:, i]

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        PlyData([PlyElement.describe(elements, 'vertex')], byte_order='<').write(str(path))
    except OSError as e:
        raise PathUnwritable(path, e.strerror or str(e))
    log.info(f'Exported {g.count} splats to {path}')


def import_splats(path: Path, dtype: torch.dtype = torch.float64) -> GaussianSet:
    path = Path(path)
    if not path.exists():
        raise FileMissing(path)
    try:
        vertex = PlyData.read(str(path))['vertex']
    except (PlyParseError, KeyError, ValueError) as e:
        raise SchemaError(path, f'not a splat file ({e})')

    missing = [name for name in PROPERTIES if name not in vertex.data.dtype.names]
    if missing:
        raise SchemaError(path, f'missing properties {", ".join(missing)}')
    columns = torch.from_numpy(
        np.stack([np.asarray(vertex[name], dtype=np.float64) for name in PROPERTIES], axis=-1)
    ).reshape(-1, len(PROPERTIES))

    means, opacity, log_scales, quats, f_dc = columns.split([3, 1, 3, 4, 3], dim=-1)
    return GaussianSet(
        means=means,
        quats=quats,
        scales=torch.exp(log_scales),
        colors=f_dc * SH_C0 + 0.5,
        opacities=torch.sigmoid(opacity.squeeze(-1)),
    ).to(dtype)
