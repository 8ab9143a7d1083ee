"""Multi-view latent inputs: ingestion, the toy encoder and view schedules.

Latents normally come from an external novel-view synthesizer; they are
used as stored, so any scaling the producer applies must already be baked
into the file.
"""

from __future__ import annotations  # PEP563

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from einops import reduce

from .cameras import ViewPose
from .geometry import CameraView
from .utils.codec import BinaryReader, BinaryWriter
from .utils.exceptions import (
    ConfigValueError,
    DimensionMismatch,
    ImageSizeError,
    InvariantViolation,
)

log = logging.getLogger(f'figurine.{__name__}')

MAGIC = b'FGLT'
VERSION = 2
ENCODER_STRIDE = 8
LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class LatentGrid:
    features: torch.Tensor
    pose: ViewPose
    camera: CameraView
    is_input: bool = False

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.features.shape)

    def validate(self, index: int = 0) -> LatentGrid:
        if self.features.dim() != 3 or min(self.features.shape) <= 0:
            raise DimensionMismatch('view', index, f'features must be h×w×c, got {self.shape}')
        if not torch.isfinite(self.features).all():
            raise InvariantViolation(f'views[{index}].features', 'non-finite values')
        if not 0.0 <= self.pose.azimuth < 360.0:
            raise InvariantViolation(
                f'views[{index}].azimuth', f'{self.pose.azimuth} is outside [0, 360)'
            )
        return self


@dataclass(frozen=True, eq=False)
class ViewBundle:
    """N latent grids, exactly one of them the input view, in a normalized scene."""

    grids: list[LatentGrid]
    center: torch.Tensor = field(default_factory=lambda: torch.zeros(3, dtype=torch.float64))
    radius: float = 1.0

    @property
    def n_views(self) -> int:
        return len(self.grids)

    @property
    def input_grid(self) -> LatentGrid:
        return next(g for g in self.grids if g.is_input)

    @property
    def cameras(self) -> list[CameraView]:
        return [g.camera for g in self.grids]

    def features(self) -> torch.Tensor:
        """Stacked N×h×w×c features."""
        return torch.stack([g.features for g in self.grids])

    def validate(self) -> ViewBundle:
        if not self.grids:
            raise InvariantViolation('views', 'a bundle needs at least one view')
        reference = self.grids[0].shape
        for i, grid in enumerate(self.grids):
            grid.validate(i)
            if grid.shape != reference:
                raise DimensionMismatch(
                    'view', i, f'features are {grid.shape}, view 0 has {reference}'
                )
        inputs = sum(g.is_input for g in self.grids)
        if inputs != 1:
            raise InvariantViolation('views', f'exactly one input view expected, found {inputs}')
        if self.radius <= 0:
            raise InvariantViolation('radius', f'scene radius must be positive, got {self.radius}')
        return self


def toy_encode(image: torch.Tensor) -> torch.Tensor:
    """Deterministic 8× reduction of an H×W×3 image in [0, 1].

    Each 8×8 block becomes (mean R, mean G, mean B, mean luminance-gradient
    magnitude), the gradient taken with forward differences that are zero on
    the last row and column.

    Raises
    ------
    ImageSizeError
        raised if H or W is not a multiple of 8
    """

    image = torch.as_tensor(image)
    H, W = image.shape[:2]
    if H % ENCODER_STRIDE or W % ENCODER_STRIDE:
        raise ImageSizeError(H, W, ENCODER_STRIDE)
    image = image.to(torch.float64)

    luma = image @ torch.tensor(LUMA, dtype=torch.float64)
    gx = torch.zeros_like(luma)
    gy = torch.zeros_like(luma)
    gx[:, :-1] = luma[:, 1:] - luma[:, :-1]
    gy[:-1, :] = luma[1:, :] - luma[:-1, :]
    magnitude = torch.sqrt(gx * gx + gy * gy)

    stacked = torch.cat([image, magnitude.unsqueeze(-1)], dim=-1)
    features = reduce(
        stacked, '(h p1) (w p2) c -> h w c', 'mean', p1=ENCODER_STRIDE, p2=ENCODER_STRIDE
    )
    return features.to(torch.float32)


def encode_views(
    images: list[torch.Tensor],
    cams: list[CameraView],
    poses: list[ViewPose],
    center=(0.0, 0.0, 0.0),
    radius: float = 1.0,
) -> ViewBundle:
    """Toy-encode one image per view; the first one is the input view."""

    grids = [
        LatentGrid(toy_encode(img), pose, cam, is_input=(i == 0))
        for i, (img, cam, pose) in enumerate(zip(images, cams, poses))
    ]
    center = torch.as_tensor(center, dtype=torch.float64)
    return ViewBundle(grids, center, float(radius)).validate()


def view_pose_schedule(n_views: int, elevation: float = 0.0) -> list[ViewPose]:
    if n_views < 1:
        raise ConfigValueError('model.n_views', f'need at least one view, got {n_views}')
    return [ViewPose(float(elevation), 360.0 * k / n_views) for k in range(n_views)]


def triangular_cfg(azimuth: float, front: float = 1.0, back: float = 2.5) -> float:
    """Guidance scale rising linearly from the front view to the back view and back."""
    a = azimuth % 360.0
    return front + (back - front) * (1.0 - abs(a - 180.0) / 180.0)


def save_view_bundle(bundle: ViewBundle, path: Path):
    bundle.validate()
    h, w, c = bundle.grids[0].shape
    writer = (
        BinaryWriter(MAGIC, VERSION)
        .pack('IIII', bundle.n_views, h, w, c)
        .array(bundle.center, 'f8')
        .pack('d', bundle.radius)
    )
    for grid in bundle.grids:
        cam = grid.camera
        writer.pack('ddB', grid.pose.elevation, grid.pose.azimuth, int(grid.is_input))
        writer.array(cam.K.flatten(), 'f8').array(cam.R.flatten(), 'f8').array(cam.t, 'f8')
        writer.pack('II', cam.width, cam.height)
        writer.pack('III', *grid.shape).array(grid.features.detach(), 'f4')
    writer.write(path)
    log.info(f'Wrote {bundle.n_views} latent view(s) of {h}x{w}x{c} to {path}')


def load_view_bundle(path: Path) -> ViewBundle:
    """Read and validate a latent bundle.

    Raises
    ------
    SchemaVersionMismatch
        raised if magic or version differ
    SchemaError
        raised on truncated files
    DimensionMismatch
        raised naming the first view whose dimensions differ from the header
    """

    reader = BinaryReader.open(path, MAGIC, VERSION, 'latent bundle')
    n_views, h, w, c = reader.unpack('IIII')
    center = torch.from_numpy(reader.array((3,), 'f8'))
    (radius,) = reader.unpack('d')

    grids = []
    for i in range(n_views):
        elevation, azimuth, is_input = reader.unpack('ddB')
        K = reader.array((3, 3), 'f8')
        R = reader.array((3, 3), 'f8')
        t = reader.array((3,), 'f8')
        width, height = reader.unpack('II')
        dims = reader.unpack('III')
        if dims != (h, w, c):
            raise DimensionMismatch('view', i, f'record holds {dims}, header says {(h, w, c)}')
        features = torch.from_numpy(reader.array(dims, 'f4'))
        K, R, t = (torch.from_numpy(a) for a in (K, R, t))
        cam = CameraView(K, R, t, width, height)
        grids.append(LatentGrid(features, ViewPose(elevation, azimuth), cam, bool(is_input)))
    reader.finish()

    bundle = ViewBundle(grids, center, radius).validate()
    log.debug(f'{path} loaded: {n_views} view(s) of {h}x{w}x{c}.')
    return bundle
