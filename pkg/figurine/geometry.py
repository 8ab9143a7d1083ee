"""Cameras, projection, ray embeddings and mesh rasterization.

Pixel convention used everywhere: continuous (u, v) coordinates with the
origin at the top-left image corner, so pixel (row i, col j) has its center
at (j + 0.5, i + 0.5). Cameras follow OpenCV axes (x right, y down,
z forward) and map world points by x_cam = R x_world + t.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .utils.exceptions import CameraConfigError

log = logging.getLogger(f'figurine.{__name__}')

MIN_DEPTH = 1e-6
NUM_PARTS = 24


@dataclass(frozen=True, eq=False)
class CameraView:
    K: torch.Tensor
    R: torch.Tensor
    t: torch.Tensor
    width: int
    height: int

    def __post_init__(self):
        K = torch.as_tensor(self.K, dtype=torch.float64).reshape(3, 3).clone()
        R = torch.as_tensor(self.R, dtype=torch.float64).reshape(3, 3).clone()
        t = torch.as_tensor(self.t, dtype=torch.float64).reshape(3).clone()
        object.__setattr__(self, 'K', K)
        object.__setattr__(self, 'R', R)
        object.__setattr__(self, 't', t)
        object.__setattr__(self, 'width', int(self.width))
        object.__setattr__(self, 'height', int(self.height))

        if self.width <= 0 or self.height <= 0:
            raise CameraConfigError(f'resolution {self.width}x{self.height} is empty')
        if not torch.allclose(R @ R.T, torch.eye(3, dtype=torch.float64), atol=1e-6):
            raise CameraConfigError('rotation is not orthonormal')
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise CameraConfigError('focal lengths must be positive')
        if K[0, 1] != 0 or K[1, 0] != 0:
            raise CameraConfigError('intrinsics must have zero skew')
        if not torch.equal(K[2], torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)):
            raise CameraConfigError('last intrinsics row must be (0, 0, 1)')

    @property
    def center(self) -> torch.Tensor:
        return -self.R.T @ self.t

    @property
    def focal(self) -> tuple[float, float]:
        return float(self.K[0, 0]), float(self.K[1, 1])

    @property
    def principal_point(self) -> tuple[float, float]:
        return float(self.K[0, 2]), float(self.K[1, 2])

    def resized(self, width: int, height: int) -> CameraView:
        """Same camera with intrinsics rescaled to another resolution."""
        scale = torch.tensor(
            [[width / self.width], [height / self.height], [1.0]], dtype=torch.float64
        )
        return CameraView(self.K * scale, self.R, self.t, width, height)


@dataclass(frozen=True)
class Projection:
    uv: torch.Tensor
    depth: torch.Tensor
    valid: torch.Tensor


@dataclass(frozen=True)
class RayMap:
    directions: torch.Tensor
    moments: torch.Tensor

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.directions.shape[:2])

    @property
    def origins(self) -> torch.Tensor:
        # closest point of each line to the world origin
        return torch.cross(self.directions, self.moments, dim=-1)

    def as_tensor(self) -> torch.Tensor:
        return torch.cat([self.directions, self.moments], dim=-1)


@dataclass(frozen=True)
class PartMaskSet:
    labels: torch.Tensor
    depth: torch.Tensor

    @property
    def foreground(self) -> torch.Tensor:
        return self.labels > 0

    def part(self, part_id: int) -> torch.Tensor:
        return self.labels == part_id


@dataclass(frozen=True)
class MeshFragments:
    """Per-pixel result of z-buffer rasterization; face id -1 is background."""

    face_ids: torch.Tensor
    depth: torch.Tensor
    barycentric: torch.Tensor = field(repr=False)

    @property
    def coverage(self) -> torch.Tensor:
        return self.face_ids >= 0


def _camera_tensors(cam: CameraView, dtype: torch.dtype):
    return cam.K.to(dtype), cam.R.to(dtype), cam.t.to(dtype)


def world_to_camera(points: torch.Tensor, cam: CameraView) -> torch.Tensor:
    _, R, t = _camera_tensors(cam, points.dtype)
    return points @ R.T + t


def project_points(points: torch.Tensor, cam: CameraView) -> Projection:
    """Perspective projection of M×3 world points into pixel coordinates.

    Points behind the camera (depth <= 1e-6) or landing outside
    [0, width) × [0, height) are flagged invalid, not dropped.
    """

    K, _, _ = _camera_tensors(cam, points.dtype)
    p_cam = world_to_camera(points, cam)
    depth = p_cam[..., 2]
    in_front = depth > MIN_DEPTH
    safe = torch.where(in_front, depth, torch.ones_like(depth))
    homog = p_cam @ K.T
    uv = homog[..., :2] / safe.unsqueeze(-1)
    inside = (
        (uv[..., 0] >= 0)
        & (uv[..., 0] < cam.width)
        & (uv[..., 1] >= 0)
        & (uv[..., 1] < cam.height)
    )
    return Projection(uv=uv, depth=depth, valid=in_front & inside)


def pixel_centers(
    h: int, w: int, cam: CameraView, dtype: torch.dtype = torch.float64
) -> torch.Tensor:
    """Image-space (u, v) of the centers of an h×w grid laid over the camera frame."""
    v, u = torch.meshgrid(
        (torch.arange(h, dtype=dtype) + 0.5) * (cam.height / h),
        (torch.arange(w, dtype=dtype) + 0.5) * (cam.width / w),
        indexing='ij',
    )
    return torch.stack([u, v], dim=-1)


def rays_through(uv: torch.Tensor, cam: CameraView) -> tuple[torch.Tensor, torch.Tensor]:
    """World-space origins and unit directions of the rays through image points."""
    K, R, _ = _camera_tensors(cam, uv.dtype)
    if abs(torch.linalg.det(K).item()) < 1e-12:
        raise CameraConfigError('intrinsics are singular')
    homog = torch.cat([uv, torch.ones_like(uv[..., :1])], dim=-1)
    d_cam = homog @ torch.linalg.inv(K).T
    d_world = d_cam @ R
    d_world = d_world / d_world.norm(dim=-1, keepdim=True)
    origin = cam.center.to(uv.dtype).expand_as(d_world)
    return origin, d_world


def plucker_raymap(
    cam: CameraView, h: int, w: int, dtype: torch.dtype = torch.float64
) -> RayMap:
    """Plücker coordinates (direction, origin × direction) per grid-cell center."""

    if h <= 0 or w <= 0:
        raise CameraConfigError(f'ray map resolution {h}x{w} is empty')
    origin, direction = rays_through(pixel_centers(h, w, cam, dtype), cam)
    moment = torch.cross(origin, direction, dim=-1)
    return RayMap(directions=direction, moments=moment)


def bilinear_sample(grid: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
    """Sample an h×w×c grid at (u, v) grid-space coordinates.

    Cell (i, j) is centered at (j + 0.5, i + 0.5); samples beyond the
    outermost centers take the border value.
    """

    h, w, c = grid.shape
    lead = uv.shape[:-1]
    flat = uv.reshape(1, 1, -1, 2).to(grid.dtype)
    norm = torch.stack([2.0 * flat[..., 0] / w - 1.0, 2.0 * flat[..., 1] / h - 1.0], dim=-1)
    sampled = F.grid_sample(
        grid.permute(2, 0, 1).unsqueeze(0),
        norm,
        mode='bilinear',
        padding_mode='border',
        align_corners=False,
    )
    return sampled[0, :, 0, :].T.reshape(*lead, c)


def face_labels(faces: torch.Tensor, vertex_labels: torch.Tensor) -> torch.Tensor:
    """Majority vertex label per triangle, ties going to the lowest part id."""
    l0, l1, l2 = (vertex_labels[faces[:, k]] for k in range(3))
    lowest = torch.minimum(torch.minimum(l0, l1), l2)
    return torch.where(
        (l0 == l1) | (l0 == l2), l0, torch.where(l1 == l2, l1, lowest)
    )


def rasterize_mesh(
    vertices: torch.Tensor, faces: torch.Tensor, cam: CameraView, h: int, w: int
) -> MeshFragments:
    """Z-buffer rasterization at pixel centers.

    Triangles with a vertex at depth <= 1e-6 or zero screen area are
    skipped. Depth is perspective-correct; on exact depth ties the
    lower face index wins. No back-face culling.
    """

    cam = cam if (cam.width, cam.height) == (w, h) else cam.resized(w, h)
    verts = vertices.to(torch.float64)
    proj = project_points(verts, cam)
    xy, z = proj.uv, proj.depth

    zbuf = torch.full((h, w), math.inf, dtype=torch.float64)
    face_ids = torch.full((h, w), -1, dtype=torch.long)
    bary = torch.zeros(h, w, 3, dtype=torch.float64)

    tri_xy = xy[faces]
    tri_z = z[faces]
    usable = (tri_z > MIN_DEPTH).all(dim=1)
    lo = tri_xy.min(dim=1).values
    hi = tri_xy.max(dim=1).values
    col0 = torch.clamp(torch.ceil(lo[:, 0] - 0.5), min=0).long()
    col1 = torch.clamp(torch.floor(hi[:, 0] - 0.5), max=w - 1).long()
    row0 = torch.clamp(torch.ceil(lo[:, 1] - 0.5), min=0).long()
    row1 = torch.clamp(torch.floor(hi[:, 1] - 0.5), max=h - 1).long()
    usable &= (col0 <= col1) & (row0 <= row1)

    for f in torch.nonzero(usable).flatten().tolist():
        (x0, y0), (x1, y1), (x2, y2) = tri_xy[f].tolist()
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        rows = torch.arange(row0[f], row1[f] + 1, dtype=torch.float64) + 0.5
        cols = torch.arange(col0[f], col1[f] + 1, dtype=torch.float64) + 0.5
        py, px = torch.meshgrid(rows, cols, indexing='ij')
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        inv_z = w0 / tri_z[f, 0] + w1 / tri_z[f, 1] + w2 / tri_z[f, 2]
        depth = 1.0 / inv_z

        r_sl = slice(int(row0[f]), int(row1[f]) + 1)
        c_sl = slice(int(col0[f]), int(col1[f]) + 1)
        closer = inside & (depth < zbuf[r_sl, c_sl])
        if not closer.any():
            continue
        persp = torch.stack(
            [w0 / tri_z[f, 0], w1 / tri_z[f, 1], w2 / tri_z[f, 2]], dim=-1
        ) * depth.unsqueeze(-1)
        zbuf[r_sl, c_sl] = torch.where(closer, depth, zbuf[r_sl, c_sl])
        face_ids[r_sl, c_sl] = torch.where(closer, f, face_ids[r_sl, c_sl])
        bary[r_sl, c_sl] = torch.where(closer.unsqueeze(-1), persp, bary[r_sl, c_sl])

    return MeshFragments(face_ids=face_ids, depth=zbuf, barycentric=bary)


def shade_vertex_colors(
    fragments: MeshFragments,
    faces: torch.Tensor,
    vertex_colors: torch.Tensor,
    background: torch.Tensor,
) -> torch.Tensor:
    """Perspective-correct interpolation of per-vertex colors over the covered pixels."""
    ids = fragments.face_ids.clamp(min=0)
    corner_colors = vertex_colors.to(torch.float64)[faces[ids]]
    shaded = (fragments.barycentric.unsqueeze(-1) * corner_colors).sum(dim=-2)
    bg = torch.as_tensor(background, dtype=torch.float64).expand_as(shaded)
    return torch.where(fragments.coverage.unsqueeze(-1), shaded, bg)


def rasterize_part_masks(
    mesh,
    labels: torch.Tensor | None,
    cam: CameraView,
    h: int,
    w: int,
    fragments: MeshFragments | None = None,
) -> PartMaskSet:
    """Label image (0 = background, 1..24 = part) and depth from the z-buffer.

    Parameters
    ----------
    mesh
        posed BodyMesh
    labels, optional
        per-vertex part ids, by default the mesh's own labels
    fragments, optional
        an earlier rasterize_mesh result for the same mesh and camera
    """

    labels = mesh.part_labels if labels is None else labels
    if fragments is None:
        fragments = rasterize_mesh(mesh.vertices, mesh.faces, cam, h, w)
    tri_labels = face_labels(mesh.faces, labels.long())
    label_image = torch.where(
        fragments.coverage,
        tri_labels[fragments.face_ids.clamp(min=0)],
        torch.zeros_like(fragments.face_ids),
    )
    return PartMaskSet(labels=label_image, depth=fragments.depth)


def raycast_part_masks(
    mesh, labels: torch.Tensor | None, cam: CameraView, h: int, w: int
) -> PartMaskSet:
    """Exhaustive oracle: intersect every pixel ray with every triangle."""

    labels = mesh.part_labels if labels is None else labels
    cam = cam if (cam.width, cam.height) == (w, h) else cam.resized(w, h)
    verts = mesh.vertices.to(torch.float64)
    faces = mesh.faces
    tri_labels = face_labels(faces, labels.long())

    depth_ok = (world_to_camera(verts, cam)[:, 2] > MIN_DEPTH)[faces].all(dim=1)
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    e1, e2 = v1 - v0, v2 - v0
    R = cam.R
    origin, directions = rays_through(pixel_centers(h, w, cam), cam)

    label_image = torch.zeros(h, w, dtype=torch.long)
    depth_image = torch.full((h, w), math.inf, dtype=torch.float64)
    for i in range(h):
        for j in range(w):
            o, d = origin[i, j], directions[i, j]
            pvec = torch.cross(d.expand_as(e2), e2, dim=-1)
            det = (e1 * pvec).sum(-1)
            ok = depth_ok & (det.abs() > 1e-12)
            inv = torch.where(ok, 1.0 / torch.where(ok, det, torch.ones_like(det)), det)
            tvec = o - v0
            u = (tvec * pvec).sum(-1) * inv
            qvec = torch.cross(tvec, e1, dim=-1)
            v = (d * qvec).sum(-1) * inv
            t = (e2 * qvec).sum(-1) * inv
            hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
            if not hit.any():
                continue
            z = t * (R[2] @ d)
            z = torch.where(hit, z, torch.full_like(z, math.inf))
            best = int(torch.argmin(z))
            depth_image[i, j] = z[best]
            label_image[i, j] = tri_labels[best]

    return PartMaskSet(labels=label_image, depth=depth_image)


def look_at(
    eye: torch.Tensor,
    target: torch.Tensor,
    width: int,
    height: int,
    focal: float,
    up: tuple[float, float, float] = (0.0, 1.0, 0.0),
) -> CameraView:
    eye = torch.as_tensor(eye, dtype=torch.float64)
    target = torch.as_tensor(target, dtype=torch.float64)
    forward = target - eye
    forward = forward / forward.norm()
    up_vec = torch.tensor(up, dtype=torch.float64)
    right = torch.cross(forward, up_vec, dim=0)
    if right.norm() < 1e-9:
        raise CameraConfigError('viewing direction is parallel to the up vector')
    right = right / right.norm()
    down = torch.cross(forward, right, dim=0)
    R = torch.stack([right, down, forward])
    K = torch.tensor(
        [[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]],
        dtype=torch.float64,
    )
    return CameraView(K, R, -R @ eye, width, height)


def orbit_position(
    azimuth_deg: float, elevation_deg: float, radius: float, target
) -> torch.Tensor:
    a, e = math.radians(azimuth_deg), math.radians(elevation_deg)
    offset = torch.tensor(
        [-math.cos(e) * math.sin(a), math.sin(e), -math.cos(e) * math.cos(a)],
        dtype=torch.float64,
    )
    return torch.as_tensor(target, dtype=torch.float64) + radius * offset


def make_orbit_cameras(
    count: int,
    elevation_deg: float,
    radius: float,
    target=(0.0, 0.0, 0.0),
    width: int = 512,
    height: int = 512,
    focal: float | None = None,
    azimuth_offset_deg: float = 0.0,
) -> list[CameraView]:
    """Cameras evenly spaced in azimuth, all looking at target.

    Azimuth 0 sits on the -z side of the target; the focal length
    defaults to the image width (about 53 degrees field of view).
    """

    if count < 1:
        raise CameraConfigError(f'orbit needs at least one camera, got {count}')
    if radius <= 0:
        raise CameraConfigError(f'orbit radius must be positive, got {radius}')
    focal = float(width) if focal is None else focal
    cams = []
    for k in range(count):
        azimuth = (azimuth_offset_deg + 360.0 * k / count) % 360.0
        eye = orbit_position(azimuth, elevation_deg, radius, target)
        cams.append(look_at(eye, target, width, height, focal))
    return cams
