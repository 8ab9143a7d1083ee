"""Parametric body model: shape blend shapes plus linear blend skinning.

Pose-dependent corrective offsets are not modelled; M(beta, theta) is the
shaped template deformed by the per-joint rigid transforms only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .utils.classes import BodyPart
from .utils.codec import BinaryReader, BinaryWriter
from .utils.exceptions import InvariantViolation, VertexIndexError

log = logging.getLogger(f'figurine.{__name__}')

MAGIC = b'FGBM'
VERSION = 1
NUM_BETAS = 10
NUM_JOINTS = 24
SMALL_ANGLE = 1e-8

# kinematic tree shared with SMPL-compatible data
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)


@dataclass(frozen=True, eq=False)
class BodyModel:
    template: torch.Tensor
    faces: torch.Tensor
    shape_dirs: torch.Tensor
    weights: torch.Tensor
    joint_regressor: torch.Tensor
    parents: torch.Tensor
    part_labels: torch.Tensor
    part_table: dict[int, tuple[str, int]] = field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]

    def validate(self) -> BodyModel:
        """Check every structural invariant; raises InvariantViolation naming the field."""

        V = self.num_vertices
        J = self.num_joints
        if self.template.shape != (V, 3) or not torch.isfinite(self.template).all():
            raise InvariantViolation('template', 'must be a finite V×3 array')
        if self.shape_dirs.shape != (V, 3, NUM_BETAS):
            raise InvariantViolation(
                'shape_dirs', f'shape {tuple(self.shape_dirs.shape)} != {(V, 3, NUM_BETAS)}'
            )
        if self.weights.shape != (V, J):
            raise InvariantViolation('weights', f'shape {tuple(self.weights.shape)} != {(V, J)}')
        if (self.weights < 0).any():
            row = int(torch.nonzero((self.weights < 0).any(dim=1))[0])
            raise InvariantViolation('weights', f'row {row} has a negative weight')
        sums = self.weights.sum(dim=1)
        bad = torch.nonzero((sums - 1.0).abs() > 1e-5).flatten()
        if bad.numel():
            row = int(bad[0])
            raise InvariantViolation('weights', f'row {row} sums to {float(sums[row]):.6f}')
        if self.joint_regressor.shape != (J, V):
            raise InvariantViolation(
                'joint_regressor', f'shape {tuple(self.joint_regressor.shape)} != {(J, V)}'
            )
        if J == 0 or int(self.parents[0]) != -1:
            raise InvariantViolation('parents', 'joint 0 must be the root')
        for j in range(1, J):
            if not 0 <= int(self.parents[j]) < j:
                raise InvariantViolation(
                    'parents', f'joint {j} has parent {int(self.parents[j])}, not an earlier joint'
                )
        if self.faces.numel() and (self.faces.min() < 0 or self.faces.max() >= V):
            raise InvariantViolation('faces', f'indices must lie in [0, {V})')
        if self.part_labels.shape != (V,):
            raise InvariantViolation('part_labels', 'one label per vertex expected')
        if (self.part_labels < 1).any() or (self.part_labels > NUM_JOINTS).any():
            raise InvariantViolation('part_labels', 'labels must lie in 1..24')
        if self.part_table:
            counts = torch.bincount(self.part_labels.long(), minlength=NUM_JOINTS + 1)
            for part_id, (name, count) in self.part_table.items():
                if int(counts[part_id]) != count:
                    raise InvariantViolation(
                        'part_table',
                        f'part {part_id} ({name}) lists {count} vertices, '
                        f'labels hold {int(counts[part_id])}',
                    )
        return self


@dataclass(frozen=True, eq=False)
class BodyMesh:
    vertices: torch.Tensor
    faces: torch.Tensor
    part_labels: torch.Tensor
    joints: torch.Tensor | None = None

    def normalized(self, center: torch.Tensor, radius: float) -> BodyMesh:
        center = torch.as_tensor(center, dtype=self.vertices.dtype)
        joints = None if self.joints is None else (self.joints - center) / radius
        return BodyMesh((self.vertices - center) / radius, self.faces, self.part_labels, joints)


def bounding_sphere(vertices: torch.Tensor) -> tuple[torch.Tensor, float]:
    """Center of the axis-aligned bounds and the radius enclosing every vertex."""
    center = 0.5 * (vertices.min(dim=0).values + vertices.max(dim=0).values)
    radius = float((vertices - center).norm(dim=1).max())
    return center, radius


def skew(v: torch.Tensor) -> torch.Tensor:
    zero = torch.zeros_like(v[..., 0])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return torch.stack(
        [
            torch.stack([zero, -z, y], dim=-1),
            torch.stack([z, zero, -x], dim=-1),
            torch.stack([-y, x, zero], dim=-1),
        ],
        dim=-2,
    )


def rodrigues(axis_angle: torch.Tensor) -> torch.Tensor:
    """Rotation matrices from axis-angle vectors (..., 3) -> (..., 3, 3)."""

    angle = axis_angle.norm(dim=-1, keepdim=True)
    eye = torch.eye(3, dtype=axis_angle.dtype).expand(*axis_angle.shape[:-1], 3, 3)
    small = angle < SMALL_ANGLE

    # second-order series below the cutoff
    k_small = skew(axis_angle)
    series = eye + k_small + 0.5 * k_small @ k_small

    unit = axis_angle / torch.where(small, torch.ones_like(angle), angle)
    k = skew(unit)
    s = torch.sin(angle).unsqueeze(-1)
    c = torch.cos(angle).unsqueeze(-1)
    exact = eye + s * k + (1.0 - c) * (k @ k)
    return torch.where(small.unsqueeze(-1), series, exact)


def pose_body(model: BodyModel, beta: torch.Tensor, theta: torch.Tensor) -> BodyMesh:
    """Apply shape and pose parameters.

    Parameters
    ----------
    model
        a validated BodyModel
    beta
        10 shape coefficients
    theta
        24×3 axis-angle joint rotations, relative to the parent joint

    Returns
    -------
        the posed mesh, sharing faces and labels with the model
    """

    dtype = model.template.dtype
    beta = torch.as_tensor(beta, dtype=dtype).reshape(NUM_BETAS)
    theta = torch.as_tensor(theta, dtype=dtype).reshape(model.num_joints, 3)

    shaped = model.template + torch.einsum('vck,k->vc', model.shape_dirs, beta)
    joints = model.joint_regressor @ shaped
    rotations = rodrigues(theta)

    J = model.num_joints
    eye = torch.eye(4, dtype=dtype)
    world: list[torch.Tensor] = []
    for j in range(J):
        parent = int(model.parents[j])
        local = eye.clone()
        local[:3, :3] = rotations[j]
        local[:3, 3] = joints[j] if parent < 0 else joints[j] - joints[parent]
        world.append(local if parent < 0 else world[parent] @ local)
    world_t = torch.stack(world)

    # remove the rest-pose joint location so transforms act on template coords
    skinning = world_t.clone()
    skinning[:, :3, 3] = world_t[:, :3, 3] - torch.einsum('jab,jb->ja', world_t[:, :3, :3], joints)

    blended = torch.einsum('vj,jab->vab', model.weights, skinning)
    vertices = torch.einsum('vab,vb->va', blended[:, :3, :3], shaped) + blended[:, :3, 3]
    return BodyMesh(
        vertices=vertices,
        faces=model.faces,
        part_labels=model.part_labels,
        joints=world_t[:, :3, 3],
    )


def vertex_part(model: BodyModel, idx: int) -> int:
    if not 0 <= idx < model.num_vertices:
        raise VertexIndexError(idx, model.num_vertices)
    return int(model.part_labels[idx])


def save_body_model(model: BodyModel, path: Path):
    V, F, J = model.num_vertices, model.faces.shape[0], model.num_joints
    writer = (
        BinaryWriter(MAGIC, VERSION)
        .pack('III', V, F, J)
        .array(model.template, 'f4')
        .array(model.shape_dirs, 'f4')
        .array(model.weights, 'f4')
        .array(model.joint_regressor, 'f4')
        .array(model.parents, 'i4')
        .array(model.faces, 'i4')
        .array(model.part_labels, 'u1')
        .pack('B', len(model.part_table))
    )
    for part_id, (name, count) in sorted(model.part_table.items()):
        writer.pack('B', part_id).text(name).pack('I', count)
    writer.write(path)
    log.info(f'Wrote body model ({V} vertices, {F} faces) to {path}')


def load_body_model(path: Path) -> BodyModel:
    """Read and validate a body model container.

    Raises
    ------
    SchemaVersionMismatch
        raised if magic or version differ
    SchemaError
        raised on truncated or oversized files
    InvariantViolation
        raised if any model invariant fails, naming the field
    """

    reader = BinaryReader.open(path, MAGIC, VERSION, 'body model')
    V, F, J = reader.unpack('III')

    def f64(arr: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(arr.astype(np.float64))

    template = f64(reader.array((V, 3), 'f4'))
    shape_dirs = f64(reader.array((V, 3, NUM_BETAS), 'f4'))
    weights = f64(reader.array((V, J), 'f4'))
    regressor = f64(reader.array((J, V), 'f4'))
    parents = torch.from_numpy(reader.array((J,), 'i4').astype(np.int64))
    faces = torch.from_numpy(reader.array((F, 3), 'i4').astype(np.int64))
    labels = torch.from_numpy(reader.array((V,), 'u1').astype(np.int64))
    (n_parts,) = reader.unpack('B')
    table = {}
    for _ in range(n_parts):
        (part_id,) = reader.unpack('B')
        name = reader.text()
        (count,) = reader.unpack('I')
        table[part_id] = (name, count)
    reader.finish()

    model = BodyModel(template, faces, shape_dirs, weights, regressor, parents, labels, table)
    model.validate()
    log.debug(f'{path} loaded: {V} vertices, {F} faces, {J} joints.')
    return model


# rest joint locations of the capsule human, y up, facing -z
_REST_JOINTS = (
    (0.00, 0.00, 0.00),
    (-0.08, -0.09, 0.00),
    (0.08, -0.09, 0.00),
    (0.00, 0.11, 0.00),
    (-0.10, -0.47, 0.00),
    (0.10, -0.47, 0.00),
    (0.00, 0.24, 0.00),
    (-0.10, -0.85, 0.00),
    (0.10, -0.85, 0.00),
    (0.00, 0.36, 0.00),
    (-0.11, -0.92, -0.08),
    (0.11, -0.92, -0.08),
    (0.00, 0.52, 0.00),
    (-0.07, 0.45, 0.00),
    (0.07, 0.45, 0.00),
    (0.00, 0.60, -0.02),
    (-0.18, 0.46, 0.00),
    (0.18, 0.46, 0.00),
    (-0.44, 0.46, 0.00),
    (0.44, 0.46, 0.00),
    (-0.68, 0.46, 0.00),
    (0.68, 0.46, 0.00),
    (-0.76, 0.46, 0.00),
    (0.76, 0.46, 0.00),
)

# segment end per part: a child joint index, or an explicit tip
_SEGMENT_END = {
    0: 3, 1: 4, 2: 5, 3: 6, 4: 7, 5: 8, 6: 9, 7: 10, 8: 11, 9: 12,
    10: (-0.11, -0.94, -0.17), 11: (0.11, -0.94, -0.17),
    12: 15, 13: 16, 14: 17, 15: (0.00, 0.82, -0.02),
    16: 18, 17: 19, 18: 20, 19: 21, 20: 22, 21: 23,
    22: (-0.86, 0.46, 0.00), 23: (0.86, 0.46, 0.00),
}  # fmt: skip

_RADII = (
    0.12, 0.075, 0.075, 0.11, 0.055, 0.055, 0.11, 0.045, 0.045, 0.12, 0.04, 0.04,
    0.05, 0.045, 0.045, 0.10, 0.045, 0.045, 0.038, 0.038, 0.03, 0.03, 0.035, 0.035,
)  # fmt: skip

_RING_AT = (0.0, 0.5, 0.9)
_RING_TAPER = (1.0, 1.0, 0.8)
_CLOSED_BOTH_ENDS = (0, 15)


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n1 = np.cross(axis, helper)
    n1 /= np.linalg.norm(n1)
    return n1, np.cross(axis, n1)


def build_capsule_model(segments: int = 8, seed: int = 1234) -> BodyModel:
    """The bundled toy body: one tapered tube per part, 602 vertices at the defaults.

    Every part is three rings of 'segments' vertices plus a distal pole;
    pelvis and head also close their proximal end. Ring 0 sits on the
    part's joint, so averaging it regresses the joint exactly.
    """

    rng = np.random.default_rng(seed)
    joints = np.array(_REST_JOINTS, dtype=np.float64)
    verts, labels, radial, faces = [], [], [], []
    weights_rows: list[dict[int, float]] = []
    ring0_index: dict[int, list[int]] = {}

    for j in range(NUM_JOINTS):
        start = joints[j]
        end_spec = _SEGMENT_END[j]
        end = joints[end_spec] if isinstance(end_spec, int) else np.array(end_spec)
        axis = end - start
        axis /= np.linalg.norm(axis)
        n1, n2 = _frame(axis)
        base = len(verts)
        rings = []
        for r, (at, taper) in enumerate(zip(_RING_AT, _RING_TAPER)):
            ring = []
            centre = start + at * (end - start)
            for k in range(segments):
                phi = 2.0 * math.pi * k / segments
                out = math.cos(phi) * n1 + math.sin(phi) * n2
                ring.append(len(verts))
                verts.append(centre + _RADII[j] * taper * out)
                radial.append(out)
                labels.append(j + 1)
                parent = PARENTS[j]
                weights_rows.append({j: 0.7, parent: 0.3} if r == 0 and parent >= 0 else {j: 1.0})
            rings.append(ring)
        ring0_index[j] = rings[0]

        pole = len(verts)
        verts.append(end)
        radial.append(axis)
        labels.append(j + 1)
        weights_rows.append({j: 1.0})

        for lower, upper in zip(rings[:-1], rings[1:]):
            for k in range(segments):
                a, b = lower[k], lower[(k + 1) % segments]
                c, d = upper[k], upper[(k + 1) % segments]
                faces.extend([(a, b, d), (a, d, c)])
        for k in range(segments):
            faces.append((rings[-1][k], rings[-1][(k + 1) % segments], pole))

        if j in _CLOSED_BOTH_ENDS:
            back = len(verts)
            verts.append(start - 0.5 * _RADII[j] * axis)
            radial.append(-axis)
            labels.append(j + 1)
            weights_rows.append({j: 1.0})
            for k in range(segments):
                faces.append((rings[0][(k + 1) % segments], rings[0][k], back))
        log.debug(f'part {j + 1}: vertices {base}..{len(verts) - 1}')

    V = len(verts)
    template = np.array(verts)
    weights = np.zeros((V, NUM_JOINTS))
    for v, row in enumerate(weights_rows):
        for j, wt in row.items():
            weights[v, j] = wt
    regressor = np.zeros((NUM_JOINTS, V))
    for j, ring in ring0_index.items():
        regressor[j, ring] = 1.0 / len(ring)

    label_arr = np.array(labels)
    radial_arr = np.array(radial)
    shape_dirs = np.zeros((V, 3, NUM_BETAS))
    shape_dirs[:, :, 0] = 0.05 * template
    shape_dirs[:, :, 1] = 0.02 * radial_arr
    for k in range(2, NUM_BETAS):
        per_part = rng.normal(scale=0.01, size=(NUM_JOINTS + 1, 3))
        shape_dirs[:, :, k] = per_part[label_arr] + 0.005 * rng.normal() * radial_arr

    counts = np.bincount(label_arr, minlength=NUM_JOINTS + 1)
    table = {int(p): (BodyPart(p).label, int(counts[p])) for p in range(1, NUM_JOINTS + 1)}

    model = BodyModel(
        template=torch.from_numpy(template),
        faces=torch.tensor(faces, dtype=torch.long),
        shape_dirs=torch.from_numpy(shape_dirs),
        weights=torch.from_numpy(weights),
        joint_regressor=torch.from_numpy(regressor),
        parents=torch.tensor(PARENTS, dtype=torch.long),
        part_labels=torch.from_numpy(label_arr).long(),
        part_table=table,
    )
    return model.validate()


def segment_points(points: torch.Tensor, mesh: BodyMesh, chunk: int = 4096) -> torch.Tensor:
    """Part id of the nearest posed vertex for every point (N,3)."""

    vertices = mesh.vertices.detach().to(torch.float64)
    labels = []
    for block in points.detach().to(torch.float64).split(chunk):
        nearest = torch.cdist(block, vertices).argmin(dim=1)
        labels.append(mesh.part_labels[nearest])
    if not labels:
        return torch.zeros(0, dtype=torch.long)
    return torch.cat(labels).long()


def segment_gaussians(gaussians, mesh: BodyMesh) -> torch.Tensor:
    """3D part segmentation of a reconstruction by nearest-vertex label transfer."""
    return segment_points(gaussians.means, mesh)
