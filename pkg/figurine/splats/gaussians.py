from __future__ import annotations  # PEP563

import logging
from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

from ..utils.exceptions import InvariantViolation

log = logging.getLogger(f'figurine.{__name__}')

ATTRIBUTE_WIDTH = 14
S_MIN = 1e-4
S_MAX = 0.5


@dataclass(frozen=True, eq=False)
class GaussianSet:
    """N_p Gaussians: means (N,3), unit quaternions wxyz (N,4), scales (N,3),
    colors (N,3) and opacities (N,)."""

    means: torch.Tensor
    quats: torch.Tensor
    scales: torch.Tensor
    colors: torch.Tensor
    opacities: torch.Tensor

    @property
    def count(self) -> int:
        return self.means.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.means.dtype

    @classmethod
    def empty(cls, dtype: torch.dtype = torch.float32) -> GaussianSet:
        return cls(
            means=torch.zeros(0, 3, dtype=dtype),
            quats=torch.zeros(0, 4, dtype=dtype),
            scales=torch.zeros(0, 3, dtype=dtype),
            colors=torch.zeros(0, 3, dtype=dtype),
            opacities=torch.zeros(0, dtype=dtype),
        )

    @classmethod
    def from_matrix(cls, attributes: torch.Tensor) -> GaussianSet:
        """Inverse of as_matrix; columns are means 3, quats 4, scales 3, colors 3, opacity 1."""
        means, quats, scales, colors, opacities = attributes.split([3, 4, 3, 3, 1], dim=-1)
        return cls(means, quats, scales, colors, opacities.squeeze(-1))

    def as_matrix(self) -> torch.Tensor:
        return torch.cat(
            [self.means, self.quats, self.scales, self.colors, self.opacities.unsqueeze(-1)],
            dim=-1,
        )

    def tensors(self) -> tuple[torch.Tensor, ...]:
        return self.means, self.quats, self.scales, self.colors, self.opacities

    def detach(self) -> GaussianSet:
        return GaussianSet(*(t.detach() for t in self.tensors()))

    def to(self, dtype: torch.dtype) -> GaussianSet:
        return GaussianSet(*(t.to(dtype) for t in self.tensors()))

    def select(self, index: torch.Tensor) -> GaussianSet:
        return GaussianSet(*(t[index] for t in self.tensors()))

    def with_colors(self, colors: torch.Tensor) -> GaussianSet:
        return replace(self, colors=colors.to(self.dtype))

    @staticmethod
    def concat(sets: list[GaussianSet]) -> GaussianSet:
        return GaussianSet(*(torch.cat(parts) for parts in zip(*(s.tensors() for s in sets))))

    def validate(
        self, s_min: float = S_MIN, s_max: float = S_MAX, tol: float = 1e-5
    ) -> GaussianSet:
        """Raise InvariantViolation naming the first attribute out of its domain."""

        n = self.count
        for name, tensor, width in (
            ('means', self.means, 3),
            ('quats', self.quats, 4),
            ('scales', self.scales, 3),
            ('colors', self.colors, 3),
        ):
            if tensor.shape != (n, width):
                raise InvariantViolation(name, f'shape {tuple(tensor.shape)} != {(n, width)}')
            if not torch.isfinite(tensor).all():
                raise InvariantViolation(name, 'non-finite values')
        if self.opacities.shape != (n,):
            raise InvariantViolation('opacities', f'shape {tuple(self.opacities.shape)} != {(n,)}')
        if n == 0:
            return self
        if ((self.quats.norm(dim=-1) - 1.0).abs() > tol).any():
            raise InvariantViolation('quats', 'quaternions must be unit length')
        if (self.scales < s_min - tol).any() or (self.scales > s_max + tol).any():
            raise InvariantViolation('scales', f'scales must lie in [{s_min}, {s_max}]')
        if (self.colors < -tol).any() or (self.colors > 1 + tol).any():
            raise InvariantViolation('colors', 'colors must lie in [0, 1]')
        if (self.opacities < -tol).any() or (self.opacities > 1 + tol).any():
            raise InvariantViolation('opacities', 'opacities must lie in [0, 1]')
        return self


@dataclass(frozen=True)
class RenderOutput:
    color: torch.Tensor
    alpha: torch.Tensor
    contributors: torch.Tensor


def quaternion_to_rotation(q: torch.Tensor) -> torch.Tensor:
    """Rotation matrices (..., 3, 3) from wxyz quaternions, normalized first."""

    norm = q.norm(dim=-1)
    if (norm == 0).any():
        raise InvariantViolation('quats', 'zero-norm quaternion has no rotation')
    q = F.normalize(q, dim=-1)
    w, x, y, z = q.unbind(-1)
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(*q.shape[:-1], 3, 3)  # fmt: skip


def covariance_from(q: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """Σ = R(q) diag(s²) R(q)ᵀ, batched over leading dimensions."""
    R = quaternion_to_rotation(q)
    RS = R * s.unsqueeze(-2)
    return RS @ RS.transpose(-1, -2)
