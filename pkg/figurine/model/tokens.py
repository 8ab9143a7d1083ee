"""Token lattices for latent views and for the posed body."""

from __future__ import annotations  # PEP563

import logging
from dataclasses import dataclass

import torch
from einops import rearrange
from torch import nn

from ..geometry import CameraView, bilinear_sample, project_points
from ..utils.exceptions import DimensionMismatch
from .layers import WindowPairs

log = logging.getLogger(f'figurine.{__name__}')


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """Per-view tokens (N, rows·cols, d) on a rows×cols lattice of p×p latent patches."""

    tokens: torch.Tensor
    rows: int
    cols: int
    patch: int

    @property
    def per_view(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True, eq=False)
class HumanTokenSet:
    """Body tokens (V, d) plus, per view, each vertex's token cell (col, row) and validity."""

    tokens: torch.Tensor
    cells: torch.Tensor
    valid: torch.Tensor

    @property
    def count(self) -> int:
        return self.tokens.shape[0]


def patchify_embed(
    features: torch.Tensor, raymaps: torch.Tensor, embed: nn.Linear, patch: int
) -> TokenGrid:
    """Concatenate latents (N,h,w,c) with Plücker maps (N,h,w,6), cut p×p patches, embed.

    Raises
    ------
    DimensionMismatch
        raised if a view's ray map resolution differs from its latent
    """

    for i, (feat, rays) in enumerate(zip(features, raymaps)):
        if feat.shape[:2] != rays.shape[:2]:
            raise DimensionMismatch(
                'view', i, f'ray map {tuple(rays.shape[:2])} vs latent {tuple(feat.shape[:2])}'
            )
    stacked = torch.cat([features, raymaps.to(features.dtype)], dim=-1)
    patches = rearrange(stacked, 'n (r p1) (c p2) k -> n (r c) (p1 p2 k)', p1=patch, p2=patch)
    _, h, w, _ = features.shape
    return TokenGrid(embed(patches), h // patch, w // patch, patch)


def token_cells(
    points: torch.Tensor, cam: CameraView, latent_hw: tuple[int, int], patch: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Token-lattice cell (col, row) of each projected point and its validity.

    Latent cell = floor(pixel · latent / image), token cell = floor(latent cell / p).
    """

    h, w = latent_hw
    proj = project_points(points.detach().to(torch.float64), cam)
    u = proj.uv[:, 0] * (w / cam.width)
    v = proj.uv[:, 1] * (h / cam.height)
    latent = torch.stack([torch.floor(u), torch.floor(v)], dim=-1)
    latent = torch.where(proj.valid.unsqueeze(-1), latent, torch.zeros_like(latent)).long()
    return torch.div(latent, patch, rounding_mode='floor'), proj.valid


def geometric_tokenize(
    vertices: torch.Tensor,
    input_features: torch.Tensor,
    cam0: CameraView,
    embed: nn.Linear,
    blocks: nn.ModuleList,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Embed each vertex with the input-view latent sampled at its projection.

    Returns
    -------
        (tokens V×d after the tokenizer's own blocks, pre-attention embeddings V×d)
    """

    h, w, _ = input_features.shape
    proj = project_points(vertices.detach().to(torch.float64), cam0)
    uv = proj.uv.clone()
    uv[:, 0] *= w / cam0.width
    uv[:, 1] *= h / cam0.height
    uv = torch.nan_to_num(uv, nan=0.0, posinf=0.0, neginf=0.0)
    sampled = bilinear_sample(input_features, uv.to(input_features.dtype))
    embedded = embed(torch.cat([vertices.to(input_features.dtype), sampled], dim=-1))
    tokens = embedded.unsqueeze(0)
    for block in blocks:
        tokens = block(tokens)
    return tokens.squeeze(0), embedded


def _window_origin(cells: torch.Tensor, k_win: int, extent: int) -> torch.Tensor:
    start = torch.div(2 * cells - (k_win - 1), 2, rounding_mode='floor')
    return start.clamp(min=0).clamp(max=max(extent - k_win, 0))


def window_pairs(
    cells: torch.Tensor, valid: torch.Tensor, rows: int, cols: int, k_win: int
) -> WindowPairs:
    """Sparse (query, vertex) pairs: vertex j is admitted to every token of its window.

    The window is the k_win×k_win block of token cells whose top-left corner
    is floor(cell - (k_win - 1) / 2), clamped to the lattice.
    """

    ids = torch.nonzero(valid).flatten()
    if ids.numel() == 0:
        return WindowPairs.empty(rows * cols)
    x0 = _window_origin(cells[ids, 0], k_win, cols)
    y0 = _window_origin(cells[ids, 1], k_win, rows)
    offsets = torch.arange(k_win)
    xs = x0.unsqueeze(-1) + offsets
    ys = y0.unsqueeze(-1) + offsets
    qx = xs.unsqueeze(1).expand(-1, k_win, -1)
    qy = ys.unsqueeze(2).expand(-1, -1, k_win)
    inside = (qx < cols) & (qy < rows)
    query = (qy * cols + qx)[inside]
    key = ids.view(-1, 1, 1).expand(-1, k_win, k_win)[inside]

    order = torch.argsort(query * (cells.shape[0] + 1) + key)
    return WindowPairs(query[order], key[order], rows * cols)


def projection_window_mask(
    cells: torch.Tensor, valid: torch.Tensor, rows: int, cols: int, k_win: int
) -> torch.Tensor:
    """Dense boolean (rows·cols)×V form of window_pairs."""

    pairs = window_pairs(cells, valid, rows, cols, k_win)
    mask = torch.zeros(rows * cols, cells.shape[0], dtype=torch.bool)
    mask[pairs.query, pairs.key] = True
    return mask
