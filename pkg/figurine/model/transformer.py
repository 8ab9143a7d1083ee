from __future__ import annotations  # PEP563

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from ..body_prior import BodyMesh
from ..geometry import CameraView, pixel_centers, plucker_raymap, rays_through
from ..latents import ViewBundle
from ..splats.gaussians import GaussianSet
from ..utils.exceptions import BundleMismatch
from .config import ModelConfig
from .layers import InterBlock, IntraBlock, WindowPairs
from .tokens import (
    HumanTokenSet,
    TokenGrid,
    geometric_tokenize,
    patchify_embed,
    token_cells,
    window_pairs,
)

log = logging.getLogger(f'figurine.{__name__}')

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)
# depth 1, quaternion offset 4, scale 3, color 3, opacity 1
RAW_LAYOUT = (1, 4, 3, 3, 1)
RAW_WIDTH = sum(RAW_LAYOUT)


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """Forward result: raw head output (N,h,w,12), the decoded splats and the token stages."""

    raw: torch.Tensor
    gaussians: GaussianSet
    tokens: TokenGrid
    humans: HumanTokenSet | None
    pairs: list[WindowPairs]


def decode_gaussians(
    raw: torch.Tensor, cams: list[CameraView], cfg: ModelConfig
) -> GaussianSet:
    """One Gaussian per latent cell from raw (N,h,w,12) values.

    Each mean lies on the ray through its cell center, camera center +
    t·direction with t in [near, far]. The other channels are quaternion
    offset 4, scale 3, color 3 and opacity 1.
    """

    n, h, w, width = raw.shape
    assert width == RAW_WIDTH
    depth_raw, quat_raw, scale_raw, color_raw, opacity_raw = raw.split(RAW_LAYOUT, dim=-1)

    means = []
    for i, cam in enumerate(cams):
        origin, direction = rays_through(pixel_centers(h, w, cam, raw.dtype), cam)
        t = cfg.near + torch.sigmoid(depth_raw[i]) * (cfg.far - cfg.near)
        means.append(origin + t * direction)

    identity = torch.tensor(IDENTITY_QUAT, dtype=raw.dtype)
    return GaussianSet(
        means=torch.stack(means).reshape(-1, 3),
        quats=F.normalize(quat_raw + identity, dim=-1).reshape(-1, 4),
        scales=(cfg.s_min + torch.sigmoid(scale_raw) * (cfg.s_max - cfg.s_min)).reshape(-1, 3),
        colors=torch.sigmoid(color_raw).reshape(-1, 3),
        opacities=torch.sigmoid(opacity_raw).reshape(-1),
    )


class ReconTransformer(nn.Module):
    """Latent views plus a posed body in, pixel-aligned Gaussians out."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg.validate()
        d, p, c = cfg.dim, cfg.patch, cfg.latent_channels
        self.patch_embed = nn.Linear((c + 6) * p * p, d)
        self.intra = nn.ModuleList(
            IntraBlock(d, cfg.heads, cfg.ffn_ratio) for _ in range(cfg.n_intra)
        )
        self.human_embed = nn.Linear(3 + c, d)
        self.human_blocks = nn.ModuleList(
            IntraBlock(d, cfg.heads, cfg.ffn_ratio) for _ in range(cfg.n_human_intra)
        )
        self.inter = nn.ModuleList(
            InterBlock(d, cfg.heads, cfg.ffn_ratio) for _ in range(cfg.n_inter)
        )
        self.head_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, p * p * RAW_WIDTH)
        self.reset_parameters()

    def reset_parameters(self):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.trunc_normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        for block in [*self.intra, *self.human_blocks]:
            nn.init.zeros_(block.attn.proj_out.weight)
            nn.init.zeros_(block.ffn.fc2.weight)
        for block in self.inter:
            nn.init.zeros_(block.cross.proj_out.weight)
            nn.init.zeros_(block.ffn.fc2.weight)

    def no_decay_names(self) -> set[str]:
        """Parameters of the normalization layers."""
        names = set()
        for module_name, module in self.named_modules():
            if isinstance(module, nn.LayerNorm):
                names.update(f'{module_name}.{p}' for p, _ in module.named_parameters())
        return names

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def check_bundle(self, bundle: ViewBundle, source='<bundle>'):
        cfg = self.cfg
        expected = (cfg.latent_h, cfg.latent_w, cfg.latent_channels)
        if bundle.n_views != cfg.n_views:
            raise BundleMismatch(source, f'{bundle.n_views} views, model expects {cfg.n_views}')
        if bundle.grids[0].shape != expected:
            raise BundleMismatch(
                source, f'latents are {bundle.grids[0].shape}, model expects {expected}'
            )

    def embed_views(self, bundle: ViewBundle, features: torch.Tensor | None = None) -> TokenGrid:
        cfg = self.cfg
        features = bundle.features().to(self.dtype) if features is None else features
        raymaps = torch.stack(
            [plucker_raymap(cam, cfg.latent_h, cfg.latent_w).as_tensor() for cam in bundle.cameras]
        )
        return patchify_embed(features, raymaps, self.patch_embed, cfg.patch)

    def tokenize_body(
        self, mesh: BodyMesh, bundle: ViewBundle, features: torch.Tensor
    ) -> HumanTokenSet:
        cfg = self.cfg
        index = next(i for i, g in enumerate(bundle.grids) if g.is_input)
        tokens, _ = geometric_tokenize(
            mesh.vertices.to(self.dtype),
            features[index],
            bundle.grids[index].camera,
            self.human_embed,
            self.human_blocks,
        )
        cells, valid = zip(
            *(
                token_cells(mesh.vertices, cam, (cfg.latent_h, cfg.latent_w), cfg.patch)
                for cam in bundle.cameras
            )
        )
        return HumanTokenSet(tokens, torch.stack(cells), torch.stack(valid))

    def forward(
        self,
        bundle: ViewBundle,
        mesh: BodyMesh | None = None,
        features: torch.Tensor | None = None,
    ) -> Reconstruction:
        """Run the whole pipeline.

        Parameters
        ----------
        bundle
            N latent views, cameras in the normalized scene frame
        mesh, optional
            posed body in the same frame; None (or human_prior off) gives
            every query an empty window
        features, optional
            (N,h,w,c) tensor overriding the bundle's features, for input gradients
        """

        cfg = self.cfg
        self.check_bundle(bundle)
        features = bundle.features().to(self.dtype) if features is None else features
        grid = self.embed_views(bundle, features)
        tokens = grid.tokens
        for block in self.intra:
            tokens = block(tokens)

        rows, cols = cfg.grid
        humans = None
        if cfg.human_prior and mesh is not None:
            humans = self.tokenize_body(mesh, bundle, features)
            pairs = [
                window_pairs(humans.cells[i], humans.valid[i], rows, cols, cfg.k_win)
                for i in range(bundle.n_views)
            ]
            keys = humans.tokens
        else:
            pairs = [WindowPairs.empty(rows * cols) for _ in range(bundle.n_views)]
            keys = tokens.new_zeros(0, cfg.dim)

        views = []
        for i in range(bundle.n_views):
            x = tokens[i]
            for block in self.inter:
                x = block(x, keys, pairs[i])
            views.append(x)
        tokens = torch.stack(views)

        raw = self.head(self.head_norm(tokens))
        raw = rearrange(
            raw,
            'n (r c) (p1 p2 k) -> n (r p1) (c p2) k',
            r=rows,
            p1=cfg.patch,
            p2=cfg.patch,
            k=RAW_WIDTH,
        )
        gaussians = decode_gaussians(raw, bundle.cameras, cfg)
        log.debug(
            f'forward: {gaussians.count} splats, {sum(p.count for p in pairs)} window pairs'
        )
        grid = TokenGrid(tokens, rows, cols, cfg.patch)
        return Reconstruction(raw, gaussians, grid, humans, pairs)

    def scores_evaluated(self) -> int:
        return sum(block.cross.scores_evaluated for block in self.inter)


def backward(
    model: ReconTransformer,
    recon: Reconstruction,
    grad_raw: torch.Tensor,
    inputs: list[torch.Tensor] | None = None,
) -> tuple[dict[str, torch.Tensor], list[torch.Tensor]]:
    """Reverse pass from a gradient on the raw head output.

    Returns
    -------
        gradients per named parameter, and per tensor in 'inputs'
    """

    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    inputs = inputs or []
    grads = torch.autograd.grad(
        recon.raw,
        [p for _, p in named] + inputs,
        grad_raw,
        retain_graph=True,
        allow_unused=True,
    )
    targets = [p for _, p in named] + inputs
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(targets, grads)]
    return {n: g for (n, _), g in zip(named, grads)}, grads[len(named) :]
