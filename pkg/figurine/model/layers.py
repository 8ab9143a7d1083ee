"""Pre-norm attention blocks.

The cross-attention here only evaluates scores for admitted
(query, key) pairs, given as a sparse pair list; 'dense' is the plain
masked formulation it must agree with.
"""

from __future__ import annotations  # PEP563

import logging
import math
from dataclasses import dataclass

import torch
from einops import rearrange
from torch import nn

log = logging.getLogger(f'figurine.{__name__}')


@dataclass(frozen=True)
class WindowPairs:
    """Admitted (query, key) index pairs, sorted by query then key."""

    query: torch.Tensor
    key: torch.Tensor
    n_queries: int

    @property
    def count(self) -> int:
        return self.query.numel()

    @classmethod
    def empty(cls, n_queries: int) -> WindowPairs:
        none = torch.zeros(0, dtype=torch.long)
        return cls(none, none, n_queries)

    def admitted_per_query(self) -> torch.Tensor:
        return torch.bincount(self.query, minlength=self.n_queries)


class FeedForward(nn.Module):
    def __init__(self, dim: int, ratio: int = 4) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, ratio * dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(ratio * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.fc2(self.act(self.fc1(self.norm(x))))


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        assert dim % heads == 0
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj_out = nn.Linear(dim, dim)

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        """Attention probabilities (..., heads, L, L)."""
        q, k, _ = self._heads(x)
        return self._softmax(q, k)

    def _heads(self, x: torch.Tensor):
        qkv = self.qkv(self.norm(x))
        return rearrange(qkv, '... l (three h e) -> three ... h l e', three=3, h=self.heads)

    @staticmethod
    def _softmax(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = self._heads(x)
        out = self._softmax(q, k) @ v
        return x + self.proj_out(rearrange(out, '... h l e -> ... l (h e)'))


class IntraBlock(nn.Module):
    """Self-attention then FFN, each with a residual."""

    def __init__(self, dim: int, heads: int, ffn_ratio: int = 4) -> None:
        super().__init__()
        self.attn = SelfAttention(dim, heads)
        self.ffn = FeedForward(dim, ffn_ratio)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.ffn(self.attn(x))


class WindowedCrossAttention(nn.Module):
    """Latent tokens attend to human tokens through admitted pairs only."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        assert dim % heads == 0
        self.heads = heads
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj_out = nn.Linear(dim, dim)
        self.scores_evaluated = 0

    def _project(self, x: torch.Tensor, humans: torch.Tensor):
        q = rearrange(self.q(self.norm_q(x)), 'l (h e) -> l h e', h=self.heads)
        k, v = rearrange(
            self.kv(self.norm_kv(humans)), 'v (two h e) -> two v h e', two=2, h=self.heads
        )
        return q, k, v

    def _finish(self, x: torch.Tensor, mixed: torch.Tensor, has_keys: torch.Tensor):
        update = self.proj_out(rearrange(mixed, 'l h e -> l (h e)'))
        return x + torch.where(has_keys.unsqueeze(-1), update, torch.zeros_like(update))

    def forward(self, x: torch.Tensor, humans: torch.Tensor, pairs: WindowPairs) -> torch.Tensor:
        """Segment softmax over each query's admitted keys; empty rows pass through."""

        L = x.shape[0]
        has_keys = pairs.admitted_per_query() > 0
        if pairs.count == 0:
            return x
        q, k, v = self._project(x, humans)
        scale = 1.0 / math.sqrt(q.shape[-1])
        scores = (q[pairs.query] * k[pairs.key]).sum(dim=-1) * scale
        self.scores_evaluated += pairs.count * self.heads

        index = pairs.query.unsqueeze(-1).expand_as(scores)
        row_max = torch.full((L, self.heads), -math.inf, dtype=scores.dtype)
        row_max = row_max.scatter_reduce(0, index, scores.detach(), reduce='amax')
        expo = torch.exp(scores - row_max[pairs.query])
        denom = torch.zeros(L, self.heads, dtype=scores.dtype).index_add(0, pairs.query, expo)
        probs = expo / denom[pairs.query]

        mixed = torch.zeros_like(q).index_add(0, pairs.query, probs.unsqueeze(-1) * v[pairs.key])
        return self._finish(x, mixed, has_keys)

    def dense(self, x: torch.Tensor, humans: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Reference path: full L×V scores with masked entries set to -inf."""

        has_keys = mask.any(dim=1)
        if not has_keys.any():
            return x
        q, k, v = self._project(x, humans)
        scores = torch.einsum('lhe,vhe->hlv', q, k) / math.sqrt(q.shape[-1])
        scores = scores.masked_fill(~mask.unsqueeze(0), -math.inf)
        # empty rows would be all -inf; give them a dummy row, gated below
        scores = torch.where(has_keys.view(1, -1, 1), scores, torch.zeros_like(scores))
        probs = torch.softmax(scores, dim=-1)
        mixed = torch.einsum('hlv,vhe->lhe', probs, v)
        return self._finish(x, mixed, has_keys)


class InterBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_ratio: int = 4) -> None:
        super().__init__()
        self.cross = WindowedCrossAttention(dim, heads)
        self.ffn = FeedForward(dim, ffn_ratio)

    def forward(self, x: torch.Tensor, humans: torch.Tensor, pairs: WindowPairs) -> torch.Tensor:
        return self.ffn(self.cross(x, humans, pairs))
