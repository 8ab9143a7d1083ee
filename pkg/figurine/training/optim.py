import logging
import math
from dataclasses import dataclass
from typing import Iterable

import torch
from torch import nn

from ..utils.exceptions import ConfigValueError, NonFiniteGradient

log = logging.getLogger(f'figurine.{__name__}')


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings, keys 'train.<field>' in config files."""

    peak_lr: float = 4e-4
    warmup_steps: int = 2000
    total_steps: int = 20000
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.05
    grad_clip: float = 1.0
    seed: int = 0
    scenes: int = 1
    log_every: int = 10
    eval_every: int = 100
    checkpoint_every: int = 500

    def validate(self) -> 'TrainConfig':
        if self.peak_lr <= 0:
            raise ConfigValueError('train.peak_lr', f'must be positive, got {self.peak_lr}')
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigValueError(
                'train.warmup_steps',
                f'{self.warmup_steps} is not within [0, total_steps={self.total_steps}]',
            )
        if self.batch_size < 1 or self.scenes < 1:
            raise ConfigValueError(
                'train.batch_size', 'batch size and scene count must be positive'
            )
        for name in ('log_every', 'eval_every', 'checkpoint_every'):
            value = getattr(self, name)
            if value < 1:
                raise ConfigValueError(f'train.{name}', f'must be at least 1, got {value}')
        return self


def cosine_warmup_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to the peak, then cosine decay to 0 at total_steps."""

    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return 0.0
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return 0.5 * cfg.peak_lr * (1.0 + math.cos(math.pi * progress))


def build_optimizer(
    named_parameters: Iterable[tuple[str, nn.Parameter]],
    cfg: TrainConfig,
    no_decay: set[str] = frozenset(),
) -> torch.optim.AdamW:
    """AdamW with weight decay off for the names in 'no_decay'."""

    decay, plain = [], []
    for name, param in named_parameters:
        if param.requires_grad:
            (plain if name in no_decay else decay).append(param)
    log.debug(f'{len(decay)} decayed and {len(plain)} undecayed parameter tensors')
    groups = [
        {'params': decay, 'weight_decay': cfg.weight_decay},
        {'params': plain, 'weight_decay': 0.0},
    ]
    return torch.optim.AdamW(
        [g for g in groups if g['params']],
        lr=0.0,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
    )


def adamw_step(
    optimizer: torch.optim.AdamW,
    named_parameters: Iterable[tuple[str, nn.Parameter]],
    cfg: TrainConfig,
    lr: float,
) -> float:
    """Check, clip and apply the accumulated gradients.

    Returns
    -------
        global gradient norm before clipping

    Raises
    ------
    NonFiniteGradient
        raised before any parameter changes if a gradient holds inf or nan
    """

    named = [(n, p) for n, p in named_parameters if p.grad is not None]
    bad = [n for n, p in named if not torch.isfinite(p.grad).all()]
    if bad:
        raise NonFiniteGradient(bad)
    params = [p for _, p in named]
    if cfg.grad_clip > 0:
        norm = float(torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip))
    else:
        squares = [(p.grad.detach() ** 2).sum() for p in params]
        norm = float(torch.sqrt(sum(squares))) if params else 0.0
    for group in optimizer.param_groups:
        group['lr'] = lr
    optimizer.step()
    return norm
