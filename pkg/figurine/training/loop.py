"""The desk-scale training loop.

One step renders every supervision view of a scene from the predicted
splats, sums the hierarchical and reconstruction losses and applies one
AdamW update. Metrics go to a json-lines log, run state to a json Store.
"""

from __future__ import annotations  # PEP563

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from ..model import ReconTransformer, save_checkpoint
from ..objectives import LossTerms, SupervisedView, SupervisionSet, psnr, total_loss
from ..splats import GaussianSet, render
from ..utils.exceptions import NonFiniteLoss
from ..utils.process import Stopwatch
from ..utils.store import RecordLog, Store
from .optim import adamw_step, build_optimizer, cosine_warmup_lr
from .scenes import SceneView, SyntheticScene

log = logging.getLogger(f'figurine.{__name__}')

LAST_CHECKPOINT = 'last.fgck'
BEST_CHECKPOINT = 'best.fgck'
METRICS_LOG = 'metrics.jsonl'
STATE_FILE = 'state.json'


@dataclass
class TrainResult:
    out_dir: Path
    steps: int
    losses: list[float] = field(default_factory=list)
    held_out_psnr: list[tuple[int, float]] = field(default_factory=list)
    best_psnr: float = -math.inf

    @property
    def initial_psnr(self) -> float:
        return self.held_out_psnr[0][1] if self.held_out_psnr else math.nan

    @property
    def final_psnr(self) -> float:
        return self.held_out_psnr[-1][1] if self.held_out_psnr else math.nan


def render_supervision(
    gaussians: GaussianSet, views: list[list[SceneView]], background
) -> SupervisionSet:
    levels = []
    for tier in views:
        level = []
        for view in tier:
            h, w = view.image.shape[:2]
            out = render(gaussians, view.camera, h, w, background)
            level.append(
                SupervisedView(
                    image=view.image.to(gaussians.dtype),
                    mask=view.mask.to(gaussians.dtype),
                    parts=view.parts,
                    rendered=out.color,
                    alpha=out.alpha,
                    is_input=view.is_input,
                )
            )
        levels.append(level)
    return SupervisionSet(levels)


def check_terms(terms: LossTerms, step: int):
    for name in ('hierarchical', 'reconstruction'):
        if not torch.isfinite(getattr(terms, name)):
            raise NonFiniteLoss(step, name)


@torch.no_grad()
def held_out_psnr(model: ReconTransformer, scenes: list[SyntheticScene], background) -> float:
    """Mean PSNR over every held-out view of every scene."""

    values = []
    for scene in scenes:
        gaussians = model(scene.bundle, scene.model_mesh).gaussians
        for view in scene.held_out:
            h, w = view.image.shape[:2]
            out = render(gaussians, view.camera, h, w, background)
            values.append(psnr(view.image, out.color))
    return sum(values) / len(values) if values else math.nan


def train(
    settings,
    scenes: list[SyntheticScene],
    out_dir: Path,
    steps: int | None = None,
    model: ReconTransformer | None = None,
) -> TrainResult:
    """Fit a reconstruction model to synthetic scenes.

    Parameters
    ----------
    settings
        validated Settings; train.seed seeds the model initialization
    scenes
        training scenes, visited round-robin, train.batch_size per step
    out_dir
        receives metrics.jsonl, state.json, last.fgck and best.fgck
    steps, optional
        number of optimizer steps, by default train.total_steps
    model, optional
        a model to continue from, by default a fresh one

    Raises
    ------
    NonFiniteLoss
        raised with the step and loss term that stopped being finite
    NonFiniteGradient
        raised before an update that would write inf or nan into the weights
    """

    cfg = settings.train
    steps = cfg.total_steps if steps is None else steps
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    background = settings.scene.background

    torch.manual_seed(cfg.seed)
    model = ReconTransformer(settings.model) if model is None else model
    model.train()
    optimizer = build_optimizer(model.named_parameters(), cfg, model.no_decay_names())

    metrics = RecordLog(out_dir / METRICS_LOG)
    state = Store(out_dir / STATE_FILE, load=False)
    result = TrainResult(out_dir, steps)

    log.info(f'Training for {steps} steps on {len(scenes)} scene(s)...')
    initial = held_out_psnr(model, scenes, background)
    result.held_out_psnr.append((0, initial))
    log.info(f'Held-out PSNR before training: {initial:.2f} dB')

    watch = Stopwatch()
    with watch.measure('training'):
        for step in range(steps):
            lr = cosine_warmup_lr(step, cfg)
            optimizer.zero_grad(set_to_none=True)
            first = step * cfg.batch_size
            batch = [scenes[(first + b) % len(scenes)] for b in range(cfg.batch_size)]

            record = {'step': step, 'lr': lr, 'loss': 0.0}
            record.update(loss_hierarchical=0.0, loss_reconstruction=0.0)
            for scene in batch:
                recon = model(scene.bundle, scene.model_mesh)
                sup = render_supervision(recon.gaussians, scene.supervision(), background)
                terms = total_loss(sup, settings.loss)
                check_terms(terms, step)
                (terms.total / len(batch)).backward()
                for key, value in terms.as_record().items():
                    record[key] += value / len(batch)

            record['grad_norm'] = adamw_step(optimizer, model.named_parameters(), cfg, lr)
            result.losses.append(record['loss'])

            done = step + 1
            if done % cfg.eval_every == 0 or done == steps:
                value = held_out_psnr(model, scenes, background)
                record['psnr_held_out'] = value
                result.held_out_psnr.append((done, value))
                if value > result.best_psnr:
                    result.best_psnr = value
                    save_checkpoint(model, out_dir / BEST_CHECKPOINT)
            metrics.append(record)

            if done % cfg.log_every == 0 or done == steps:
                log.info(f'step {done}/{steps}: loss {record["loss"]:.5f}, lr {lr:.2e}')
            if done % cfg.checkpoint_every == 0 or done == steps:
                save_checkpoint(model, out_dir / LAST_CHECKPOINT)
                state.update(
                    step=done,
                    best_psnr=result.best_psnr,
                    seed=cfg.seed,
                    scenes=[s.seed for s in scenes],
                )
                state.save()

    if steps == 0:
        save_checkpoint(model, out_dir / LAST_CHECKPOINT)
    log.info(f'Training done, best held-out PSNR {result.best_psnr:.2f} dB!')
    return result


def sweep_window_sizes(
    settings,
    scenes: list[SyntheticScene],
    out_dir: Path,
    k_values: list[int],
    steps: int | None = None,
) -> dict[int, TrainResult]:
    """Train once per window size into out_dir/k<K>, summarized in out_dir/sweep.json."""

    out_dir = Path(out_dir)
    summary = Store(out_dir / 'sweep.json', load=False)
    results = {}
    for k in k_values:
        log.info(f'Window size {k}...')
        run = replace(settings, model=replace(settings.model, k_win=k).validate())
        results[k] = train(run, scenes, out_dir / f'k{k}', steps)
        summary[str(k)] = {
            'initial_psnr': results[k].initial_psnr,
            'final_psnr': results[k].final_psnr,
            'best_psnr': results[k].best_psnr,
            'final_loss': results[k].losses[-1] if results[k].losses else None,
        }
        summary.save()
    return results
