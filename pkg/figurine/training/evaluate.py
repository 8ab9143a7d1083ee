import logging
import math
from pathlib import Path

import torch

from ..model import ReconTransformer
from ..objectives import perceptual_proxy, psnr, ssim
from ..splats import render
from ..utils.store import Store
from .scenes import SyntheticScene

log = logging.getLogger(f'figurine.{__name__}')


def metric_row(truth: torch.Tensor, prediction: torch.Tensor) -> dict[str, float]:
    truth = truth.detach().to(torch.float64)
    prediction = prediction.detach().to(torch.float64)
    return {
        'psnr': psnr(truth, prediction),
        'ssim': ssim(truth, prediction),
        'proxy': float(perceptual_proxy(truth, prediction)),
    }


@torch.no_grad()
def evaluate(
    model: ReconTransformer,
    scenes: list[SyntheticScene],
    background=(1.0, 1.0, 1.0),
    report_path: Path | None = None,
) -> list[dict]:
    """Render every held-out view and score it against the ground truth.

    Returns
    -------
        one row per (scene, held-out view) with scene seed, view index,
        azimuth, the body-estimate noise level, psnr, ssim and proxy; also
        written to 'report_path' if given
    """

    model.eval()
    rows = []
    for scene in scenes:
        gaussians = model(scene.bundle, scene.model_mesh).gaussians
        for index, view in enumerate(scene.held_out):
            h, w = view.image.shape[:2]
            out = render(gaussians, view.camera, h, w, background)
            row = {'scene': scene.seed, 'view': index, 'azimuth': view.pose.azimuth}
            row['body_noise'] = scene.body_noise
            row.update(metric_row(view.image, out.color))
            rows.append(row)

    if rows:
        log.info(
            f'{len(rows)} views: PSNR {sum(r["psnr"] for r in rows) / len(rows):.2f} dB, '
            f'SSIM {sum(r["ssim"] for r in rows) / len(rows):.4f}'
        )
    if report_path is not None:
        report = Store(report_path, load=False)
        report['rows'] = rows
        report['mean'] = {
            key: (sum(r[key] for r in rows) / len(rows)) if rows else math.nan
            for key in ('psnr', 'ssim', 'proxy')
        }
        report.save()
        log.info(f'Report written to {report.file}')
    return rows
