import math

import pytest
import torch

from figurine.geometry import PartMaskSet
from figurine.gradcheck import random_supervision
from figurine.objectives import (
    LossWeights,
    SupervisedView,
    SupervisionSet,
    default_part_weights,
    hierarchical_loss,
    masked_mse,
    perceptual_proxy,
    psnr,
    reconstruction_loss,
    rendered_gradients,
    ssim,
    total_loss,
)
from figurine.utils.classes import BodyPart
from figurine.utils.exceptions import ConfigValueError, DimensionMismatch

SIZE = 8


def view(image, rendered=None, labels=None, alpha=None, is_input=False):
    labels = torch.zeros(SIZE, SIZE, dtype=torch.long) if labels is None else labels
    mask = (labels > 0).double()
    return SupervisedView(
        image=image,
        mask=mask,
        parts=PartMaskSet(labels, torch.zeros(SIZE, SIZE, dtype=torch.float64)),
        rendered=image.clone() if rendered is None else rendered,
        alpha=mask.clone() if alpha is None else alpha,
        is_input=is_input,
    )


@pytest.fixture
def image(gen):
    return torch.rand(SIZE, SIZE, 3, generator=gen, dtype=torch.float64)


@pytest.fixture
def half_labels():
    labels = torch.zeros(SIZE, SIZE, dtype=torch.long)
    labels[:, : SIZE // 2] = int(BodyPart.HEAD)
    return labels


def test_masked_mse_with_empty_mask(image):
    assert masked_mse(image, image + 1.0, torch.zeros(SIZE, SIZE)).item() == 0.0


def test_masked_mse_counts_only_masked_pixels(image, half_labels):
    rendered = image.clone()
    rendered[:, : SIZE // 2] += 0.1
    rendered[:, SIZE // 2 :] += 5.0
    assert masked_mse(image, rendered, half_labels > 0).item() == pytest.approx(0.01)


def test_perfect_reconstruction_costs_nothing(image, half_labels):
    first = view(image, labels=half_labels, is_input=True)
    sup = SupervisionSet([[first], [view(image, labels=half_labels)]])
    terms = total_loss(sup, LossWeights(input_view_weight=3.0))
    assert terms.total.item() == pytest.approx(0.0, abs=1e-15)


def test_mask_term_against_empty_alpha(image, half_labels):
    empty = torch.zeros(SIZE, SIZE, dtype=torch.float64)
    sup = SupervisionSet([[view(image, labels=half_labels, alpha=empty)]])
    loss = reconstruction_loss(sup, LossWeights(perceptual=0.0))
    assert loss.item() == pytest.approx(0.5)


def test_input_view_is_reweighted(image):
    shifted = image + 0.2
    plain = reconstruction_loss(SupervisionSet([[view(image, shifted)]]), LossWeights())
    weighted = reconstruction_loss(
        SupervisionSet([[view(image, shifted, is_input=True)]]), LossWeights(input_view_weight=2.5)
    )
    assert weighted.item() == pytest.approx(2.5 * plain.item())


def test_proxy_sees_only_the_coarse_offset(image):
    # a constant shift leaves every gradient map unchanged
    assert perceptual_proxy(image, image + 0.1).item() == pytest.approx(0.01)
    assert perceptual_proxy(image, image).item() == 0.0


def test_hierarchical_loss_weights_parts(image, half_labels):
    rendered = image.clone()
    rendered[:, : SIZE // 2] += 0.1
    sup = SupervisionSet([[view(image, rendered, labels=half_labels)]])
    weights = LossWeights(perceptual=0.0)
    # only the head is present: λ_head · mse / (tiers · parts)
    expected = 2.0 * 0.01 / (1 * 24)
    assert hierarchical_loss(sup, weights).item() == pytest.approx(expected)

    part = {**weights.part, int(BodyPart.HEAD): 4.0}
    heavier = LossWeights(level={0: 3.0}, part=part, perceptual=0.0)
    assert hierarchical_loss(sup, heavier).item() == pytest.approx(3.0 * 4.0 * 0.01 / 24)


def test_hierarchical_loss_ignores_absent_parts(image):
    sup = SupervisionSet([[view(image, image + 0.3)]])
    assert hierarchical_loss(sup, LossWeights()).item() == 0.0


def test_empty_supervision():
    sup = SupervisionSet([])
    assert total_loss(sup, LossWeights()).total.item() == 0.0


def test_mismatched_render_is_rejected(image):
    bad = view(image, rendered=torch.zeros(SIZE, SIZE + 1, 3, dtype=torch.float64))
    with pytest.raises(DimensionMismatch):
        reconstruction_loss(SupervisionSet([[bad]]), LossWeights())


def test_default_part_weights():
    weights = default_part_weights()
    assert len(weights) == 24
    assert weights[int(BodyPart.HEAD)] == 2.0
    assert weights[int(BodyPart.LEFT_HAND)] == 2.0
    assert weights[int(BodyPart.PELVIS)] == 1.0


@pytest.mark.parametrize(
    'weights',
    [
        LossWeights(input_view_weight=0.5),
        LossWeights(perceptual=-1.0),
        LossWeights(level={0: -1.0}),
    ],
)
def test_weight_validation(weights):
    with pytest.raises(ConfigValueError):
        weights.validate()


def test_rendered_gradients_cover_every_view(gen):
    sup = random_supervision(gen, size=6, tiers=2, views=3)
    grads = rendered_gradients(total_loss(sup, LossWeights()).total, sup)
    assert len(grads) == 6
    for v, (d_image, d_alpha) in zip(sup.views(), grads):
        assert d_image.shape == v.rendered.shape
        assert d_alpha.shape == v.alpha.shape
        assert d_image.abs().sum() > 0


def test_psnr(image):
    assert psnr(image, image) == 100.0
    assert psnr(image, image + 0.1) == pytest.approx(20.0)
    assert psnr(torch.zeros(4, 4, 3), torch.ones(4, 4, 3)) == pytest.approx(0.0)


def test_ssim(gen):
    image = torch.rand(24, 24, 3, generator=gen, dtype=torch.float64)
    assert ssim(image, image) == pytest.approx(1.0)
    noisy = (image + 0.3 * torch.randn(24, 24, 3, generator=gen, dtype=torch.float64)).clamp(0, 1)
    assert ssim(image, noisy) < 0.9
    small = torch.rand(6, 6, 3, generator=gen, dtype=torch.float64)
    assert ssim(small, small) == pytest.approx(1.0)
    assert not math.isnan(ssim(small, 1 - small))
