import pytest
import torch
from torch import nn

from figurine.training.optim import TrainConfig, adamw_step, build_optimizer, cosine_warmup_lr
from figurine.utils.exceptions import ConfigValueError, NonFiniteGradient

SCHEDULE = TrainConfig(peak_lr=1e-3, warmup_steps=10, total_steps=110)


@pytest.mark.parametrize(
    'step, lr',
    [(0, 0.0), (5, 5e-4), (10, 1e-3), (60, 5e-4), (110, 0.0), (500, 0.0)],
)
def test_schedule_pins(step, lr):
    assert cosine_warmup_lr(step, SCHEDULE) == pytest.approx(lr, abs=1e-15)


def test_schedule_is_continuous_and_peaks_after_warmup():
    lrs = [cosine_warmup_lr(s, SCHEDULE) for s in range(111)]
    assert max(lrs) == lrs[10]
    assert all(abs(a - b) <= 1e-4 + 1e-12 for a, b in zip(lrs, lrs[1:]))
    assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))


def test_schedule_without_warmup():
    cfg = TrainConfig(peak_lr=2e-3, warmup_steps=0, total_steps=100)
    assert cosine_warmup_lr(0, cfg) == pytest.approx(2e-3)


def test_train_config_validation():
    with pytest.raises(ConfigValueError):
        TrainConfig(warmup_steps=50, total_steps=10).validate()
    with pytest.raises(ConfigValueError):
        TrainConfig(peak_lr=0.0).validate()


@pytest.mark.parametrize('name', ['log_every', 'eval_every', 'checkpoint_every'])
def test_loop_intervals_must_be_positive(name):
    with pytest.raises(ConfigValueError, match=f'train.{name}') as info:
        TrainConfig(**{name: 0}).validate()
    assert info.value.exit_code == 3
    TrainConfig(**{name: 1}).validate()


def single_parameter(value, grad):
    param = nn.Parameter(torch.tensor(value, dtype=torch.float64))
    param.grad = torch.tensor(grad, dtype=torch.float64)
    return param


def test_first_step_closed_form():
    cfg = TrainConfig(weight_decay=0.1, grad_clip=0.0, eps=1e-8)
    p0, g = [0.5, -1.0, 2.0], [0.3, -0.02, 1.5]
    param = single_parameter(p0, g)
    named = [('w', param)]
    lr = 1e-2
    norm = adamw_step(build_optimizer(named, cfg), named, cfg, lr)

    p0_t, g_t = torch.tensor(p0, dtype=torch.float64), torch.tensor(g, dtype=torch.float64)
    expected = p0_t * (1 - lr * cfg.weight_decay) - lr * g_t / (g_t.abs() + cfg.eps)
    assert torch.allclose(param.detach(), expected, atol=1e-10, rtol=0)
    assert norm == pytest.approx(float(g_t.norm()))


def test_norm_parameters_are_not_decayed():
    cfg = TrainConfig(weight_decay=0.5, grad_clip=0.0)
    decayed = single_parameter([1.0], [0.0])
    plain = single_parameter([1.0], [0.0])
    named = [('fc.weight', decayed), ('norm.weight', plain)]
    optimizer = build_optimizer(named, cfg, no_decay={'norm.weight'})
    adamw_step(optimizer, named, cfg, 0.1)
    assert decayed.item() == pytest.approx(1.0 - 0.1 * 0.5)
    assert plain.item() == 1.0


def test_clipping_reports_the_raw_norm():
    cfg = TrainConfig(grad_clip=1.0)
    param = single_parameter([0.0, 0.0], [3.0, 4.0])
    named = [('w', param)]
    norm = adamw_step(build_optimizer(named, cfg), named, cfg, 1e-3)
    assert norm == pytest.approx(5.0)
    assert torch.allclose(param.grad, torch.tensor([0.6, 0.8], dtype=torch.float64))


def test_non_finite_gradient_leaves_parameters_alone():
    cfg = TrainConfig()
    good = single_parameter([1.0], [0.1])
    bad = single_parameter([2.0], [float('nan')])
    named = [('good', good), ('bad', bad)]
    with pytest.raises(NonFiniteGradient) as info:
        adamw_step(build_optimizer(named, cfg), named, cfg, 1e-3)
    assert info.value.names == ['bad']
    assert info.value.exit_code == 4
    assert good.item() == 1.0
    assert bad.item() == 2.0
