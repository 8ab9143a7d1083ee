from pathlib import Path

import pytest

from figurine.config import Settings, load_settings
from figurine.utils.exceptions import ConfigKeyError, ConfigValueError, FileMissing
from figurine.utils.settings import read_properties


def test_read_properties(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('# comment\nmodel.dim = 32  # trailing\n\ntrain.seed=3\ntrain.seed = 4\n')
    assert read_properties(path) == {'model.dim': '32', 'train.seed': '4'}


def test_read_properties_rejects_bare_lines(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('model.dim 32\n')
    with pytest.raises(ConfigValueError):
        read_properties(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileMissing):
        load_settings(tmp_path / 'absent.cfg')


def test_defaults():
    settings = load_settings()
    assert settings == Settings()
    assert settings.train.peak_lr == 4e-4
    assert settings.train.warmup_steps == 2000
    assert settings.model.k_win == 2


def test_file_then_flags(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text(
        'model.dim = 32\nmodel.heads = 4\nmodel.human_prior = false\n'
        'scene.tiers = full, half, face\nscene.background = 0, 0.5, 1\n'
        'loss.part.16 = 3.5\nloss.level.1 = 0.5\n'
    )
    settings = load_settings(path, {'model.dim': '64'})
    assert settings.model.dim == 64
    assert settings.model.heads == 4
    assert settings.model.human_prior is False
    assert settings.scene.tiers == ('full', 'half', 'face')
    assert settings.scene.background == (0.0, 0.5, 1.0)
    assert settings.loss.part[16] == 3.5
    assert settings.loss.part[1] == 1.0
    assert settings.loss.level[1] == 0.5


def test_desk_config_loads():
    settings = load_settings(Path(__file__).parent.parent / 'configs' / 'desk.cfg')
    assert settings.model.latent_h == 16
    assert settings.model.image_size == (128, 128)


@pytest.mark.parametrize('key', ['model.nope', 'optimizer.lr', 'loss.part', 'model.dim.3'])
def test_unknown_keys(key):
    with pytest.raises(ConfigKeyError):
        load_settings(overrides={key: '1'})


@pytest.mark.parametrize(
    'key, value',
    [
        ('model.dim', 'wide'),
        ('model.heads', '7'),
        ('model.human_prior', 'maybe'),
        ('train.warmup_steps', '30000'),
        ('scene.tiers', 'full, torso'),
        ('loss.input_view_weight', '0.5'),
    ],
)
def test_invalid_values(key, value):
    with pytest.raises(ConfigValueError):
        load_settings(overrides={key: value})


def test_exit_code_of_config_errors():
    with pytest.raises(ConfigKeyError) as info:
        load_settings(overrides={'model.nope': '1'})
    assert info.value.exit_code == 3
