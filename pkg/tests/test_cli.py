import dataclasses
import json

import numpy as np
import pytest
import torch
from click.testing import CliRunner
from PIL import Image

from figurine.cameras import read_camera_manifest
from figurine.cli import cli
from figurine.config import load_settings
from figurine.gradcheck import TINY_MODEL, random_splats, tiny_instance
from figurine.latents import save_view_bundle
from figurine.model import ReconTransformer, save_checkpoint
from figurine.splats import export_splats, import_splats

TINY_CONFIG = """\
model.dim = 16
model.heads = 2
model.n_intra = 1
model.n_inter = 1
model.n_human_intra = 1
model.latent_h = 4
model.latent_w = 4
model.n_views = 2
model.ffn_ratio = 2
train.warmup_steps = 1
train.total_steps = 2
train.eval_every = 1
train.log_every = 1
scene.render_size = 16
scene.views_per_tier = 2
scene.held_out = 1
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config(tmp_path):
    path = tmp_path / 'tiny.cfg'
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture
def checkpoint(config, tmp_path):
    path = tmp_path / 'tiny.fgck'
    save_checkpoint(ReconTransformer(load_settings(config).model), path)
    return path


@pytest.fixture
def body_params(tmp_path):
    path = tmp_path / 'body.json'
    path.write_text(json.dumps({'beta': [0.0] * 10, 'theta': [0.0] * 72}))
    return path


def write_latents(path, gen, n_views):
    bundle, _ = tiny_instance(gen, dataclasses.replace(TINY_MODEL, n_views=n_views))
    save_view_bundle(bundle, path)
    return path


def test_toy_body(runner, tmp_path):
    out = tmp_path / 'body.fgbm'
    result = runner.invoke(cli, ['toy-body', str(out)])
    assert result.exit_code == 0, result.output
    assert '602 vertices, 976 faces' in result.output
    assert out.exists()


def test_cameras(runner, tmp_path):
    out = tmp_path / 'orbit.cams'
    result = runner.invoke(cli, ['cameras', '--count', '4', '--size', '16', '--out', str(out)])
    assert result.exit_code == 0, result.output
    cams = read_camera_manifest(out)
    assert [pose.azimuth for _, pose in cams] == [0.0, 90.0, 180.0, 270.0]
    assert cams[0][0].width == 16


def test_thread_count_must_be_a_number(runner, tmp_path, caplog):
    args = ['cameras', '--count', '2', '--out', str(tmp_path / 'x.cams')]
    result = runner.invoke(cli, args, env={'FIGURINE_THREADS': 'many'})
    assert result.exit_code == 3
    assert 'FIGURINE_THREADS' in caplog.text
    assert not (tmp_path / 'x.cams').exists()


def test_cameras_rejects_an_empty_orbit(runner, tmp_path):
    result = runner.invoke(cli, ['cameras', '--count', '0', '--out', str(tmp_path / 'x.cams')])
    assert result.exit_code == 3


def test_reconstruct_from_latents(runner, config, checkpoint, body_params, gen, tmp_path):
    latents = write_latents(tmp_path / 'views.fglt', gen, 2)
    out = tmp_path / 'person.ply'
    args = ['reconstruct', '--latents', str(latents), '--checkpoint', str(checkpoint)]
    args += ['--out-splat', str(out), '--config', str(config), '--body-params', str(body_params)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert '32 splats' in result.output
    assert import_splats(out).count == 32


def test_reconstruct_view_count_mismatch(runner, config, checkpoint, gen, tmp_path):
    latents = write_latents(tmp_path / 'views.fglt', gen, 3)
    args = ['reconstruct', '--latents', str(latents), '--checkpoint', str(checkpoint)]
    args += ['--out-splat', str(tmp_path / 'x.ply'), '--config', str(config)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 3
    assert not (tmp_path / 'x.ply').exists()


def test_reconstruct_checkpoint_mismatch(runner, config, checkpoint, gen, tmp_path):
    latents = write_latents(tmp_path / 'views.fglt', gen, 2)
    args = ['reconstruct', '--latents', str(latents), '--checkpoint', str(checkpoint)]
    args += ['--out-splat', str(tmp_path / 'x.ply'), '--config', str(config)]
    args += ['--set', 'model.k_win=3']
    assert runner.invoke(cli, args).exit_code == 3


def test_reconstruct_from_images(runner, config, checkpoint, tmp_path):
    images = []
    for k in range(2):
        path = tmp_path / f'view{k}.png'
        Image.fromarray(np.full((32, 32, 3), 40 * k, dtype=np.uint8)).save(path)
        images += ['--image', str(path)]
    base = ['reconstruct', '--checkpoint', str(checkpoint), '--config', str(config)]
    out = tmp_path / 'person.ply'
    result = runner.invoke(cli, base + images + ['--out-splat', str(out), '--no-human-prior'])
    assert result.exit_code == 0, result.output
    assert out.exists()

    result = runner.invoke(cli, base + images[:2] + ['--out-splat', str(out)])
    assert result.exit_code == 3


def test_reconstruct_needs_exactly_one_source(runner, checkpoint, tmp_path):
    args = ['reconstruct', '--checkpoint', str(checkpoint), '--out-splat', str(tmp_path / 'x.ply')]
    assert runner.invoke(cli, args).exit_code == 2


def test_reconstruct_rejects_a_foreign_file(runner, config, checkpoint, tmp_path):
    bogus = tmp_path / 'views.fglt'
    bogus.write_bytes(b'NOPE\x01\x00\x00\x00')
    args = ['reconstruct', '--latents', str(bogus), '--checkpoint', str(checkpoint)]
    args += ['--out-splat', str(tmp_path / 'x.ply'), '--config', str(config)]
    assert runner.invoke(cli, args).exit_code == 2


@pytest.fixture
def scene_files(runner, tmp_path):
    splat = tmp_path / 'splats.ply'
    export_splats(random_splats(torch.Generator().manual_seed(0), 12), splat)
    manifest = tmp_path / 'orbit.cams'
    args = ['cameras', '--count', '3', '--size', '16', '--radius', '2.5', '--out', str(manifest)]
    assert runner.invoke(cli, args).exit_code == 0
    return splat, manifest


def test_render_writes_one_image_per_camera(runner, scene_files, tmp_path):
    splat, manifest = scene_files
    out_dir = tmp_path / 'frames'
    args = ['render', '--splat', str(splat), '--camera-manifest', str(manifest)]
    args += ['--out-dir', str(out_dir), '--raw', '--background', '1,1,1']
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    pngs = sorted(out_dir.glob('view_*.png'))
    assert [p.name for p in pngs] == ['view_000.png', 'view_001.png', 'view_002.png']

    for png in pngs:
        raw = np.fromfile(png.with_suffix('.f32'), dtype=np.float32).reshape(16, 16, 3)
        pixels = np.asarray(Image.open(png), dtype=np.int32)
        expected = np.round(np.clip(raw, 0.0, 1.0) * 255.0).astype(np.int32)
        assert np.abs(pixels - expected).max() <= 1


def test_render_by_part(runner, scene_files, body_params, tmp_path):
    splat, manifest = scene_files
    args = ['render', '--splat', str(splat), '--camera-manifest', str(manifest)]
    args += ['--out-dir', str(tmp_path / 'parts'), '--parts']
    assert runner.invoke(cli, args).exit_code == 2
    result = runner.invoke(cli, args + ['--body-params', str(body_params)])
    assert result.exit_code == 0, result.output
    assert len(list((tmp_path / 'parts').glob('*.png'))) == 3


def test_render_bad_background(runner, scene_files, tmp_path):
    splat, manifest = scene_files
    args = ['render', '--splat', str(splat), '--camera-manifest', str(manifest)]
    args += ['--out-dir', str(tmp_path / 'frames'), '--background', 'white']
    assert runner.invoke(cli, args).exit_code == 2


def test_render_rejects_a_manifest_with_a_bad_rotation(runner, scene_files, tmp_path):
    splat, manifest = scene_files
    header, first, *rest = manifest.read_text().splitlines()
    record = json.loads(first)
    record['R'] = [2.0 * v for v in record['R']]
    broken = tmp_path / 'broken.cams'
    broken.write_text('\n'.join([header, json.dumps(record), *rest]) + '\n')
    args = ['render', '--splat', str(splat), '--camera-manifest', str(broken)]
    args += ['--out-dir', str(tmp_path / 'frames')]
    assert runner.invoke(cli, args).exit_code == 2


def test_bad_body_params(runner, scene_files, tmp_path):
    splat, manifest = scene_files
    params = tmp_path / 'body.json'
    params.write_text(json.dumps({'beta': [0.0] * 3}))
    args = ['render', '--splat', str(splat), '--camera-manifest', str(manifest)]
    args += ['--out-dir', str(tmp_path / 'frames'), '--parts', '--body-params', str(params)]
    assert runner.invoke(cli, args).exit_code == 2


def test_train_and_eval(runner, config, tmp_path):
    run = tmp_path / 'run'
    args = ['train', '--config', str(config), '--steps', '2', '--seed', '3', '--out', str(run)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert '2 steps' in result.output
    assert (run / 'metrics.jsonl').read_text().count('\n') == 2

    report = tmp_path / 'eval.json'
    args = ['eval', '--config', str(config), '--checkpoint', str(run / 'last.fgck')]
    args += ['--out', str(report)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert len(json.loads(report.read_text())['rows']) == 1


def test_eval_without_checkpoint(runner, config, tmp_path):
    report = tmp_path / 'eval.json'
    args = ['eval', '--config', str(config), '--out', str(report), '--seed', '4']
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert json.loads(report.read_text())['rows'][0]['scene'] == 4


def test_eval_with_a_noisy_body_estimate(runner, config, tmp_path):
    report = tmp_path / 'eval.json'
    args = ['eval', '--config', str(config), '--out', str(report), '--body-noise', '0.1']
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    rows = json.loads(report.read_text())['rows']
    assert [row['body_noise'] for row in rows] == [0.1]
    assert runner.invoke(cli, args[:-2] + ['--body-noise=-0.1']).exit_code == 3


def test_unknown_override(runner, config, tmp_path):
    result = runner.invoke(cli, ['train', '--config', str(config), '--set', 'model.width=3'])
    assert result.exit_code == 3
    result = runner.invoke(cli, ['train', '--config', str(config), '--set', 'model.dim'])
    assert result.exit_code == 3


def test_gradcheck_command(runner, tmp_path):
    report = tmp_path / 'gradcheck.json'
    args = ['gradcheck', '--instances', '1', '--max-entries', '3', '--report', str(report)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert '0 failed' in result.output
    assert json.loads(report.read_text())['passed'] is True
