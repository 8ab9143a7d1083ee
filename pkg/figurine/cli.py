import functools
import json
import logging
from pathlib import Path

import click
import numpy as np
import torch
from PIL import Image

from .body_prior import (
    BodyMesh,
    BodyModel,
    bounding_sphere,
    build_capsule_model,
    load_body_model,
    pose_body,
    save_body_model,
    segment_gaussians,
)
from .cameras import ViewPose, read_camera_manifest, write_camera_manifest
from .config import Settings, load_settings
from .geometry import make_orbit_cameras
from .gradcheck import run_gradcheck
from .latents import encode_views, load_view_bundle, view_pose_schedule
from .model import ReconTransformer, load_checkpoint
from .splats import export_splats, import_splats, render
from .training import evaluate, generate_scene, part_palette, sweep_window_sizes, train
from .utils.exceptions import BundleMismatch, ConfigValueError, LoggedException, SchemaError
from .utils.process import Stopwatch, configure_threads
from .utils.store import Store

log = logging.getLogger(f'figurine.{__name__}')

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
_handler: logging.Handler | None = None


def setup_logging(verbosity: int):
    global _handler
    root = logging.getLogger('figurine')
    if _handler is not None:
        root.removeHandler(_handler)
    _handler = logging.StreamHandler()
    _handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(_handler)
    root.setLevel([logging.WARNING, logging.INFO, logging.DEBUG][min(verbosity, 2)])


def reported(func):
    """Log domain errors and exit with their code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except LoggedException as e:
            e.log_this()
            click.get_current_context().exit(e.exit_code)

    return wrapper


def parse_overrides(pairs: tuple[str, ...]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition('=')
        if not sep:
            raise ConfigValueError(pair, 'overrides look like \'section.key=value\'')
        overrides[key.strip()] = value.strip()
    return overrides


def settings_from(config: Path | None, overrides: tuple[str, ...], **extra: str) -> Settings:
    entries = parse_overrides(overrides)
    entries.update({k: v for k, v in extra.items() if v is not None})
    return load_settings(config, entries)


def load_body(path: Path | None) -> BodyModel:
    return build_capsule_model() if path is None else load_body_model(path)


def read_body_params(path: Path) -> tuple[torch.Tensor, torch.Tensor]:
    """{"beta": 10 numbers, "theta": 24×3 or 72 numbers} from a json file."""

    try:
        record = json.loads(Path(path).read_text())
        beta = torch.tensor(record['beta'], dtype=torch.float64).reshape(10)
        theta = torch.tensor(record['theta'], dtype=torch.float64).reshape(24, 3)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, RuntimeError) as e:
        raise SchemaError(path, f'body parameters need beta (10) and theta (24x3): {e}')
    return beta, theta


def posed_mesh(body: BodyModel, params: Path) -> BodyMesh:
    """The posed body in the normalized scene frame."""
    posed = pose_body(body, *read_body_params(params))
    center, radius = bounding_sphere(posed.vertices)
    return posed.normalized(center, radius)


def read_image(path: Path) -> torch.Tensor:
    with Image.open(path) as img:
        pixels = np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
    return torch.from_numpy(pixels)


def write_image(color: torch.Tensor, path: Path):
    pixels = (color.detach().clamp(0.0, 1.0) * 255.0).round().to(torch.uint8).numpy()
    Image.fromarray(pixels).save(path)


def make_scenes(settings: Settings, body: BodyModel, count: int | None = None):
    count = settings.train.scenes if count is None else count
    log.info(f'Generating {count} synthetic scene(s)...')
    return [
        generate_scene(settings.train.seed + k, body, settings.scene, settings.model)
        for k in range(count)
    ]


INPUT_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)
OUTPUT_FILE = click.Path(dir_okay=False, path_type=Path)
OUTPUT_DIR = click.Path(file_okay=False, path_type=Path)

config_option = click.option('--config', type=INPUT_FILE, help='key = value config file')
set_option = click.option(
    '--set',
    'overrides',
    multiple=True,
    metavar='KEY=VALUE',
    help='override a config key, wins over --config',
)
body_model_option = click.option(
    '--body-model',
    type=INPUT_FILE,
    help='body model container, by default the built-in capsule body',
)


@click.group()
@click.option('-v', '--verbose', count=True, help='-v for progress, -vv for debug output')
@click.option('--deterministic', is_flag=True, help='one thread, deterministic kernels')
@reported
def cli(verbose: int, deterministic: bool):
    """Single-image human reconstruction to 3D Gaussian splats.

    Exit codes: 0 success, 2 input or schema error, 3 config mismatch,
    4 numeric failure.
    """
    setup_logging(verbose)
    configure_threads(deterministic)


@cli.command()
@click.option(
    '--image',
    'images',
    multiple=True,
    type=INPUT_FILE,
    help='one image per view, the input view first',
)
@click.option('--latents', type=INPUT_FILE, help='latent bundle file')
@click.option('--body-params', type=INPUT_FILE, help='json with beta and theta')
@body_model_option
@click.option('--checkpoint', required=True, type=INPUT_FILE)
@click.option('--out-splat', required=True, type=OUTPUT_FILE)
@click.option('--no-human-prior', is_flag=True, help='run without body tokens')
@config_option
@set_option
@reported
def reconstruct(
    images,
    latents,
    body_params,
    body_model,
    checkpoint,
    out_splat,
    no_human_prior,
    config,
    overrides,
):
    """Predict splats from views and a posed body."""

    if bool(images) == bool(latents):
        raise click.UsageError('give either --image (one per view) or --latents')
    prior = {'model.human_prior': 'false' if no_human_prior else None}
    settings = settings_from(config, overrides, **prior)
    cfg = settings.model

    if latents:
        bundle = load_view_bundle(latents)
        source = latents
    else:
        if len(images) != cfg.n_views:
            raise BundleMismatch('--image', f'{len(images)} images, model expects {cfg.n_views}')
        pixels = [read_image(p) for p in images]
        height, width = pixels[0].shape[:2]
        scene = settings.scene
        cams = make_orbit_cameras(
            cfg.n_views, scene.elevation, scene.orbit_radius, width=width, height=height
        )
        bundle = encode_views(pixels, cams, view_pose_schedule(cfg.n_views, scene.elevation))
        source = '--image'

    model = load_checkpoint(checkpoint, cfg)
    model.check_bundle(bundle, source)
    model.eval()
    mesh = posed_mesh(load_body(body_model), body_params) if body_params else None

    watch = Stopwatch()
    with watch.measure('reconstruction'), torch.no_grad():
        gaussians = model(bundle, mesh).gaussians
    export_splats(gaussians, out_splat)
    click.echo(f'{gaussians.count} splats in {watch.elapsed:.3f}s -> {out_splat}')


@cli.command('render')
@click.option('--splat', required=True, type=INPUT_FILE)
@click.option('--camera-manifest', required=True, type=INPUT_FILE)
@click.option('--out-dir', required=True, type=OUTPUT_DIR)
@click.option('--raw', is_flag=True, help='also write float32 h×w×3 .f32 sidecars')
@click.option('--parts', is_flag=True, help='color splats by body part, needs --body-params')
@click.option('--body-params', type=INPUT_FILE)
@body_model_option
@click.option('--background', default='0,0,0', show_default=True, help='r,g,b in [0, 1]')
@reported
def render_cmd(splat, camera_manifest, out_dir, raw, parts, body_params, body_model, background):
    """Render a splat file into one PNG per manifest camera."""

    gaussians = import_splats(splat)
    cameras = read_camera_manifest(camera_manifest)
    try:
        bg = tuple(float(v) for v in background.split(','))
    except ValueError:
        bg = ()
    if len(bg) != 3:
        raise click.BadParameter('needs three comma-separated numbers', param_hint='--background')

    if parts:
        if body_params is None:
            raise click.UsageError('--parts needs --body-params')
        labels = segment_gaussians(gaussians, posed_mesh(load_body(body_model), body_params))
        gaussians = gaussians.with_colors(part_palette()[labels])

    out_dir.mkdir(parents=True, exist_ok=True)
    for k, (cam, _) in enumerate(cameras):
        out = render(gaussians, cam, cam.height, cam.width, bg)
        write_image(out.color, out_dir / f'view_{k:03d}.png')
        if raw:
            out.color.detach().to(torch.float32).numpy().tofile(out_dir / f'view_{k:03d}.f32')
    click.echo(f'{len(cameras)} view(s) rendered to {out_dir}')


@cli.command('train')
@config_option
@set_option
@click.option('--steps', type=int, help='optimizer steps, by default train.total_steps')
@click.option('--seed', type=int, help='overrides train.seed')
@click.option('--out', 'out_dir', default='runs/train', show_default=True, type=OUTPUT_DIR)
@click.option('--no-human-prior', is_flag=True, help='ablation without body tokens')
@click.option('--sweep-k-win', help='comma-separated window sizes, one run each')
@body_model_option
@reported
def train_cmd(config, overrides, steps, seed, out_dir, no_human_prior, sweep_k_win, body_model):
    """Train on synthetic scenes, writing metrics.jsonl and checkpoints."""

    settings = settings_from(
        config,
        overrides,
        **{
            'train.seed': None if seed is None else str(seed),
            'model.human_prior': 'false' if no_human_prior else None,
        },
    )
    scenes = make_scenes(settings, load_body(body_model))
    if sweep_k_win:
        try:
            k_values = [int(k) for k in sweep_k_win.split(',') if k.strip()]
        except ValueError:
            raise click.BadParameter('needs comma-separated integers', param_hint='--sweep-k-win')
        results = sweep_window_sizes(settings, scenes, out_dir, k_values, steps)
        for k, result in results.items():
            click.echo(
                f'k_win={k}: held-out PSNR '
                f'{result.initial_psnr:.2f} -> {result.final_psnr:.2f} dB'
            )
        return
    result = train(settings, scenes, out_dir, steps)
    click.echo(
        f'{result.steps} steps, held-out PSNR '
        f'{result.initial_psnr:.2f} -> {result.final_psnr:.2f} dB, '
        f'checkpoints in {out_dir}'
    )


@cli.command('eval')
@config_option
@set_option
@click.option('--checkpoint', type=INPUT_FILE, help='by default a freshly initialized model')
@click.option('--out', 'report', default='eval.json', show_default=True, type=OUTPUT_FILE)
@click.option('--seed', type=int, help='overrides train.seed, the first scene seed')
@click.option(
    '--body-noise', type=float, help='overrides scene.body_noise, σ of the simulated body estimate'
)
@body_model_option
@reported
def eval_cmd(config, overrides, checkpoint, report, seed, body_noise, body_model):
    """Score held-out views of synthetic scenes, one report row per view."""

    extra = {
        'train.seed': None if seed is None else str(seed),
        'scene.body_noise': None if body_noise is None else str(body_noise),
    }
    settings = settings_from(config, overrides, **extra)
    if checkpoint is None:
        torch.manual_seed(settings.train.seed)
        model = ReconTransformer(settings.model)
    else:
        model = load_checkpoint(checkpoint, settings.model)
    scenes = make_scenes(settings, load_body(body_model))
    rows = evaluate(model, scenes, settings.scene.background, report)
    mean = sum(r['psnr'] for r in rows) / len(rows) if rows else float('nan')
    click.echo(f'{len(rows)} view(s), mean PSNR {mean:.2f} dB -> {report}')


@cli.command()
@click.option('--seed', default=0, show_default=True)
@click.option('--instances', default=3, show_default=True, help='random renderer instances')
@click.option('--max-entries', type=int, help='entries sampled per model tensor, by default all')
@click.option('--report', type=OUTPUT_FILE, help='json report')
@reported
def gradcheck(seed, instances, max_entries, report):
    """Compare every analytic gradient with central finite differences."""

    result = run_gradcheck(seed, instances, max_entries)
    if report:
        store = Store(report, load=False)
        store['checks'] = [r.as_record() for r in result.results]
        store['passed'] = result.passed
        store.save()
    click.echo(f'{len(result.results)} checks, {len(result.failures)} failed')
    result.raise_for_failures()


@cli.command()
@click.option('--count', default=36, show_default=True)
@click.option('--elevation', default=0.0, show_default=True, help='degrees')
@click.option('--radius', default=2.4, show_default=True)
@click.option('--size', default=256, show_default=True, help='square image size')
@click.option('--out', required=True, type=OUTPUT_FILE)
@reported
def cameras(count, elevation, radius, size, out):
    """Write an orbit camera manifest."""
    cams = make_orbit_cameras(count, elevation, radius, width=size, height=size)
    poses = [ViewPose(elevation, 360.0 * k / count) for k in range(count)]
    write_camera_manifest(out, cams, poses)
    click.echo(f'{count} camera(s) -> {out}')


@cli.command('toy-body')
@click.argument('out', type=OUTPUT_FILE)
@click.option('--segments', default=8, show_default=True, help='vertices per ring')
@click.option('--seed', default=1234, show_default=True, help='shape direction seed')
@reported
def toy_body(out, segments, seed):
    """Write the procedural 24-part capsule body."""
    model = build_capsule_model(segments, seed)
    save_body_model(model, out)
    click.echo(f'{model.num_vertices} vertices, {model.faces.shape[0]} faces -> {out}')


if __name__ == '__main__':
    cli()
