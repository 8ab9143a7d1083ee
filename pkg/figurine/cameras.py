"""Camera manifest files: a versioned header line, then one JSON record per camera."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .geometry import CameraView
from .utils.exceptions import CameraConfigError, FileMissing, SchemaError, SchemaVersionMismatch

log = logging.getLogger(f'figurine.{__name__}')

HEADER = '# figurine-cameras v1'
FIELDS = ('K', 'R', 't', 'width', 'height', 'elevation_deg', 'azimuth_deg')


@dataclass(frozen=True)
class ViewPose:
    """Elevation and azimuth in degrees, relative to the input view."""

    elevation: float
    azimuth: float


def camera_record(cam: CameraView, pose: ViewPose) -> dict:
    return {
        'K': cam.K.flatten().tolist(),
        'R': cam.R.flatten().tolist(),
        't': cam.t.tolist(),
        'width': cam.width,
        'height': cam.height,
        'elevation_deg': pose.elevation,
        'azimuth_deg': pose.azimuth,
    }


def camera_from_record(record: dict, where: str) -> tuple[CameraView, ViewPose]:
    missing = [key for key in FIELDS if key not in record]
    if missing:
        raise SchemaError(where, f'missing {", ".join(missing)}')
    sizes = {'K': 9, 'R': 9, 't': 3}
    for key, size in sizes.items():
        if len(record[key]) != size:
            raise SchemaError(where, f'{key} needs {size} values, got {len(record[key])}')
    try:
        cam = CameraView(record['K'], record['R'], record['t'], record['width'], record['height'])
        pose = ViewPose(float(record['elevation_deg']), float(record['azimuth_deg']))
    except CameraConfigError as e:
        raise SchemaError(where, e.message)
    except (TypeError, ValueError) as e:
        raise SchemaError(where, f'non-numeric camera field ({e})')
    return cam, pose


def write_camera_manifest(
    path: Path, cams: list[CameraView], poses: list[ViewPose] | None = None
):
    """Write cameras with their view poses; poses default to (0, 0)."""

    path = Path(path)
    poses = poses or [ViewPose(0.0, 0.0)] * len(cams)
    if len(poses) != len(cams):
        raise ValueError(f'{len(cams)} cameras but {len(poses)} poses')
    lines = [HEADER] + [json.dumps(camera_record(c, p)) for c, p in zip(cams, poses)]
    path.parent.mkdir(parents=True, exist_ok=True)
    tmpfile = path.with_name(path.name + '.tmp')
    tmpfile.write_text('\n'.join(lines) + '\n')
    tmpfile.replace(path)
    log.info(f'Wrote {len(cams)} camera(s) to {path}')


def read_camera_manifest(path: Path) -> list[tuple[CameraView, ViewPose]]:
    """Parse a manifest.

    Raises
    ------
    FileMissing
        raised if 'path' does not exist
    SchemaVersionMismatch
        raised if the header line is not the v1 header
    SchemaError
        raised for malformed records, including an invalid K or R
    """

    path = Path(path)
    if not path.exists():
        raise FileMissing(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != HEADER:
        found = lines[0].strip() if lines else ''
        raise SchemaVersionMismatch(path, 'camera manifest', found, 1)

    cameras = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f'{path}:{n}', str(e))
        cameras.append(camera_from_record(record, f'{path}:{n}'))
    log.debug(f'{path} loaded, {len(cameras)} camera(s).')
    return cameras
