import dataclasses
import logging
import typing
from pathlib import Path
from typing import Any

from .exceptions import ConfigKeyError, ConfigValueError, FileMissing

log = logging.getLogger(f'figurine.{__name__}')


def read_properties(path: str | Path) -> dict[str, str]:
    """Parse a plain-text 'key = value' file.

    Blank lines and anything after '#' are ignored; the last
    occurrence of a key wins.

    Parameters
    ----------
    path
        path to the config file

    Returns
    -------
        raw key to value mapping, values still strings

    Raises
    ------
    FileMissing
        raised if the file does not exist
    ConfigValueError
        raised for lines without '='
    """

    path = Path(path)
    if not path.exists():
        raise FileMissing(path)

    entries = {}
    with path.open() as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigValueError(f'{path}:{n}', f'expected \'key = value\', got \'{line}\'')
            key, value = (part.strip() for part in line.split('=', 1))
            entries[key] = value
    log.debug(f'{path} loaded, {len(entries)} entries.')
    return entries


def coerce(key: str, raw: str, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    try:
        if hint is bool:
            lowered = raw.lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(raw)
            return lowered in ('true', '1', 'yes')
        if hint in (int, float, str):
            return hint(raw)
        if origin is tuple:
            (inner, *_) = typing.get_args(hint)
            items = [item.strip() for item in raw.split(',')]
            return tuple(coerce(key, item, inner) for item in items if item)
    except ValueError:
        raise ConfigValueError(key, f'cannot read \'{raw}\' as {hint}')
    raise ConfigValueError(key, f'unsupported field type {hint}')


def apply_entries(config, entries: dict[str, str], prefix: str, source: str = '<flags>'):
    """Return a copy of a frozen config dataclass with matching entries applied.

    Keys look like '<prefix>.<field>'; a 'dict[int, float]' field collects
    '<prefix>.<field>.<id>' keys instead.

    Raises
    ------
    ConfigKeyError
        raised for '<prefix>.*' keys that name no field
    """

    hints = typing.get_type_hints(type(config))
    fields = {f.name for f in dataclasses.fields(config)}
    changes: dict[str, Any] = {}

    for key, raw in entries.items():
        head, _, rest = key.partition('.')
        if head != prefix:
            continue
        name, _, sub = rest.partition('.')
        if name not in fields:
            raise ConfigKeyError(source, key)
        hint = hints[name]
        if typing.get_origin(hint) is dict:
            if not sub:
                raise ConfigKeyError(source, key)
            key_type, value_type = typing.get_args(hint)
            table = dict(changes.get(name, getattr(config, name)))
            table[coerce(key, sub, key_type)] = coerce(key, raw, value_type)
            changes[name] = table
        elif sub:
            raise ConfigKeyError(source, key)
        else:
            changes[name] = coerce(key, raw, hint)

    return dataclasses.replace(config, **changes)
