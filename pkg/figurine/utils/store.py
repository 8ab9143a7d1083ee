import json
import logging
from collections import UserDict
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from .exceptions import PathUnwritable, SchemaError

log = logging.getLogger(f'figurine.{__name__}')


def _plain(value: Any):
    """json fallback for tensors, numpy scalars and paths."""
    if hasattr(value, 'tolist'):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f'{type(value).__name__} is not json serializable')


class Store(UserDict):
    """Dict persisted as one json document: run state, eval and gradcheck reports."""

    def __init__(self, file: Path, load: bool = True, defaults: Mapping[str, Any] | None = None):
        """init

        Parameters
        ----------
        file
            path to the json document, the suffix is forced to .json
        load, optional
            read 'file' now if it exists, by default True
        defaults, optional
            entries set only where the loaded document lacks them, by default None
        """
        super().__init__()
        self.file = Path(file).with_suffix('.json')
        if load:
            self.load()
        for key, value in (defaults or {}).items():
            self.data.setdefault(key, value)

    def load(self):
        """Replace the contents with the document on disk, or empty it if there is none.

        Raises
        ------
        SchemaError
            raised if the document is not a json object
        """

        if not self.file.exists():
            self.data = {}
            log.debug(f'No {self.file} yet, starting empty.')
            return
        try:
            loaded = json.loads(self.file.read_text())
        except json.JSONDecodeError as e:
            raise SchemaError(self.file, f'invalid json ({e.msg}, line {e.lineno})')
        if not isinstance(loaded, dict):
            raise SchemaError(self.file, f'expected a json object, found {type(loaded).__name__}')
        self.data = loaded
        log.debug(f'{self.file} loaded with {len(self.data)} entries.')

    def save(self):
        """Write through a sibling .tmp file so readers never see half a document.

        Raises
        ------
        PathUnwritable
            raised if the directory or file cannot be written
        """

        tmpfile = self.file.with_suffix('.tmp')
        try:
            self.file.parent.mkdir(parents=True, exist_ok=True)
            tmpfile.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=_plain))
            tmpfile.replace(self.file)
        except OSError as e:
            raise PathUnwritable(self.file, e.strerror or str(e))


class RecordLog:
    """Line-delimited json records, e.g. one metrics record per training step."""

    def __init__(self, file: Path, truncate: bool = True) -> None:
        self.file = Path(file)
        try:
            self.file.parent.mkdir(parents=True, exist_ok=True)
            if truncate:
                self.file.write_text('')
        except OSError as e:
            raise PathUnwritable(self.file, e.strerror or str(e))

    def append(self, record: Mapping[str, Any]):
        with self.file.open('a') as fh:
            fh.write(json.dumps(record, sort_keys=True, default=_plain) + '\n')

    def read(self) -> list[dict[str, Any]]:
        if not self.file.exists():
            return []
        records = []
        for n, line in enumerate(self.file.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise SchemaError(self.file, f'line {n}: {e.msg}')
        return records
