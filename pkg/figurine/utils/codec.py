from __future__ import annotations  # PEP563

import logging
import struct
from pathlib import Path

import numpy as np

from .exceptions import FileMissing, SchemaError, SchemaVersionMismatch

log = logging.getLogger(f'figurine.{__name__}')


class BinaryWriter:
    """Accumulates little-endian sections of a container file."""

    def __init__(self, magic: bytes, version: int) -> None:
        assert len(magic) == 4
        self.chunks: list[bytes] = [magic, struct.pack('<I', version)]

    def pack(self, fmt: str, *values) -> BinaryWriter:
        self.chunks.append(struct.pack(f'<{fmt}', *values))
        return self

    def text(self, value: str, width: str = 'B') -> BinaryWriter:
        raw = value.encode('utf8')
        self.chunks.append(struct.pack(f'<{width}', len(raw)) + raw)
        return self

    def array(self, values, dtype: str) -> BinaryWriter:
        arr = np.ascontiguousarray(np.asarray(values), dtype=np.dtype(dtype).newbyteorder('<'))
        self.chunks.append(arr.tobytes())
        return self

    def encode(self) -> bytes:
        return b''.join(self.chunks)

    def write(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmpfile = path.with_name(path.name + '.tmp')
        tmpfile.write_bytes(self.encode())
        tmpfile.replace(path)


class BinaryReader:
    """Sequential reader matching BinaryWriter; every short read is a SchemaError."""

    def __init__(self, data: bytes, source: Path | str = '<bytes>') -> None:
        self.data = data
        self.source = source
        self.offset = 0

    @classmethod
    def open(cls, path: Path, magic: bytes, version: int, what: str) -> BinaryReader:
        path = Path(path)
        if not path.exists():
            raise FileMissing(path)
        self = cls(path.read_bytes(), path)
        found = self.take(4)
        if found != magic:
            raise SchemaVersionMismatch(path, what, found, version)
        (found_version,) = self.unpack('I')
        if found_version != version:
            raise SchemaVersionMismatch(path, what, found_version, version)
        return self

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.data):
            raise SchemaError(
                self.source, f'truncated at byte {self.offset}, wanted {count} more'
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        fmt = f'<{fmt}'
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, width: str = 'B') -> str:
        (length,) = self.unpack(width)
        try:
            return self.take(length).decode('utf8')
        except UnicodeDecodeError:
            raise SchemaError(self.source, f'invalid utf-8 near byte {self.offset}')

    def array(self, shape: tuple[int, ...], dtype: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder('<')
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder('='), copy=True).reshape(shape)

    def finish(self):
        if self.offset != len(self.data):
            raise SchemaError(
                self.source, f'{len(self.data) - self.offset} trailing bytes'
            )
