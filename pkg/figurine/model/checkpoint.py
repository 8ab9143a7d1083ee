import logging
from pathlib import Path

import torch

from ..utils.codec import BinaryReader, BinaryWriter
from ..utils.exceptions import CheckpointMismatch
from .config import HEADER_FIELDS, ModelConfig, describe_mismatch
from .transformer import ReconTransformer

log = logging.getLogger(f'figurine.{__name__}')

MAGIC = b'FGCK'
VERSION = 1


def save_checkpoint(model: ReconTransformer, path: Path):
    state = model.state_dict()
    writer = BinaryWriter(MAGIC, VERSION).pack(f'{len(HEADER_FIELDS)}i', *model.cfg.header())
    writer.pack('I', len(state))
    for name, tensor in state.items():
        writer.text(name, 'H').pack('B', tensor.dim())
        writer.pack(f'{tensor.dim()}I', *tensor.shape)
        writer.array(tensor.detach().to(torch.float32), 'f4')
    writer.write(path)
    log.debug(f'Checkpoint with {len(state)} tensors written to {path}')


def read_checkpoint(path: Path) -> tuple[tuple[int, ...], dict[str, torch.Tensor]]:
    reader = BinaryReader.open(path, MAGIC, VERSION, 'checkpoint')
    header = reader.unpack(f'{len(HEADER_FIELDS)}i')
    (count,) = reader.unpack('I')
    tensors = {}
    for _ in range(count):
        name = reader.text('H')
        (ndim,) = reader.unpack('B')
        shape = reader.unpack(f'{ndim}I') if ndim else ()
        tensors[name] = torch.from_numpy(reader.array(tuple(shape), 'f4'))
    reader.finish()
    return header, tensors


def load_checkpoint(path: Path, cfg: ModelConfig) -> ReconTransformer:
    """Build a model for 'cfg' and fill it from 'path'.

    Raises
    ------
    CheckpointMismatch
        raised if the stored config header, tensor names or shapes disagree with 'cfg'
    """

    header, tensors = read_checkpoint(path)
    if header != cfg.header():
        raise CheckpointMismatch(path, describe_mismatch(cfg, header))

    model = ReconTransformer(cfg)
    expected = model.state_dict()
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointMismatch(path, f'missing {missing[:3]}, unexpected {extra[:3]}')
    for name, tensor in tensors.items():
        if tensor.shape != expected[name].shape:
            raise CheckpointMismatch(
                path, f'{name} is {tuple(tensor.shape)}, expected {tuple(expected[name].shape)}'
            )
    model.load_state_dict(tensors)
    log.debug(f'{path} loaded into a {cfg.dim}-wide model.')
    return model
