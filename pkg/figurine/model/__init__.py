from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .transformer import Reconstruction, ReconTransformer, backward, decode_gaussians

__all__ = [
    'ModelConfig',
    'ReconTransformer',
    'Reconstruction',
    'backward',
    'decode_gaussians',
    'load_checkpoint',
    'save_checkpoint',
]
