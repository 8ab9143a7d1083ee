import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .model.config import ModelConfig
from .objectives import LossWeights
from .training.optim import TrainConfig
from .training.scenes import SceneConfig
from .utils.exceptions import ConfigKeyError
from .utils.settings import apply_entries, read_properties

log = logging.getLogger(f'figurine.{__name__}')

SECTIONS = ('model', 'train', 'scene', 'loss')


@dataclass(frozen=True)
class Settings:
    """Everything a run needs, one frozen dataclass per config section."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> 'Settings':
        self.model.validate()
        self.train.validate()
        self.scene.validate()
        self.loss.validate()
        return self

    def with_entries(self, entries: dict[str, str], source: str = '<flags>') -> 'Settings':
        for key in entries:
            if key.partition('.')[0] not in SECTIONS:
                raise ConfigKeyError(source, key)
        return replace(
            self,
            **{
                name: apply_entries(getattr(self, name), entries, name, source)
                for name in SECTIONS
            },
        )


def load_settings(
    path: str | Path | None = None, overrides: dict[str, str] | None = None
) -> Settings:
    """Defaults, then the config file, then flag overrides; later sources win.

    Parameters
    ----------
    path, optional
        plain-text 'key = value' file, by default None (defaults only)
    overrides, optional
        dotted keys from the command line, by default None

    Raises
    ------
    FileMissing
        raised if 'path' does not exist
    ConfigKeyError
        raised for keys outside the model, train, scene and loss sections,
        or naming no field
    ConfigValueError
        raised if a value cannot be read or the result fails validation
    """

    settings = Settings()
    if path is not None:
        settings = settings.with_entries(read_properties(path), str(path))
    if overrides:
        settings = settings.with_entries(overrides)
    return settings.validate()
