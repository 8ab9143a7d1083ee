from dataclasses import dataclass, fields

from ..utils.exceptions import ConfigValueError

HEADER_FIELDS = (
    'dim',
    'patch',
    'heads',
    'n_intra',
    'n_inter',
    'k_win',
    'latent_channels',
    'latent_h',
    'latent_w',
    'n_views',
    'n_human_intra',
)


@dataclass(frozen=True)
class ModelConfig:
    """Reconstruction transformer hyperparameters, keys 'model.<field>' in config files."""

    dim: int = 256
    patch: int = 2
    heads: int = 8
    n_intra: int = 4
    n_inter: int = 2
    n_human_intra: int = 2
    k_win: int = 2
    latent_channels: int = 4
    latent_h: int = 64
    latent_w: int = 64
    n_views: int = 4
    ffn_ratio: int = 4
    encoder_stride: int = 8
    s_min: float = 1e-4
    s_max: float = 0.5
    near: float = 0.5
    far: float = 3.5
    human_prior: bool = True

    @property
    def grid(self) -> tuple[int, int]:
        """Token lattice rows and columns per view."""
        return self.latent_h // self.patch, self.latent_w // self.patch

    @property
    def tokens_per_view(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @property
    def image_size(self) -> tuple[int, int]:
        return self.latent_h * self.encoder_stride, self.latent_w * self.encoder_stride

    def header(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in HEADER_FIELDS)

    def validate(self) -> 'ModelConfig':
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is int and value <= 0:
                raise ConfigValueError(f'model.{f.name}', f'must be positive, got {value}')
        if self.dim % self.heads:
            raise ConfigValueError(
                'model.heads', f'{self.heads} heads do not divide dim {self.dim}'
            )
        if self.latent_h % self.patch or self.latent_w % self.patch:
            raise ConfigValueError(
                'model.patch',
                f'patch {self.patch} does not tile a {self.latent_h}x{self.latent_w} latent',
            )
        if not 0 < self.s_min < self.s_max:
            raise ConfigValueError(
                'model.s_min', f'need 0 < s_min < s_max, got {self.s_min}, {self.s_max}'
            )
        if not 0 < self.near < self.far:
            raise ConfigValueError(
                'model.near', f'need 0 < near < far, got {self.near}, {self.far}'
            )
        return self


def describe_mismatch(expected: ModelConfig, found: tuple[int, ...]) -> str:
    return ', '.join(
        f'{name} {have} != {want}'
        for name, want, have in zip(HEADER_FIELDS, expected.header(), found)
        if want != have
    )
