import logging
from pathlib import Path
from typing import Callable

log = logging.getLogger(f'figurine.{__name__}')


class LoggedException(Exception):
    exit_code = 1

    def __init__(self, message: str, log_func: Callable) -> None:
        self.message = message
        self.log_func = log_func
        super().__init__(self.message)

    def log_this(self):
        self.log_func(self.message)


class InputError(LoggedException):
    """Unreadable, malformed or invalid input data."""

    exit_code = 2


class ConfigMismatch(LoggedException):
    """Inputs are individually valid but disagree with the configuration."""

    exit_code = 3


class NumericFailure(LoggedException):
    """Non-finite values or failed derivative checks."""

    exit_code = 4


class FileMissing(InputError):
    def __init__(self, path: Path) -> None:
        super().__init__(f'{path} does not exist!', log.error)


class SchemaVersionMismatch(InputError):
    def __init__(self, path: Path, what: str, found, expected) -> None:
        super().__init__(
            f'{path} is not a {what} v{expected} file (found {found!r})', log.error
        )


class SchemaError(InputError):
    def __init__(self, path: Path | str, detail: str) -> None:
        super().__init__(f'{path} could not be parsed: {detail}', log.error)


class InvariantViolation(InputError):
    def __init__(self, field: str, detail: str) -> None:
        self.field = field
        super().__init__(f'invariant violated in \'{field}\': {detail}', log.error)


class DimensionMismatch(InputError):
    def __init__(self, what: str, index: int, detail: str) -> None:
        self.index = index
        super().__init__(f'{what} {index} has mismatched dimensions, {detail}', log.error)


class VertexIndexError(InputError, IndexError):
    def __init__(self, idx: int, count: int) -> None:
        super().__init__(
            f'vertex index {idx} is out of range for a model with {count} vertices',
            log.error,
        )


class CameraConfigError(ConfigMismatch):
    def __init__(self, detail: str) -> None:
        super().__init__(f'camera is misconfigured, {detail}', log.error)


class ConfigKeyError(ConfigMismatch):
    def __init__(self, source: Path | str, key: str) -> None:
        super().__init__(f'{source} sets unknown key \'{key}\'', log.error)


class ConfigValueError(ConfigMismatch):
    def __init__(self, key: str, detail: str) -> None:
        super().__init__(f'config key \'{key}\' is invalid, {detail}', log.error)


class CheckpointMismatch(ConfigMismatch):
    def __init__(self, path: Path, detail: str) -> None:
        super().__init__(
            f'{path} does not match the configured model, {detail}', log.error
        )


class BundleMismatch(ConfigMismatch):
    def __init__(self, path: Path | str, detail: str) -> None:
        super().__init__(
            f'{path} does not match the configured views, {detail}', log.error
        )


class NonFiniteGradient(NumericFailure):
    def __init__(self, names: list[str]) -> None:
        self.names = names
        shown = ', '.join(names[:5])
        super().__init__(f'non-finite gradients in {shown}', log.critical)


class NonFiniteLoss(NumericFailure):
    def __init__(self, step: int, term: str) -> None:
        self.step = step
        self.term = term
        super().__init__(
            f'loss term \'{term}\' became non-finite at step {step}, aborting!',
            log.critical,
        )


class GradientCheckFailed(NumericFailure):
    def __init__(self, failures: list[str]) -> None:
        self.failures = failures
        super().__init__(
            f'{len(failures)} gradient check(s) failed: {", ".join(failures)}',
            log.error,
        )


class PathUnwritable(InputError):
    def __init__(self, path: Path, reason: str) -> None:
        super().__init__(f'cannot write {path}: {reason}', log.error)


class ImageSizeError(InputError):
    def __init__(self, height: int, width: int, stride: int) -> None:
        super().__init__(
            f'image of {width}x{height} is not divisible by the encoder stride {stride}',
            log.error,
        )
