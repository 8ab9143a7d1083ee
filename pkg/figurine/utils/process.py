import logging
import os
import time
from contextlib import contextmanager

import psutil
import torch

from .exceptions import ConfigValueError

log = logging.getLogger(f'figurine.{__name__}')

THREADS_ENV = 'FIGURINE_THREADS'


def threads_from_env(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigValueError(THREADS_ENV, f'expected a whole number of threads, got {value!r}')


def configure_threads(deterministic: bool = False) -> int:
    """Pick and apply the torch intra-op thread count.

    Parameters
    ----------
    deterministic, optional
        force a single thread and deterministic torch kernels, by default False

    Returns
    -------
        the thread count in effect
    """

    if deterministic:
        threads = 1
        torch.use_deterministic_algorithms(True)
    elif os.environ.get(THREADS_ENV):
        threads = max(1, threads_from_env(os.environ[THREADS_ENV]))
    else:
        threads = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1

    torch.set_num_threads(threads)
    log.debug(f'Using {threads} thread(s), deterministic={deterministic}')
    return threads


def resident_memory_mb() -> float:
    return psutil.Process().memory_info().rss / 2**20


class Stopwatch:
    """Wall time and resident memory of a block of work."""

    def __init__(self) -> None:
        self.elapsed = 0.0
        self.peak_rss_mb = 0.0

    @contextmanager
    def measure(self, label: str):
        start = time.perf_counter()
        try:
            yield self
        finally:
            self.elapsed = time.perf_counter() - start
            self.peak_rss_mb = max(self.peak_rss_mb, resident_memory_mb())
            log.info(
                f'{label} took {self.elapsed:.3f}s (rss {self.peak_rss_mb:.0f} MiB)'
            )
