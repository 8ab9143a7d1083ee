import pytest

from figurine.utils.exceptions import ConfigValueError
from figurine.utils.process import THREADS_ENV, configure_threads, threads_from_env


def test_threads_from_env():
    assert threads_from_env('3') == 3
    with pytest.raises(ConfigValueError, match=THREADS_ENV) as info:
        threads_from_env('four')
    assert info.value.exit_code == 3


def test_unreadable_thread_count_stops_before_torch(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, '2.5')
    with pytest.raises(ConfigValueError, match="'2.5'"):
        configure_threads()
