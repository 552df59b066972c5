import logging

import pytest

from config.settings import THREADS, env_int


def test_threads_setting_is_positive():
    assert THREADS >= 1


@pytest.mark.parametrize('raw, expected', [('6', 6), (' 3 ', 3), ('', 4)])
def test_env_int_parses(monkeypatch, raw, expected):
    monkeypatch.setenv('PRECIS_TEST_INT', raw)
    assert env_int('PRECIS_TEST_INT', 4) == expected


def test_env_int_unset(monkeypatch):
    monkeypatch.delenv('PRECIS_TEST_INT', raising=False)
    assert env_int('PRECIS_TEST_INT', 4) == 4


@pytest.mark.parametrize('raw', ['many', '2.5', '0', '-3'])
def test_env_int_falls_back_with_warning(monkeypatch, caplog, raw):
    monkeypatch.setenv('PRECIS_TEST_INT', raw)
    with caplog.at_level(logging.WARNING, logger='config.settings'):
        assert env_int('PRECIS_TEST_INT', 4) == 4
    assert 'PRECIS_TEST_INT' in caplog.text
