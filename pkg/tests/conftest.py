"""
Shared pytest configuration.

Long statistical reproduction tests carry ``@pytest.mark.slow`` and only run with
``--runslow``.
"""

import os
import sys

import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run slow reproduction tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long statistical reproduction test')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
