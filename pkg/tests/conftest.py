"""Test configuration and fixtures."""

import logging

import pytest


@pytest.fixture(autouse=True)
def quiet_package_logger():
    """Silence logging and undo any handlers a CLI test installed."""
    package_logger = logging.getLogger("evt_autoselect")
    handlers, level = list(package_logger.handlers), package_logger.level
    logging.disable(logging.CRITICAL)
    yield
    logging.disable(logging.NOTSET)
    package_logger.handlers = handlers
    package_logger.setLevel(level)
