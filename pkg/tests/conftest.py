"""Shared fixtures: default radar config, map geometry, acceptance log."""

import numpy as np
import pytest

from rdkan.radarsim import RadarConfig, derive_geometry

# One line per acceptance criterion, echoed after the test summary so the
# PASS/FAIL verdicts survive pytest's output capture.
ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def config():
    return RadarConfig()


@pytest.fixture(scope="session")
def geometry(config):
    return derive_geometry(config)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
