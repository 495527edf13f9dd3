import os

import numpy as np
import pytest

from nfradar.scene import Scene, Target, build_upa
from nfradar.verify import random_scene

FULL = os.environ.get("NFRADAR_FULL") == "1"


def pytest_collection_modifyitems(config, items):
    if FULL:
        return
    skip = pytest.mark.skip(reason="full-scale run; set NFRADAR_FULL=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_scene(rng):
    """M = 5, N = 4, K = 2 random scene with a random PD noise covariance."""
    return random_scene(rng, 5, 4, 2)


@pytest.fixture
def two_target_scene():
    """Two targets in front of separated 4x4 arrays, 1 m wavelength."""
    rx = build_upa(4, 4, 0.5, (-1.0, 0.0, 0.0))
    tx = build_upa(4, 4, 0.5, (1.0, 0.0, 0.0))
    targets = [Target((0.4, 0.3, 3.0), 1.0 + 0.5j), Target((-0.6, -0.2, 4.0), -0.8 + 0.6j)]
    return Scene(tx, rx, targets, 299792458.0, 1e-2)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Records one PASS/FAIL line per acceptance criterion for the run summary."""
    def record(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
