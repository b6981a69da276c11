import numpy as np
import pytest

from sheethom.core import CellGeometry, FlatSheet, MaterialModel

EPS1 = 2 + 0.1j
EPS2 = 4 + 0.1j
SIGMA = 0.01 + 0.3j


def two_phase_profile(t):
    return np.where(np.mod(t, 1.0) < 0.5, EPS1, EPS2)


def two_phase_eps(x, y):
    return two_phase_profile(y[..., 2])


def smooth_profile(t):
    return 2 + 0.1j + 0.5 * np.sin(2 * np.pi * t)


@pytest.fixture
def constant_materials():
    return MaterialModel(EPS1, SIGMA, 1.0)


@pytest.fixture
def two_phase_materials():
    return MaterialModel(two_phase_eps, 0.0, 1.0)


@pytest.fixture
def flat_geometry():
    return CellGeometry(8, FlatSheet(3, 0.0))


# Outcome lines of the acceptance criteria, filled by test_acceptance.py.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
