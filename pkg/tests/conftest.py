import numpy as np
import pytest

from horoforge import monodromy as mo
from horoforge import packing as pk
from horoforge import surface_model as sm

H = pk.Horosphere

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def two_packing():
    return pk.with_tangencies([H.plane(1.0), H.sphere(0j, 0.5)])


def triangle_packing():
    return pk.with_tangencies([H.plane(1.0), H.sphere(0j, 0.5), H.sphere(1 + 0j, 0.5)])


@pytest.fixture(scope="session")
def two():
    return two_packing()


@pytest.fixture(scope="session")
def triangle():
    return triangle_packing()


@pytest.fixture(scope="session")
def two_model(two):
    return sm.from_packing(two, np.ones(2), tau=1e-4)


@pytest.fixture(scope="session")
def triangle_model(triangle):
    return sm.from_packing(triangle, np.ones(3), tau=1e-4)


@pytest.fixture(scope="session")
def two_solved(two_model):
    return mo.newton_solve(two_model)


@pytest.fixture(scope="session")
def triangle_solved(triangle_model):
    return mo.newton_solve(triangle_model)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
