import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tightbox.fixtures import CATALOG, generate
from tightbox.tetmesh import TetMesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def fixture(name: str):
    """Generated catalog fixtures are immutable, so share them across tests."""
    return generate(CATALOG[name]())


# cube [0,1]^3 as 5 tets: central tet on the even corners plus 4 corner tets
CUBE5_VERTS = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
CUBE5_TETS = np.array([[0, 3, 5, 6], [1, 0, 3, 5], [2, 0, 3, 6], [4, 0, 5, 6], [7, 3, 5, 6]])


@pytest.fixture
def cube5():
    return TetMesh(CUBE5_VERTS, CUBE5_TETS)


@pytest.fixture
def cube():
    return fixture("unit_cube")


@pytest.fixture
def lshape():
    return fixture("l_shape")


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
