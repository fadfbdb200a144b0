import math
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from windtube.embedding import build_embedding  # noqa: E402
from windtube.fields import make_field  # noqa: E402
from windtube.geometry import build_domain  # noqa: E402
from windtube.winding import make_grid, trace_bundle  # noqa: E402

MESH_TRACE_TOL = 1e-6


@pytest.fixture(scope="session")
def straight():
    return build_domain({"kind": "straight-cylinder"})


@pytest.fixture(scope="session")
def expanding():
    return build_domain({"kind": "expanding-tube"})


@pytest.fixture(scope="session")
def curved():
    return build_domain({"kind": "curved-tube"})


@pytest.fixture(scope="session")
def cylinder_map(straight):
    return build_embedding(straight)


@pytest.fixture(scope="session")
def straight_mesh_map(straight):
    return build_embedding(straight, resolution=0.1, mode="exact", tol=MESH_TRACE_TOL)


@pytest.fixture(scope="session")
def expanding_map(expanding):
    return build_embedding(expanding, resolution=0.1, mode="exact", tol=MESH_TRACE_TOL)


@pytest.fixture(scope="session")
def curved_map(curved):
    return build_embedding(curved, resolution=0.1, mode="exact", tol=MESH_TRACE_TOL)


@pytest.fixture(scope="session")
def twist(straight):
    return make_field({"kind": "uniform-twist", "k": 2 * math.pi}, straight)


@pytest.fixture(scope="session")
def area_grid24():
    return make_grid(24)


@pytest.fixture(scope="session")
def twist_bundle(twist, cylinder_map, area_grid24):
    """Lines of the full-turn twist from every node of the n_r = 24 area grid."""
    return trace_bundle(twist, cylinder_map, area_grid24.nodes)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
