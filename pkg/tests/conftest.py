import numpy as np
import pytest

from mdelast.assembly import MaterialLaw
from mdelast.elements import FamilyChoice, build_spaces
from mdelast.geometry import decompose
from mdelast.meshing import build_mesh

UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]

H_SEGMENTS = [
    ((0.3, 0.2), (0.3, 0.8), 1e-2, 1e-4),
    ((0.7, 0.2), (0.7, 0.8), 1e-2, 1e-4),
    ((0.3, 0.5), (0.7, 0.5), 1e-2, 1e-4),
]


@pytest.fixture(scope="session")
def square_geometry():
    return decompose(UNIT_SQUARE, [])


@pytest.fixture(scope="session")
def mms2_geometry():
    return decompose(UNIT_SQUARE, [((0.0, 0.5), (1.0, 0.5), 1e-2, 1e-4)])


@pytest.fixture(scope="session")
def isolated_geometry():
    return decompose(UNIT_SQUARE, [((0.3, 0.5), (0.7, 0.5), 1e-2, 1e-4)])


@pytest.fixture(scope="session")
def h_geometry():
    return decompose(UNIT_SQUARE, H_SEGMENTS)


@pytest.fixture(scope="session")
def cross_geometry():
    return decompose(
        UNIT_SQUARE,
        [((0.2, 0.5), (0.8, 0.5), 1e-2, 1e-4), ((0.5, 0.2), (0.5, 0.8), 1e-2, 1e-4)],
    )


@pytest.fixture(scope="session")
def square_mesh(square_geometry):
    return build_mesh(square_geometry, 0.25)


@pytest.fixture(scope="session")
def mms2_mesh(mms2_geometry):
    return build_mesh(mms2_geometry, 0.25)


@pytest.fixture(scope="session")
def mms2_spaces_full(mms2_mesh):
    return build_spaces(mms2_mesh, FamilyChoice("full"))


@pytest.fixture(scope="session")
def mms2_spaces_reduced(mms2_mesh):
    return build_spaces(mms2_mesh, FamilyChoice("reduced"))


@pytest.fixture(scope="session")
def square_spaces(square_mesh):
    return build_spaces(square_mesh, FamilyChoice("full"))


@pytest.fixture
def material():
    return MaterialLaw(mu=1.0, lam=1.0, mu_perp=1.0, lam_perp=1.0)


def constant_field(vec):
    vec = np.asarray(vec, dtype=float)
    return lambda x, y: vec
