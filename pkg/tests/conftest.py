import numpy as np
import pytest

from surface_dg import CurvedMesh, DGSpace, LevelSet, Sphere, SurfaceMesh, Torus, icosphere


@pytest.fixture(scope="session")
def sphere():
    return Sphere(1.0)


@pytest.fixture(scope="session")
def torus():
    return Torus(2.0, 0.5)


def _plane():
    return LevelSet(lambda x: x[..., 2],
                    lambda x: np.broadcast_to([0.0, 0.0, 1.0], x.shape).copy(),
                    lambda x: np.zeros(x.shape + (3,)),
                    tube_halfwidth=1.0)


@pytest.fixture(scope="session")
def plane():
    """The plane z = 0 as a level set."""
    return _plane()


def two_element_patch(surface, flat=False):
    """Two triangles sharing one edge; open patch, used as a local fixture."""
    if flat:
        verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.2, 0.9, 0.0], [0.7, -0.8, 0.0]])
    else:
        verts = surface.closest_point(np.array([[1.0, 0.0, 0.0], [0.8, 0.6, 0.0],
                                                [0.85, 0.25, 0.45], [0.9, 0.2, -0.4]]))
    tris = np.array([[0, 1, 2], [1, 0, 3]])
    return SurfaceMesh(verts, tris, allow_boundary=True)


@pytest.fixture(scope="session")
def patch_sphere(sphere):
    return two_element_patch(sphere)


@pytest.fixture(scope="session")
def patch_plane():
    return two_element_patch(None, flat=True)


@pytest.fixture(scope="session")
def sphere_spaces(sphere):
    """DG spaces on sphere level 1 for k = 1..3."""
    return {k: DGSpace(CurvedMesh(icosphere(sphere, 1), sphere, k)) for k in (1, 2, 3)}
