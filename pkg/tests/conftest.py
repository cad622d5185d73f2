import numpy as np
import pytest

from gdmflow import build_distorted, build_triangular, build_hfv, compute_geometry


@pytest.fixture(scope="session")
def tri2():
    mesh = build_triangular(2)
    geom = compute_geometry(mesh)
    return build_hfv(mesh, geom)


@pytest.fixture(scope="session")
def tri4():
    mesh = build_triangular(4)
    geom = compute_geometry(mesh)
    return build_hfv(mesh, geom)


@pytest.fixture(scope="session")
def dist4():
    mesh = build_distorted(4, 0.3)
    geom = compute_geometry(mesh)
    return build_hfv(mesh, geom)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
