import numpy as np
import pytest

from brflow.mesh import uniform_box_mesh, uniform_rectangle_mesh


@pytest.fixture
def mesh2d():
    return uniform_rectangle_mesh((0.0, 1.0), (0.0, 1.0), 4, 4)


@pytest.fixture
def mesh3d():
    return uniform_box_mesh((0.0, 1.0), (0.0, 1.0), (0.0, 1.0), 2)


@pytest.fixture(params=["2d", "3d"])
def mesh(request, mesh2d, mesh3d):
    return mesh2d if request.param == "2d" else mesh3d


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
