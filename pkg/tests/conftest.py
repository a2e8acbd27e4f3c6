import numpy as np
import pytest

from robust_procurement import SolverOptions, load_fixture, solve_ropt
from robust_procurement.model import FIXTURES


@pytest.fixture(scope="session")
def envs():
    return {name: load_fixture(name) for name in FIXTURES}


@pytest.fixture(scope="session")
def solutions(envs):
    return {name: solve_ropt(env) for name, env in envs.items()}


@pytest.fixture(params=FIXTURES)
def fixture_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def solve_small(env, grid_points=201, **kw):
    return solve_ropt(env, SolverOptions(grid_points=grid_points, **kw))
