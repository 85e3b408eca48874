import numpy as np
import pytest

from admmsampling import (Dataset, GaussianProcess, Hyperparams, Rectangle, RobotState,
                          AgentProblem, movement_region)


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run the regression runs marked slow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def domain():
    return Rectangle.from_size(10., 10.)


@pytest.fixture
def hyperparams():
    return Hyperparams(0., 1., 2., 1e-2)


@pytest.fixture
def small_team(domain, hyperparams):
    """two agents, H=3, a GP conditioned on a few readings"""
    positions = np.array([[3., 3.], [7., 7.]])
    headings = [0.3, -2.]
    rng = np.random.RandomState(4)
    X = rng.uniform(1., 9., (6, 2))
    gp = GaussianProcess(Dataset(X, rng.normal(size=6)), hyperparams)
    problems = []
    for i, (q, th) in enumerate(zip(positions, headings)):
        region, _ = movement_region(i, positions, domain, 0.5)
        problems.append(AgentProblem(i, RobotState(q[0], q[1], th), region=region,
                                     horizon=3, dt=0.2))
    return problems, gp
