import numpy as np
import pytest

from morselab.critical import MultistartSpec, find_critical_points
from morselab.model import make_system


@pytest.fixture(scope="session")
def dw():
    return make_system("double_well")


@pytest.fixture(scope="session")
def dw_crit(dw):
    return find_critical_points(dw, 2.0, seed=11)


@pytest.fixture(scope="session")
def s3d():
    return make_system("saddle3d")


@pytest.fixture(scope="session")
def s3d_crit(s3d):
    spec = MultistartSpec(count=400, box=np.array([(-1.6, 1.6)] * 3))
    return find_critical_points(s3d, 2.5, multistart=spec, seed=3)


@pytest.fixture(scope="session")
def pend():
    return make_system("pendulum_circle", kappa=0.5, n_segments=16, winding=[0])


@pytest.fixture(scope="session")
def pend_crit(pend):
    return find_critical_points(pend, 6.0, seed=7)
