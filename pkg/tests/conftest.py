import numpy as np
import pytest

from app.cvpm import geometry as geo
from app.cvpm.controller import build_problem
from app.routers.sim.scenario import builtin_dcdc_scenario


@pytest.fixture(scope="session")
def dcdc_scenario():
    return builtin_dcdc_scenario()


@pytest.fixture(scope="session")
def dcdc_inputs(dcdc_scenario):
    return dcdc_scenario.to_inputs()


@pytest.fixture(scope="session")
def dcdc_problem(dcdc_inputs):
    """터미널 집합, 튜브, X_C1 계산이 무거우므로 세션 동안 한 번만 만든다."""
    return build_problem(dcdc_inputs)


@pytest.fixture
def unit_box():
    return geo.from_box([-1.0, -1.0], [1.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
