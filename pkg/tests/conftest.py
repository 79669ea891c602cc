import os

import numpy as np
import pytest

from config_handler import load_robot_model
from locomotion.alip_core import AlipParams
from locomotion.alip_planner import GaitSpec
from validation_suites import BUNDLED_ROBOT, TEMPLATE_PARAMS, toy_levels

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(ROOT, 'config')


@pytest.fixture
def params():
    return AlipParams(**TEMPLATE_PARAMS)


@pytest.fixture
def spec():
    return GaitSpec(T=0.4, W=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def biped():
    return load_robot_model(BUNDLED_ROBOT)


@pytest.fixture(scope='session')
def model(biped):
    return biped.model


@pytest.fixture
def toy_tasks(rng):
    """Three-level hierarchy on a 5-DoF toy system"""
    return toy_levels(rng)


@pytest.fixture
def scenario_path():
    return os.path.join(CONFIG_DIR, 'in_place_scenario.yaml')


@pytest.fixture
def schedule_path():
    return os.path.join(CONFIG_DIR, 'velocity_schedule_scenario.yaml')
