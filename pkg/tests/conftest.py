import copy

import numpy as np
import pytest

from chain_model import build_matrices, spec_from_rates
from policy_solver import solve_stationary
from scenario_config import DEFAULT_SETTINGS, parse_scenario


def two_tank_spec(xi=(0.5, 0.1)):
    """Two sensors, sampling rate 1, release rate 10"""
    return spec_from_rates(sample_rate=1.0, release_rate=10.0, xi=list(xi))


@pytest.fixture
def tank_spec():
    return two_tank_spec()


@pytest.fixture
def tank_mats(tank_spec):
    return build_matrices(tank_spec)


@pytest.fixture
def tank_policy(tank_mats):
    return solve_stationary(tank_mats)


def make_config(**document):
    """Scenario config from a partial settings dict, defaults filled in"""
    settings = copy.deepcopy(DEFAULT_SETTINGS)
    solver = {**settings["solver"], **document.pop("solver", {})}
    settings.update(document)
    settings["solver"] = solver
    return parse_scenario(settings)


def scalar_estimation_config(**overrides):
    document = {
        "name": "scalar-test",
        "kind": "estimation-scalar",
        "sensors": 2,
        "chain": {"sample_rate": 1.0, "release_rate": 10.0, "xi": [0.5, 0.1]},
        "plants": [{"gamma": 0.7, "sigma": 1.0, "eta": 0.3}, {"gamma": 0.3, "sigma": 1.0, "eta": 0.3}],
        "horizon": 30.0,
        "replicates": 1000,
        "grid_dt": 0.05,
        "seed": 7,
    }
    document.update(overrides)
    return make_config(**document)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
