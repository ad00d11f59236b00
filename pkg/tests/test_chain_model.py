import numpy as np
import numpy.testing as npt
import pytest

from chain_model import (build_generators, build_matrices, counter_endpoints, release_counter, sample_counter,
                         spec_from_rates, validate_generator)
from errors import InvalidSpecError
from models import ChainSpec


def test_counters_alternate_release_and_sample():
    source, target = counter_endpoints(3)
    npt.assert_array_equal(source, [0, 3, 1, 3, 2, 3])
    npt.assert_array_equal(target, [3, 0, 3, 1, 3, 2])
    assert release_counter(1) == 2
    assert sample_counter(1) == 3


def test_generators_conserve_probability():
    G = build_generators(4)
    assert G.shape == (8, 5, 5)
    npt.assert_allclose(G.sum(axis=1), 0.0, atol=0)
    for i in range(8):
        off = G[i] - np.diag(np.diag(G[i]))
        assert off.min() >= 0
        assert np.count_nonzero(G[i]) == 2


def test_spec_from_rates_interleaves_base_rates(tank_spec):
    npt.assert_array_equal(tank_spec.mu0, [10.0, 1.0, 10.0, 1.0])
    npt.assert_array_equal(tank_spec.alpha, np.eye(4))
    assert (tank_spec.n, tank_spec.m, tank_spec.idle) == (3, 4, 2)


def test_running_cost_sits_on_idle_node(tank_mats):
    npt.assert_allclose(tank_mats.c, [0.0, 0.0, 0.6], atol=1e-12)
    npt.assert_allclose(tank_mats.S[:, :2], 0.0, atol=0)
    npt.assert_allclose(tank_mats.S[:, 2], [0.0, 0.5, 0.0, 0.1], atol=1e-12)


def test_matrices_of_uncontrolled_chain(tank_mats):
    A = tank_mats.A
    npt.assert_allclose(A.sum(axis=0), 0.0, atol=1e-12)
    npt.assert_allclose(A, [[-10.0, 0.0, 1.0], [0.0, -10.0, 1.0], [10.0, 10.0, -2.0]])
    npt.assert_allclose(tank_mats.B, tank_mats.G)


@pytest.mark.parametrize("field, value", [
    ("mu0", np.array([1.0, -1.0, 1.0, 1.0])),
    ("xi", np.array([0.5, -0.1])),
    ("alpha", np.eye(3)),
    ("mu0", np.array([1.0, np.nan, 1.0, 1.0])),
])
def test_malformed_specs_are_rejected(tank_spec, field, value):
    fields = {"L": 2, "mu0": tank_spec.mu0, "alpha": tank_spec.alpha, "xi": tank_spec.xi}
    fields[field] = value
    with pytest.raises(InvalidSpecError):
        build_matrices(ChainSpec(**fields))


def test_zero_sensors_rejected():
    with pytest.raises(InvalidSpecError):
        build_generators(0)
    with pytest.raises(ValueError):
        spec_from_rates(1.0, 1.0, xi=[])


def test_generator_check_reports_each_violation():
    M = np.array([[-1.0, -0.5], [1.0, 0.2]])
    check = validate_generator(M)
    assert not check.passed
    assert any("negative rate" in v for v in check.violations)
    assert any("column 1" in v for v in check.violations)
    assert validate_generator(np.array([[-1.0, 2.0], [1.0, -2.0]])).passed
