import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from errors import InvalidSpecError, NumericalError
from models import ScalarPlant
from plant_models import (discretize_linear, exact_scalar_step, exact_vector_step, linear_plant, measure, psd_sqrt,
                          time_grid, two_tank_matrix, water_tank_gamma)

TOP = (0.20, 1.00, 0.40)
BOTTOM = (0.20, 1.00, 0.40)


def test_tank_rates():
    assert water_tank_gamma(0.20, 1.00, 0.40, 9.80) == pytest.approx(0.7)
    assert water_tank_gamma(0.10, 1.00, 0.54, 9.80) == pytest.approx(0.30, abs=0.005)
    with pytest.raises(InvalidSpecError):
        water_tank_gamma(0.1, 1.0, 0.0)


def test_two_tank_matrix_drains_top_into_bottom():
    A = two_tank_matrix(TOP, BOTTOM)
    npt.assert_allclose(A, [[-0.7, 0.0], [0.7, -0.7]])
    plant = linear_plant(A)
    assert plant.lambda_bar == pytest.approx(-0.7)
    npt.assert_array_equal(plant.H, np.eye(2))
    npt.assert_array_equal(plant.R, np.zeros((2, 2)))


def test_unstable_plant_rejected():
    with pytest.raises(InvalidSpecError):
        linear_plant([[0.1, 0.0], [0.0, -1.0]])
    plant = linear_plant([[0.1, 0.0], [0.0, -1.0]], require_stable=False)
    assert plant.lambda_bar == pytest.approx(0.2)


@pytest.mark.parametrize("kwargs", [
    {"A": [[-1.0, 0.0, 0.0]]},
    {"A": -np.eye(2), "R": [[1.0, 2.0], [0.0, 1.0]]},
    {"A": -np.eye(2), "R": -np.eye(2)},
    {"A": -np.eye(2), "C": [[1.0, 0.0, 0.0]]},
])
def test_malformed_linear_plants(kwargs):
    with pytest.raises(InvalidSpecError):
        linear_plant(**kwargs)


def test_scalar_plant_validates_itself():
    with pytest.raises(InvalidSpecError):
        ScalarPlant(gamma=0.0)
    with pytest.raises(InvalidSpecError):
        ScalarPlant(gamma=1.0, sigma=-1.0)


def test_process_noise_matches_quadrature():
    plant = linear_plant(two_tank_matrix(TOP, (0.10, 1.00, 0.54)), H=[[1.0, 0.2], [0.0, 0.5]])
    dt = 0.7
    step = discretize_linear(plant, dt)
    HH = plant.H @ plant.H.T

    def integrand(s):
        E = expm(plant.A * s)
        return E @ HH @ E.T

    Q, _ = quad_vec(integrand, 0.0, dt, epsabs=1e-13, epsrel=1e-12)
    npt.assert_allclose(step.F, expm(plant.A * dt), atol=1e-12)
    npt.assert_allclose(step.Q, Q, atol=1e-8)


def test_transitions_compose():
    plant = linear_plant(two_tank_matrix(TOP, BOTTOM))
    a, b, ab = (discretize_linear(plant, h) for h in (0.3, 0.4, 0.7))
    npt.assert_allclose(b.F @ a.F, ab.F, atol=1e-12)
    npt.assert_allclose(b.F @ a.Q @ b.F.T + b.Q, ab.Q, atol=1e-12)


def test_zero_step_is_identity():
    step = discretize_linear(linear_plant(-np.eye(2)), 0.0)
    npt.assert_allclose(step.F, np.eye(2))
    npt.assert_allclose(step.Q, 0.0, atol=1e-15)


def test_scalar_transition_moments():
    plant = ScalarPlant(gamma=0.7, sigma=1.0)
    dt = 0.5
    decay = math.exp(-0.7 * dt)
    assert exact_scalar_step(2.0, dt, plant, 0.0) == pytest.approx(2.0 * decay)
    spread = exact_scalar_step(0.0, dt, plant, 1.0)
    assert spread ** 2 == pytest.approx((1.0 - decay ** 2) / 1.4)


def test_scalar_paths_reach_stationary_variance(rng):
    plant = ScalarPlant(gamma=0.3, sigma=1.0)
    z = np.zeros(200000)
    for _ in range(40):
        z = exact_scalar_step(z, 0.5, plant, rng.standard_normal(z.size))
    assert z.var() == pytest.approx(1.0 / 0.6, rel=0.02)


def test_vector_step_covariance(rng):
    plant = linear_plant(two_tank_matrix(TOP, BOTTOM))
    step = discretize_linear(plant, 0.4)
    root = psd_sqrt(step.Q)
    samples = np.array([exact_vector_step(np.zeros(2), step, rng.standard_normal(2), root) for _ in range(40000)])
    npt.assert_allclose(np.cov(samples.T), step.Q, atol=0.01)


def test_psd_square_root():
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    S = psd_sqrt(M)
    npt.assert_allclose(S @ S.T, M, atol=1e-12)
    singular = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-15]])
    S = psd_sqrt(singular)
    npt.assert_allclose(S @ S.T, singular, atol=1e-12)
    with pytest.raises(NumericalError):
        psd_sqrt(-np.eye(2))


def test_measurements():
    scalar = ScalarPlant(gamma=1.0, eta=0.3)
    assert measure(1.0, 2.0, scalar) == pytest.approx(1.6)
    plant = linear_plant(-np.eye(2), C=[[0.0, 1.0]], R=[[0.09]])
    npt.assert_allclose(measure(np.array([1.0, 2.0]), np.array([1.0]), plant), [2.3])
    with pytest.raises(InvalidSpecError):
        measure(np.array([1.0, 2.0]), np.array([1.0, 1.0]), plant)


def test_time_grid_includes_horizon():
    grid = time_grid(30.0, 0.05)
    assert len(grid) == 601
    assert grid[0] == 0.0 and grid[-1] == 30.0
    with pytest.raises(InvalidSpecError):
        time_grid(1.0, 0.0)
