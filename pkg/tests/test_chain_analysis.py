import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import solve_ivp

from chain_analysis import (analyze_policy, closed_loop_generator, mean_dynamics, sampling_frequencies,
                            stationary_distribution)
from chain_model import build_matrices, spec_from_rates
from conftest import two_tank_spec
from errors import GeneratorViolationError, InvalidSpecError, NonErgodicError
from models import StationaryPolicy
from policy_solver import solve_stationary


def _frequencies(xi):
    mats = build_matrices(two_tank_spec(xi))
    return analyze_policy(mats, solve_stationary(mats)).frequency


def test_closed_loop_is_a_generator(tank_mats, tank_policy):
    M = closed_loop_generator(tank_mats, tank_policy)
    npt.assert_allclose(M.sum(axis=0), 0.0, atol=1e-12)
    assert (M - np.diag(np.diag(M))).min() >= 0


def test_two_tank_frequencies(tank_mats, tank_policy):
    report = analyze_policy(tank_mats, tank_policy)
    npt.assert_allclose(report.frequency, [0.66, 0.83], atol=0.01)
    assert report.stationary.sum() == pytest.approx(1.0)
    npt.assert_allclose(report.mean_gap, 1.0 / report.frequency)


@pytest.mark.parametrize("xi1, expected", [
    (0.1, [0.8040, 0.8040]),
    (0.5, [0.6577, 0.8279]),
    (1.0, [0.4656, 0.8559]),
    (2.0, [0.0451, 0.9045]),
])
def test_frequency_table(xi1, expected):
    npt.assert_allclose(_frequencies([xi1, 0.1]), expected, atol=2e-3)


def test_raising_a_cost_shifts_the_channel():
    low, high = _frequencies([0.5, 0.1]), _frequencies([0.8, 0.1])
    assert high[0] < low[0]
    assert high[1] >= low[1]


def test_two_state_chain_without_cost():
    mats = build_matrices(spec_from_rates(sample_rate=10.0, release_rate=1.0, xi=[0.0]))
    report = analyze_policy(mats, solve_stationary(mats))
    npt.assert_allclose(report.frequency, [10.0 / 11.0], rtol=1e-10)
    npt.assert_allclose(report.stationary, [10.0 / 11.0, 1.0 / 11.0], rtol=1e-10)


def test_free_chain_is_irreducible():
    mats = build_matrices(spec_from_rates(1.0, 10.0, xi=[0.0, 0.0]))
    p = analyze_policy(mats, solve_stationary(mats)).stationary
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p > 0)


def test_disconnected_generator_is_not_ergodic():
    with pytest.raises(NonErgodicError):
        stationary_distribution(np.zeros((3, 3)))


def test_negative_closed_loop_rate_rejected(tank_mats, tank_policy):
    K = tank_policy.K.copy()
    K[1, 2] = -5.0
    bad = StationaryPolicy(k0=tank_policy.k0, rho=tank_policy.rho, K=K, eff_rates=tank_policy.eff_rates)
    with pytest.raises(GeneratorViolationError) as info:
        closed_loop_generator(tank_mats, bad)
    assert info.value.violations


def test_mean_dynamics_match_ode_without_feedback_gain():
    spec = spec_from_rates(1.0, 10.0, xi=[0.5, 0.1], alpha=np.zeros((4, 4)))
    mats = build_matrices(spec)
    policy = solve_stationary(mats)
    M = closed_loop_generator(mats, policy)
    npt.assert_allclose(M, mats.A)

    p0 = np.array([0.0, 0.0, 1.0])
    times = np.array([0.1, 0.5, 2.0])
    oracle = solve_ivp(lambda t, p: M @ p, (0.0, 2.0), p0, t_eval=times, rtol=1e-11, atol=1e-13)
    npt.assert_allclose(mean_dynamics(M, p0, times), oracle.y.T, atol=1e-8)


def test_mean_dynamics_converge_to_stationary(tank_mats, tank_policy):
    M = closed_loop_generator(tank_mats, tank_policy)
    p_inf = stationary_distribution(M)
    late = mean_dynamics(M, np.array([1.0, 0.0, 0.0]), [50.0])[0]
    npt.assert_allclose(late, p_inf, atol=1e-10)


def test_frequencies_are_idle_exit_flows(tank_mats, tank_policy):
    p = np.array([0.2, 0.3, 0.5])
    f = sampling_frequencies(tank_mats.spec, tank_mats, tank_policy, p)
    npt.assert_allclose(f, tank_policy.eff_rates[[1, 3], 2] * 0.5)


def test_frequencies_reject_a_mismatched_chain(tank_mats, tank_policy):
    wider = spec_from_rates(1.0, 10.0, [0.5, 0.1, 0.2])
    with pytest.raises(InvalidSpecError):
        sampling_frequencies(wider, tank_mats, tank_policy, np.array([0.2, 0.3, 0.5]))
    with pytest.raises(InvalidSpecError):
        sampling_frequencies(tank_mats.spec, tank_mats, tank_policy, np.array([0.5, 0.5]))


def test_single_sensor_frequency_is_renewal_rate():
    sample, release = 2.0, 5.0
    mats = build_matrices(spec_from_rates(sample, release, [0.3]))
    policy = StationaryPolicy(k0=np.zeros(2), rho=0.0, K=np.zeros((2, 2)),
                              eff_rates=np.array([[release, 0.0], [0.0, sample]]))
    p_inf = stationary_distribution(closed_loop_generator(mats, policy))
    npt.assert_allclose(p_inf, [sample / (sample + release), release / (sample + release)])
    f = sampling_frequencies(mats.spec, mats, policy, p_inf)
    npt.assert_allclose(f, [sample * release / (sample + release)])
