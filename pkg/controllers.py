"""
Networked controllers driven by randomly scheduled samples

Scalar plants dz = (-gamma z + v) dt + sigma dw are simulated exactly between
breakpoints (grid points, samples, pulse ends): the OU transition plus the
closed-form response to the kernel's deterministic forcing.
"""

import logging
import math
from typing import List, Optional, Sequence, Union

import numpy as np

from errors import BoundDivergesError, InvalidSpecError
from estimators import decay_factor, bound_scalar_estimation
from monte_carlo import as_generator
from models import (BoundRegime, ClosedLoopPath, ControllerKind, ControllerSpec, EstimationBound,
                    ScalarPlant, StepDisturbance)
from plant_models import exact_scalar_step, measure, time_grid

logger = logging.getLogger(__name__)

EVENT, GRID = 0, 1


def validate_controller(controller: ControllerSpec, gamma: Optional[float] = None):
    kind = controller.kind
    if kind == ControllerKind.PULSE and not (controller.rho and controller.rho > 0):
        raise InvalidSpecError(f"pulse controller needs rho > 0, got {controller.rho}")
    if kind == ControllerKind.EXPONENTIAL:
        if not (controller.theta and controller.theta > 0):
            raise InvalidSpecError(f"exponential controller needs theta > 0, got {controller.theta}")
        if gamma is not None and math.isclose(controller.theta, gamma):
            raise InvalidSpecError(f"theta must differ from gamma ({gamma})")
    if kind == ControllerKind.PI and (controller.kp is None or controller.ki is None):
        raise InvalidSpecError("PI controller needs kp and ki")


def pulse_control(y: float, t_since: float, gap: float, gamma: float, rho: float) -> float:
    """Constant pulse on [0, rho] after a sample that steers the sampled state to zero, cut short by the next one"""
    if rho <= 0:
        raise InvalidSpecError(f"rho must be positive, got {rho}")
    if t_since <= rho and t_since <= gap:
        decay = math.exp(-gamma * rho)
        return -y * gamma * decay / (1.0 - decay)
    return 0.0


def exponential_control(y: float, t_since: float, gamma: float, theta: float) -> float:
    """Input that makes the sampled state decay as exp(-theta t)"""
    if math.isclose(theta, gamma):
        raise InvalidSpecError(f"theta must differ from gamma ({gamma})")
    return (gamma - theta) * y * math.exp(-theta * t_since)


def bound_impulsive(gamma: float, sigma: float, eta: float, f: float) -> EstimationBound:
    # the reset state evolves exactly like the predictor's estimation error
    return bound_scalar_estimation(gamma, sigma, eta, f)


def bound_pulse(gamma: float, sigma: float, eta: float, f: float, rho: float, p_lt_rho: float) -> EstimationBound:
    if p_lt_rho >= 1:
        raise BoundDivergesError(f"P(gap < rho) = {p_lt_rho} leaves no margin")
    decay = decay_factor(2.0 * gamma, f)
    value = ((sigma ** 2 / (2.0 * gamma)) * (1.0 - decay) + eta ** 2 * math.exp(-2.0 * gamma * rho)) / (1.0 - p_lt_rho)
    return EstimationBound(value=value, regime=BoundRegime.PULSE,
                           inputs={"gamma": gamma, "sigma": sigma, "eta": eta, "f": f, "rho": rho,
                                   "p_lt_rho": p_lt_rho})


def bound_exponential(gamma: float, sigma: float, eta: float, f: float, exp_moment: float) -> EstimationBound:
    if exp_moment >= 1:
        raise BoundDivergesError(f"E{{exp(-2 theta gap)}} = {exp_moment} leaves no margin")
    decay = decay_factor(2.0 * gamma, f)
    value = (eta ** 2 + (sigma ** 2 / (2.0 * gamma)) * (1.0 - decay)) / (1.0 - exp_moment)
    return EstimationBound(value=value, regime=BoundRegime.EXPONENTIAL,
                           inputs={"gamma": gamma, "sigma": sigma, "eta": eta, "f": f, "exp_moment": exp_moment})


def merge_breakpoints(grid: np.ndarray, extra: Sequence[np.ndarray], kinds: Sequence[int]):
    """Sort grid and extra instants together; at ties lower kinds come first"""
    times = np.concatenate([grid] + list(extra))
    labels = np.concatenate([np.full(len(grid), GRID)] + [np.full(len(e), k) for e, k in zip(extra, kinds)])
    order = np.lexsort((labels, times))
    return times[order], labels[order]


def simulate_closed_loop(plant: ScalarPlant, controller: ControllerSpec, events: np.ndarray, horizon: float,
                         grid_dt: float, seed: Union[int, np.random.Generator]) -> ClosedLoopPath:
    """
    Exact closed-loop simulation of a scalar plant under one sampled kernel

    Args:
        plant: scalar OU plant
        controller: impulsive, pulse or exponential kernel
        events: sampling instants of this plant's sensor
        horizon: simulation end time
        grid_dt: spacing of the output grid
        seed: integer seed or generator
    """
    validate_controller(controller, plant.gamma)
    if controller.kind == ControllerKind.PI:
        raise InvalidSpecError("PI control runs on the coupled ring, use simulate_coupled_pi")
    rng = as_generator(seed)
    kind = controller.kind
    events = np.asarray(events, dtype=float)
    events = events[(events >= 0) & (events <= horizon)]
    grid = time_grid(horizon, grid_dt)

    extra, labels = [events], [EVENT]
    if kind == ControllerKind.PULSE:
        nxt = np.append(events[1:], np.inf)
        ends = events + controller.rho
        extra.append(ends[(ends < nxt) & (ends <= horizon)])
        labels.append(2)
    times, kinds = merge_breakpoints(grid, extra, labels)
    process_noise = rng.standard_normal(len(times))
    sample_noise = rng.standard_normal(len(events))

    z, t = 0.0, 0.0
    y, sampled_at, gap = None, 0.0, math.inf
    sample_idx = 0
    out_t, out_z, out_v, out_grid = [], [], [], []
    for idx in range(len(times)):
        tau, label = times[idx], kinds[idx]
        h = tau - t
        if h > 0:
            z_next = exact_scalar_step(z, h, plant, process_noise[idx])
            if y is not None and kind == ControllerKind.PULSE:
                amp = pulse_control(y, 0.5 * (t + tau) - sampled_at, gap, plant.gamma, controller.rho)
                z_next += (amp / plant.gamma) * (1.0 - math.exp(-plant.gamma * h))
            elif y is not None and kind == ControllerKind.EXPONENTIAL:
                s0 = t - sampled_at
                z_next += y * math.exp(-controller.theta * s0) * (
                    math.exp(-controller.theta * h) - math.exp(-plant.gamma * h))
            z, t = z_next, tau

        if label == EVENT:
            y = measure(z, sample_noise[sample_idx], plant)
            sample_idx += 1
            sampled_at = tau
            gap = events[sample_idx] - tau if sample_idx < len(events) else math.inf
            if kind == ControllerKind.IMPULSIVE:
                v = -y
                z = z + v
            else:
                v = _kernel_value(controller, plant, y, 0.0, gap)
        elif label == GRID:
            v = 0.0 if y is None or kind == ControllerKind.IMPULSIVE else \
                _kernel_value(controller, plant, y, tau - sampled_at, gap)
        else:
            continue
        out_t.append(tau)
        out_z.append(z)
        out_v.append(v)
        out_grid.append(label == GRID)

    return ClosedLoopPath(times=np.asarray(out_t), state=np.asarray(out_z), control=np.asarray(out_v),
                          on_grid=np.asarray(out_grid, dtype=bool))


def _kernel_value(controller: ControllerSpec, plant: ScalarPlant, y: float, t_since: float, gap: float) -> float:
    if controller.kind == ControllerKind.PULSE:
        return pulse_control(y, t_since, gap, plant.gamma, controller.rho)
    return exponential_control(y, t_since, plant.gamma, controller.theta)


def simulate_impulsive(plant: ScalarPlant, events: np.ndarray, horizon: float, grid_dt: float,
                       seed: Union[int, np.random.Generator]) -> ClosedLoopPath:
    """Reset the state to z - y at every sample"""
    return simulate_closed_loop(plant, ControllerSpec(kind=ControllerKind.IMPULSIVE), events, horizon,
                                grid_dt, seed)


def ring_coupling(L: int, coupling: float) -> np.ndarray:
    """Diffusive coupling with both ring neighbours"""
    M = np.zeros((L, L))
    for l in range(L):
        for nb in ((l - 1) % L, (l + 1) % L):
            if nb != l:
                M[l, nb] += coupling
                M[l, l] -= coupling
    return M


def simulate_coupled_pi(events: List[np.ndarray], horizon: float, grid_dt: float, controller: ControllerSpec,
                        coupling: float = 0.1,
                        disturbances: Sequence[StepDisturbance] = ()) -> ClosedLoopPath:
    """
    Deterministic ring of integrators under sampled PI control

    Each subsystem holds its last sampled state h and applies
    v = -kp h - ki * integral(h). The integral of a held value is exact;
    the coupled states are advanced with one RK4 step per breakpoint
    interval. Returns grid rows only, state and control shaped (grid, L).
    """
    validate_controller(controller)
    L = len(events)
    M = ring_coupling(L, coupling)
    kp, ki = controller.kp, controller.ki
    grid = time_grid(horizon, grid_dt)

    event_times = [np.asarray(e, dtype=float) for e in events]
    flat = np.concatenate(event_times) if L else np.zeros(0)
    owners = np.concatenate([np.full(len(e), l) for l, e in enumerate(event_times)]) if L else np.zeros(0, int)
    keep = (flat >= 0) & (flat <= horizon)
    flat, owners = flat[keep], owners[keep]
    starts = np.array([d.start for d in disturbances if 0 <= d.start <= horizon], dtype=float)

    times = np.concatenate([grid, flat, starts])
    labels = np.concatenate([np.full(len(grid), GRID), np.full(len(flat), EVENT), np.full(len(starts), 2)])
    who = np.concatenate([np.full(len(grid), -1), owners, np.full(len(starts), -1)])
    order = np.lexsort((labels, times))

    def forcing(t):
        w = np.zeros(L)
        for d in disturbances:
            if t >= d.start:
                w[d.sensor] += d.amplitude
        return w

    z, integ, held = np.zeros(L), np.zeros(L), np.zeros(L)
    t = 0.0
    states, controls = [], []
    for idx in order:
        tau = times[idx]
        h = tau - t
        if h > 0:
            w = forcing(t + 0.5 * h)
            base = -kp * held - ki * integ + w

            def rhs(s, x):
                return M @ x + base - ki * held * s

            k1 = rhs(0.0, z)
            k2 = rhs(0.5 * h, z + 0.5 * h * k1)
            k3 = rhs(0.5 * h, z + 0.5 * h * k2)
            k4 = rhs(h, z + h * k3)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            integ = integ + held * h
            t = tau
        if labels[idx] == EVENT:
            held[who[idx]] = z[who[idx]]
        elif labels[idx] == GRID:
            states.append(z.copy())
            controls.append(-kp * held - ki * integ)

    logger.debug(f"Coupled PI run: {len(flat)} samples across {L} subsystems")
    return ClosedLoopPath(times=grid, state=np.asarray(states), control=np.asarray(controls),
                          on_grid=np.ones(len(grid), dtype=bool))
