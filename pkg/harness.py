"""
Scenario orchestration

Solves the scheduling policy (once per phase when sensors join or leave),
runs Monte Carlo replicates of the networked estimator or controller,
compares the pointwise mean-square error with the analytic bounds and
writes the CSV/JSON artifacts.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import report_generator
from chain_analysis import analyze_policy
from chain_model import build_matrices, spec_from_rates
from chain_sim import intersample_statistics, simulate_chain
from controllers import (EVENT, bound_exponential, bound_impulsive, bound_pulse, merge_breakpoints,
                         simulate_closed_loop, simulate_coupled_pi)
from errors import BoundDivergesError, InsufficientDataError, ScenarioError, SchedulingError
from estimators import (bound_scalar_estimation, bound_state_estimation, kalman_intersample_bound, kalman_prior,
                        kalman_step, predictor_estimate)
from models import (BoundReport, ChainMatrices, ChainSpec, ControllerKind, ErrorCurve, FiniteHorizonPolicy,
                    FrequencyReport, LinearPlant, MonteCarloSummary, SamplingTrace, ScalarPlant, StationaryPolicy)
from monte_carlo import make_rng, run_replicates, summarize
from plant_models import discretize_linear, exact_scalar_step, exact_vector_step, measure, psd_sqrt, time_grid
from policy_solver import solve_k_ode, solve_stationary
from scenario_config import PhaseConfig, ScenarioConfig, ScenarioKind

logger = logging.getLogger(__name__)

RUN_LOG = "run.log"
RUN_LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
SE_SLACK = 3.0
STATISTICS_STREAM = 2 ** 32 - 1


@dataclass
class SolvedPhase:
    start: float
    end: float
    active: np.ndarray
    spec: ChainSpec
    mats: ChainMatrices
    policy: StationaryPolicy
    report: FrequencyReport


def default_phases(config: ScenarioConfig) -> List[PhaseConfig]:
    if config.phases:
        return config.phases
    return [PhaseConfig(start=0.0, end=config.horizon, active=np.arange(config.sensors), xi=config.xi)]


def solve_phase(config: ScenarioConfig, phase: PhaseConfig) -> SolvedPhase:
    """Build and solve the chain restricted to the phase's active sensors"""
    active = phase.active
    alpha = None
    if config.alpha is not None:
        counters = np.ravel(np.column_stack([2 * active, 2 * active + 1]))
        alpha = config.alpha[np.ix_(counters, counters)]
    spec = spec_from_rates(config.sample_rate[active], config.release_rate[active], phase.xi, alpha)
    mats = build_matrices(spec)
    policy = solve_stationary(mats, tol=config.solver_tol, max_iter=config.solver_max_iter)
    report = analyze_policy(mats, policy)
    return SolvedPhase(start=phase.start, end=phase.end, active=active, spec=spec, mats=mats, policy=policy,
                       report=report)


def build_phase_plan(config: ScenarioConfig) -> List[SolvedPhase]:
    plan = [solve_phase(config, phase) for phase in default_phases(config)]
    logger.info(f"Solved {len(plan)} phase(s) for scenario {config.name}")
    return plan


def finite_horizon_policies(config: ScenarioConfig, plan: List[SolvedPhase], T: float) -> List[FiniteHorizonPolicy]:
    """Backward value trajectories on [0, T] for every phase's chain, zero terminal value"""
    policies = [solve_k_ode(phase.mats, T, steps=config.ode_steps) for phase in plan]
    logger.info(f"Solved {len(policies)} finite-horizon policies over T={T} with {config.ode_steps} steps")
    return policies


def phase_frequencies(plan: List[SolvedPhase], L: int) -> np.ndarray:
    """Analytic frequency of every sensor in every phase; NaN where inactive"""
    table = np.full((len(plan), L), np.nan)
    for p, phase in enumerate(plan):
        table[p, phase.active] = phase.report.frequency
    return table


def simulate_schedule(plan: List[SolvedPhase], L: int, rng: np.random.Generator) -> SamplingTrace:
    """
    Simulate the phase-wise optimal chain on the whole horizon

    At a phase switch a sensor that stays active keeps the channel; the
    channel held by a removed sensor falls back to idle.
    """
    events: List[List[np.ndarray]] = [[] for _ in range(L)]
    path_times, path_states = [], []
    holder: Optional[int] = None
    for phase in plan:
        idle = len(phase.active)
        local = {int(g): i for i, g in enumerate(phase.active)}
        x0 = local.get(holder, idle) if holder is not None else idle
        trace = simulate_chain(phase.policy, x0, phase.end - phase.start, rng)
        for i, g in enumerate(phase.active):
            events[g].append(trace.events[i] + phase.start)
        states = np.where(trace.path_states == idle, L, phase.active[np.minimum(trace.path_states, idle - 1)])
        path_times.append(trace.path_times + phase.start)
        path_states.append(states)
        last = int(trace.path_states[-1])
        holder = None if last == idle else int(phase.active[last])
    horizon = plan[-1].end
    return SamplingTrace(horizon=horizon,
                         events=[np.concatenate(e) if e else np.zeros(0) for e in events],
                         path_times=np.concatenate(path_times), path_states=np.concatenate(path_states))


def periodic_schedule(frequencies: np.ndarray, T: float, offsets: Optional[np.ndarray] = None) -> SamplingTrace:
    """Deterministic samples at offset + k / f for k >= 0 up to T"""
    frequencies = np.asarray(frequencies, dtype=float)
    offsets = np.zeros(len(frequencies)) if offsets is None else np.asarray(offsets, dtype=float)
    events = []
    for f, offset in zip(frequencies, offsets):
        if not f > 0 or offset > T:
            events.append(np.zeros(0))
            continue
        count = int(math.floor((T - offset) * f + 1e-9)) + 1
        times = offset + np.arange(count) / f
        events.append(times[times <= T])
    return SamplingTrace(horizon=T, events=events)


def phase_event_rates(trace: SamplingTrace, plan: List[SolvedPhase]) -> np.ndarray:
    """Empirical sampling rate of every sensor within every phase"""
    rates = np.zeros((len(plan), trace.L))
    for p, phase in enumerate(plan):
        width = phase.end - phase.start
        for l, times in enumerate(trace.events):
            rates[p, l] = np.count_nonzero((times > phase.start) & (times <= phase.end)) / width
    return rates


def scalar_estimation_errors(plant: ScalarPlant, events: np.ndarray, grid: np.ndarray,
                             rng: np.random.Generator) -> np.ndarray:
    """Squared error of the open-loop predictor on the grid, one exact plant path"""
    times, labels = merge_breakpoints(grid, [events], [EVENT])
    noise = rng.standard_normal(len(times))
    sample_noise = rng.standard_normal(len(events))
    z, t = 0.0, 0.0
    last_y, last_t = 0.0, 0.0
    out = np.empty(len(grid))
    g = s = 0
    for idx in range(len(times)):
        tau = times[idx]
        if tau > t:
            z = exact_scalar_step(z, tau - t, plant, noise[idx])
            t = tau
        if labels[idx] == EVENT:
            last_y, last_t = measure(z, sample_noise[s], plant), tau
            s += 1
        else:
            out[g] = (z - predictor_estimate(last_y, tau - last_t, plant)) ** 2
            g += 1
    return out


def vector_estimation_errors(plant: LinearPlant, events: np.ndarray, grid: np.ndarray, rng: np.random.Generator,
                             kalman: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Squared error norm on the grid for the predictor or the Kalman estimator

    Returns (errors, conditional bounds); the bounds are NaN for the
    predictor. The estimate is propagated with the same transitions as the
    plant, which equals predicting from the last update in one step.
    """
    times, labels = merge_breakpoints(grid, [events], [EVENT])
    d, p = plant.dim, plant.C.shape[0]
    noise = rng.standard_normal((len(times), d))
    sample_noise = rng.standard_normal((len(events), p))
    cache: Dict[float, tuple] = {}

    def transition(h: float):
        if h not in cache:
            step = discretize_linear(plant, h)
            cache[h] = (step, psd_sqrt(step.Q))
        return cache[h]

    z, z_hat, t = np.zeros(d), np.zeros(d), 0.0
    state = kalman_prior(plant) if kalman else None
    errors, bounds = np.empty(len(grid)), np.full(len(grid), np.nan)
    g = s = 0
    for idx in range(len(times)):
        tau = times[idx]
        if tau > t:
            step, root = transition(tau - t)
            z = exact_vector_step(z, step, noise[idx], root)
            z_hat = predictor_estimate(z_hat, tau - t, plant, step=step)
            t = tau
        if labels[idx] == EVENT:
            y = measure(z, sample_noise[s], plant)
            if kalman:
                state = kalman_step(state, transition(tau - state.t)[0], plant.C, plant.R, y)
                z_hat = state.x_hat.copy()
            else:
                z_hat = np.asarray(y, dtype=float)
            s += 1
        else:
            errors[g] = float(np.sum((z - z_hat) ** 2))
            if kalman:
                previous = events[s - 1] if s > 0 else 0.0
                gap = events[s] - previous if s < len(events) else math.inf
                bounds[g] = kalman_intersample_bound(float(np.trace(state.P)), plant, gap).value
            g += 1
    return errors, bounds


def check_mask(plan: List[SolvedPhase], grid: np.ndarray, L: int, warmup: Optional[float]) -> np.ndarray:
    """Grid points per sensor where the bound is enforced (past each phase's first-sample transient)"""
    mask = np.zeros((L, len(grid)), dtype=bool)
    for phase in plan:
        for i, g in enumerate(phase.active):
            f = phase.report.frequency[i]
            window = warmup if warmup is not None else (2.0 / f if f > 0 else math.inf)
            inside = (grid >= phase.start + window) & (grid <= phase.end)
            mask[g] |= inside
    return mask


def build_curves(label: str, summary: MonteCarloSummary, grid: np.ndarray, bounds: np.ndarray,
                 mask: np.ndarray) -> List[ErrorCurve]:
    """Split an (L x grid) Monte Carlo summary into per-sensor curves and count violations"""
    L = bounds.shape[0]
    shape = (L, len(grid))
    mean, se, ci = (np.reshape(a, shape) for a in (summary.mean, summary.se, summary.ci_half))
    curves = []
    for l in range(L):
        slack = np.nan_to_num(se[l], nan=0.0)
        with np.errstate(invalid="ignore"):
            exceed = mask[l] & np.isfinite(bounds[l]) & (mean[l] > bounds[l] + SE_SLACK * slack)
        first = grid[mask[l]][0] if mask[l].any() else math.inf
        curve = ErrorCurve(sensor=l, label=label, times=grid, mean_sq=mean[l], ci_half=ci[l], se=se[l],
                           bound=bounds[l], warmup=float(first), violations=int(exceed.sum()))
        if curve.violations:
            logger.warning(f"{label}: sensor {l} exceeds its bound at {curve.violations} grid point(s)")
        curves.append(curve)
    return curves


def _frequency_summary(plan: List[SolvedPhase], rates: MonteCarloSummary, L: int) -> Dict[str, Dict]:
    P = len(plan)
    analytic = phase_frequencies(plan, L)
    empirical = np.reshape(rates.mean, (P, L))
    se = np.reshape(rates.se, (P, L))
    table = {}
    for p in range(P):
        active = ~np.isnan(analytic[p])
        table[f"phase{p}"] = {
            "start": plan[p].start,
            "end": plan[p].end,
            "sensors": np.flatnonzero(active).tolist(),
            "analytic": analytic[p, active].tolist(),
            "empirical": empirical[p, active].tolist(),
            "se": se[p, active].tolist(),
        }
    return table


def _split(values: np.ndarray, sizes: List[int]) -> List[np.ndarray]:
    return np.split(values, np.cumsum(sizes)[:-1], axis=1)


def _run_estimation(config: ScenarioConfig, plan: List[SolvedPhase], out_dir: str) -> BoundReport:
    L, T = config.sensors, config.horizon
    grid = time_grid(T, config.grid_dt)
    G, P = len(grid), len(plan)
    kind = config.kind
    kalman = kind == ScenarioKind.ESTIMATION_KALMAN

    def simulate_errors(trace: SamplingTrace, rng: np.random.Generator) -> List[np.ndarray]:
        rows, bound_rows = [], []
        for l, plant in enumerate(config.plants):
            if kind.vector:
                err, bnd = vector_estimation_errors(plant, trace.events[l], grid, rng, kalman=kalman)
                if kalman:
                    bound_rows.append(bnd)
            else:
                err = scalar_estimation_errors(plant, trace.events[l], grid, rng)
            rows.append(err)
        return rows + bound_rows

    def runner(rng):
        trace = simulate_schedule(plan, L, rng)
        return np.concatenate(simulate_errors(trace, rng) + [phase_event_rates(trace, plan).ravel()])

    sizes = [L * G * (2 if kalman else 1), P * L]
    values = run_replicates(runner, config.replicates, config.seed, config.jobs)
    errors, rates = _split(values, sizes)
    if kalman:
        errors, cond = _split(errors, [L * G, L * G])
        bounds = np.reshape(summarize(cond).mean, (L, G))
    else:
        bounds = _analytic_bound_curves(config, plan, grid)

    mask = check_mask(plan, grid, L, config.warmup)
    curves = build_curves("optimal", summarize(errors), grid, bounds, mask)
    report = BoundReport(scenario=config.name, passed=all(c.violations == 0 for c in curves),
                         frequencies=_frequency_summary(plan, summarize(rates), L), curves=curves,
                         bounds=_bound_table(config, plan))
    report.artifacts.append(report_generator.write_error_curves(out_dir, curves, "optimal"))

    if config.periodic_baseline:
        baseline = baseline_frequencies(config, plan)
        schedule = periodic_schedule(baseline, T, config.periodic_offsets)
        periodic = run_replicates(lambda rng: np.concatenate(simulate_errors(schedule, rng)[:L]),
                                  config.replicates, config.seed, config.jobs)
        flat = np.tile(np.nan, (L, G))
        report.curves += build_curves("periodic", summarize(periodic), grid, flat, mask)
        report.artifacts.append(report_generator.write_error_curves(out_dir, report.curves[-L:], "periodic"))
        report.bounds.update({f"periodic_frequency/sensor{l}": float(f) for l, f in enumerate(baseline)})
    report.artifacts += report_generator.write_frequency_tables(out_dir, report.frequencies)
    return report


def baseline_frequencies(config: ScenarioConfig, plan: List[SolvedPhase]) -> np.ndarray:
    """
    Frequencies for the periodic comparison schedule

    With a single phase these are the optimal policy's frequencies. With
    several phases the schedule is fixed in advance, so every sensor gets
    its worst-case frequency: all sensors active at their lowest cost.
    """
    if len(plan) == 1:
        return plan[0].report.frequency.copy()
    costs = np.full(config.sensors, min(float(np.min(p.xi)) for p in config.phases))
    worst = solve_phase(config, PhaseConfig(start=0.0, end=config.horizon, active=np.arange(config.sensors),
                                            xi=costs))
    return worst.report.frequency


def _analytic_bound_curves(config: ScenarioConfig, plan: List[SolvedPhase], grid: np.ndarray) -> np.ndarray:
    """Piecewise-constant analytic bound per sensor; NaN while a sensor is inactive"""
    L = config.sensors
    curves = np.full((L, len(grid)), np.nan)
    for phase in plan:
        inside = (grid >= phase.start) & (grid <= phase.end)
        for i, g in enumerate(phase.active):
            f = float(phase.report.frequency[i])
            plant = config.plants[g]
            if isinstance(plant, ScalarPlant):
                value = bound_scalar_estimation(plant.gamma, plant.sigma, plant.eta, f).value
            else:
                value = bound_state_estimation(plant, f).value
            curves[g, inside] = value
    return curves


def _bound_table(config: ScenarioConfig, plan: List[SolvedPhase]) -> Dict[str, float]:
    return {f"{row['phase']}/sensor{row['sensor']}/{row['kind']}": row["value"]
            for row in analytic_bounds(config, plan)}


def _intersample(config: ScenarioConfig, phase: SolvedPhase, index: int) -> SamplingTrace:
    """One long run of a phase's chain for gap statistics"""
    rng = make_rng(config.seed, STATISTICS_STREAM - index)
    return simulate_chain(phase.policy, phase.spec.idle, config.statistics_horizon, rng)


def analytic_bounds(config: ScenarioConfig, plan: List[SolvedPhase]) -> List[Dict]:
    """Every analytic bound the scenario's plants and controllers admit, one row each"""
    rows = []
    for p, phase in enumerate(plan):
        long_run = None
        for i, g in enumerate(phase.active):
            f = float(phase.report.frequency[i])
            base = {"phase": f"phase{p}", "sensor": int(g), "frequency": f}
            if config.kind == ScenarioKind.COUPLED_PI:
                continue
            plant = config.plants[g]
            if isinstance(plant, LinearPlant):
                for refined in (False, True):
                    b = bound_state_estimation(plant, f, refined=refined)
                    rows.append({**base, "kind": b.regime.value, "value": b.value, "regime": b.regime.value})
                continue
            if config.kind != ScenarioKind.CONTROL_SCALAR:
                b = bound_scalar_estimation(plant.gamma, plant.sigma, plant.eta, f)
                rows.append({**base, "kind": "estimation", "value": b.value, "regime": b.regime.value})
                continue
            for controller in config.controllers:
                if controller.kind == ControllerKind.IMPULSIVE:
                    b = bound_impulsive(plant.gamma, plant.sigma, plant.eta, f)
                else:
                    long_run = long_run or _intersample(config, phase, p)
                    try:
                        stats = intersample_statistics(long_run, i, rho=controller.rho or 0.0,
                                                       theta=controller.theta or 0.0)
                        if controller.kind == ControllerKind.PULSE:
                            b = bound_pulse(plant.gamma, plant.sigma, plant.eta, f, controller.rho, stats.p_lt_rho)
                        else:
                            b = bound_exponential(plant.gamma, plant.sigma, plant.eta, f, stats.exp_moment)
                    except (BoundDivergesError, InsufficientDataError) as e:
                        logger.warning(f"No {controller.label} bound for sensor {g}: {e}")
                        rows.append({**base, "kind": controller.label, "value": math.nan, "regime": "none"})
                        continue
                rows.append({**base, "kind": controller.label, "value": b.value, "regime": b.regime.value})
    return rows


def _run_control(config: ScenarioConfig, plan: List[SolvedPhase], out_dir: str) -> BoundReport:
    L, T = config.sensors, config.horizon
    grid = time_grid(T, config.grid_dt)
    G, P = len(grid), len(plan)
    controllers = config.controllers

    def runner(rng):
        trace = simulate_schedule(plan, L, rng)
        # one noise stream per plant, replayed for every controller
        seeds = rng.integers(0, 2 ** 63 - 1, size=L)
        rows = []
        for controller in controllers:
            for l, plant in enumerate(config.plants):
                path = simulate_closed_loop(plant, controller, trace.events[l], T, config.grid_dt,
                                            make_rng(int(seeds[l])))
                rows.append(path.state[path.on_grid] ** 2)
        return np.concatenate(rows + [phase_event_rates(trace, plan).ravel()])

    values = run_replicates(runner, config.replicates, config.seed, config.jobs)
    parts = _split(values, [L * G] * len(controllers) + [P * L])
    bound_rows = analytic_bounds(config, plan)
    mask = check_mask(plan, grid, L, config.warmup)

    report = BoundReport(scenario=config.name, passed=True,
                         frequencies=_frequency_summary(plan, summarize(parts[-1]), L),
                         bounds={f"{r['phase']}/sensor{r['sensor']}/{r['kind']}": r["value"] for r in bound_rows})
    for controller, part in zip(controllers, parts[:-1]):
        bounds = np.full((L, G), np.nan)
        for r in bound_rows:
            if r["kind"] == controller.label:
                bounds[r["sensor"]] = r["value"]
        curves = build_curves(controller.label, summarize(part), grid, bounds, mask)
        report.curves += curves
        report.artifacts.append(report_generator.write_error_curves(out_dir, curves, controller.label))
    report.passed = all(c.violations == 0 for c in report.curves)
    report.artifacts += report_generator.write_frequency_tables(out_dir, report.frequencies)

    sample = simulate_schedule(plan, L, make_rng(config.seed, 0))
    trajectories = [simulate_closed_loop(config.plants[l], controllers[0], sample.events[l], T, config.grid_dt,
                                         make_rng(config.seed, STATISTICS_STREAM - 1 - l)) for l in range(L)]
    report.artifacts.append(report_generator.write_trajectory(out_dir, trajectories, controllers[0].label))
    return report


def _run_coupled_pi(config: ScenarioConfig, plan: List[SolvedPhase], out_dir: str) -> BoundReport:
    L, T = config.sensors, config.horizon
    grid = time_grid(T, config.grid_dt)
    G, P = len(grid), len(plan)
    controller = config.controllers[0]

    def ring(events):
        return simulate_coupled_pi(events, T, config.grid_dt, controller, config.coupling, config.disturbances)

    def runner(rng):
        trace = simulate_schedule(plan, L, rng)
        path = ring(trace.events)
        return np.concatenate([(path.state ** 2).T.ravel(), phase_event_rates(trace, plan).ravel()])

    values = run_replicates(runner, config.replicates, config.seed, config.jobs)
    states, rates = _split(values, [L * G, P * L])
    no_bound = np.full((L, G), np.nan)
    mask = np.zeros((L, G), dtype=bool)
    curves = build_curves("optimal", summarize(states), grid, no_bound, mask)
    report = BoundReport(scenario=config.name, passed=True, curves=curves,
                         frequencies=_frequency_summary(plan, summarize(rates), L))
    report.artifacts.append(report_generator.write_error_curves(out_dir, curves, "optimal"))

    sample = ring(simulate_schedule(plan, L, make_rng(config.seed, 0)).events)
    report.artifacts.append(report_generator.write_trajectory(out_dir, [sample], controller.label))

    if config.periodic_baseline:
        baseline = baseline_frequencies(config, plan)
        periodic = ring(periodic_schedule(baseline, T, config.periodic_offsets).events)
        deterministic = MonteCarloSummary(mean=(periodic.state ** 2).T.ravel(), variance=np.zeros(L * G),
                                          ci_half=np.zeros(L * G), se=np.zeros(L * G), n=1)
        report.curves += build_curves("periodic", deterministic, grid, no_bound, mask)
        report.artifacts.append(report_generator.write_error_curves(out_dir, report.curves[-L:], "periodic"))
        report.artifacts.append(report_generator.write_trajectory(out_dir, [periodic], "periodic"))
    report.artifacts += report_generator.write_frequency_tables(out_dir, report.frequencies)
    return report


RUNNERS: Dict[ScenarioKind, Callable[[ScenarioConfig, List[SolvedPhase], str], BoundReport]] = {
    ScenarioKind.ESTIMATION_SCALAR: _run_estimation,
    ScenarioKind.ESTIMATION_VECTOR: _run_estimation,
    ScenarioKind.ESTIMATION_KALMAN: _run_estimation,
    ScenarioKind.ADHOC_CHURN: _run_estimation,
    ScenarioKind.CONTROL_SCALAR: _run_control,
    ScenarioKind.COUPLED_PI: _run_coupled_pi,
}


def attach_run_log(out_dir: str) -> logging.Handler:
    handler = logging.FileHandler(os.path.join(out_dir, RUN_LOG), mode="w")
    handler.setFormatter(logging.Formatter(RUN_LOG_FORMAT))
    handler.setLevel(logging.INFO)
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler):
    logging.getLogger().removeHandler(handler)
    handler.close()


def run_scenario(config: ScenarioConfig, out_dir: str) -> BoundReport:
    """
    Run one scenario end to end and write its artifacts to out_dir

    Failures of any module are logged and re-raised as ScenarioError
    carrying the scenario name.
    """
    os.makedirs(out_dir, exist_ok=True)
    handler = attach_run_log(out_dir)
    try:
        logger.info(f"Running scenario {config.name} ({config.kind.value}): N={config.replicates}, "
                    f"T={config.horizon}, seed={config.seed}")
        plan = build_phase_plan(config)
        artifacts = report_generator.write_policy_tables(out_dir, plan, config.sensors)
        report = RUNNERS[config.kind](config, plan, out_dir)
        report.artifacts = artifacts + report.artifacts
        report.artifacts.append(report_generator.write_summary(out_dir, report))
        status = "passed" if report.passed else "FAILED"
        logger.info(f"Scenario {config.name} {status}; artifacts in {out_dir}")
        return report
    except SchedulingError as e:
        logger.error(f"Scenario {config.name} failed: {e}")
        raise ScenarioError(f"scenario {config.name} failed: {e}", scenario=config.name) from e
    except Exception as e:
        logger.exception(f"Scenario {config.name} failed unexpectedly: {e}")
        raise ScenarioError(f"scenario {config.name} failed: {type(e).__name__}: {e}", scenario=config.name) from e
    finally:
        detach_run_log(handler)
