"""
Exact simulation of the controlled sensor-access chain

Jump-by-jump stochastic simulation: exponential holding time at the total
outgoing rate of the current state, then a categorical choice among its
active counters. Randoms are drawn in blocks from one generator.
"""

import bisect
import logging
from typing import List, Optional, Union

import numpy as np

from chain_model import counter_endpoints
from errors import AbsorbingStateError, InsufficientDataError, InvalidSpecError, InvalidStateError
from models import IntersampleStats, SamplingTrace, StationaryPolicy
from monte_carlo import as_generator

logger = logging.getLogger(__name__)

BLOCK = 4096


def simulate_chain(policy: StationaryPolicy, x0: int, T: float,
                   seed: Union[int, np.random.Generator]) -> SamplingTrace:
    """
    Simulate the closed-loop chain on [0, T] starting from state x0

    Sampling events are the idle -> sensor jumps, recorded per sensor.
    Raises AbsorbingStateError when a state with no outgoing rate is entered.
    """
    m, n = policy.eff_rates.shape
    L = m // 2
    if not 0 <= x0 < n:
        raise InvalidStateError(f"initial state {x0} outside 0..{n - 1}")
    if not T > 0:
        raise InvalidSpecError(f"horizon must be positive, got {T}")
    rng = as_generator(seed)

    source, target = counter_endpoints(L)
    next_state: List[np.ndarray] = []
    cumulative: List[List[float]] = []
    totals = np.zeros(n)
    for j in range(n):
        active = np.flatnonzero(source == j)
        rates = np.maximum(policy.eff_rates[active, j], 0.0)
        next_state.append(target[active])
        cumulative.append(list(np.cumsum(rates)))
        totals[j] = rates.sum()

    events: List[List[float]] = [[] for _ in range(L)]
    path_times, path_states = [0.0], [x0]
    t, state = 0.0, x0
    waits = rng.standard_exponential(BLOCK)
    picks = rng.random(BLOCK)
    cursor = 0
    while True:
        total = totals[state]
        if total <= 0:
            logger.error(f"Chain absorbed in state {state} at t={t:.6g}")
            raise AbsorbingStateError(f"state {state} has no outgoing rate", state=state)
        if cursor == BLOCK:
            waits = rng.standard_exponential(BLOCK)
            picks = rng.random(BLOCK)
            cursor = 0
        t += waits[cursor] / total
        if t > T:
            break
        cum = cumulative[state]
        choice = bisect.bisect_right(cum, picks[cursor] * total) if len(cum) > 1 else 0
        choice = min(choice, len(cum) - 1)
        cursor += 1
        new = int(next_state[state][choice])
        if state == L:
            events[new].append(t)
        state = new
        path_times.append(t)
        path_states.append(state)

    logger.debug(f"Simulated {len(path_times) - 1} jumps over T={T}")
    return SamplingTrace(horizon=T, events=[np.asarray(e) for e in events],
                         path_times=np.asarray(path_times), path_states=np.asarray(path_states, dtype=int))


def empirical_frequencies(trace: SamplingTrace) -> np.ndarray:
    return np.array([len(e) for e in trace.events], dtype=float) / trace.horizon


def intersample_statistics(trace: SamplingTrace, sensor: int, rho: float = 0.0,
                           theta: float = 0.0) -> IntersampleStats:
    """Gaps between successive samples of one sensor with P(gap < rho) and E{exp(-2 theta gap)}"""
    times = trace.events[sensor]
    if len(times) < 2:
        raise InsufficientDataError(f"sensor {sensor} has {len(times)} sample(s); need at least 2")
    gaps = np.diff(times)
    return IntersampleStats(gaps=gaps, p_lt_rho=float(np.mean(gaps < rho)),
                            exp_moment=float(np.mean(np.exp(-2.0 * theta * gaps))))


def holding_times(trace: SamplingTrace, state: int) -> np.ndarray:
    """Completed sojourn durations in a state"""
    durations = np.diff(trace.path_times)
    return durations[trace.path_states[:-1] == state]


def empirical_cost(trace: SamplingTrace, policy: StationaryPolicy, xi: np.ndarray) -> float:
    """Realized average cost: sampling charges plus integrated u^T u along the path"""
    T = trace.horizon
    sampling = float(np.dot(xi, [len(e) for e in trace.events]))
    ends = np.append(trace.path_times[1:], T)
    durations = ends - trace.path_times
    effort = np.sum(policy.K ** 2, axis=0)
    control = float(np.dot(effort[trace.path_states], durations))
    return (sampling + control) / T


def occupancy(trace: SamplingTrace, n: Optional[int] = None) -> np.ndarray:
    """Fraction of [0, T] spent in each state"""
    n = n or int(trace.path_states.max()) + 1
    ends = np.append(trace.path_times[1:], trace.horizon)
    return np.bincount(trace.path_states, weights=ends - trace.path_times, minlength=n) / trace.horizon


def frequency_standard_error(trace: SamplingTrace, batches: int = 20) -> np.ndarray:
    """Batch-means standard error of the empirical sampling frequencies"""
    if batches < 2:
        raise InvalidSpecError(f"need at least two batches, got {batches}")
    edges = np.linspace(0.0, trace.horizon, batches + 1)
    width = trace.horizon / batches
    se = np.empty(trace.L)
    for l, times in enumerate(trace.events):
        rates = np.histogram(times, bins=edges)[0] / width
        se[l] = rates.std(ddof=1) / np.sqrt(batches)
    return se
