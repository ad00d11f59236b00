"""
Monte Carlo replicate execution

Every replicate draws from its own Philox stream keyed by (master seed,
replicate index), so results do not depend on how replicates are scheduled
across workers. Aggregation uses compensated summation in index order.
"""

import logging
import math
from typing import Callable, Optional, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from errors import InvalidSpecError, ReplicateError, SchedulingError
from models import MonteCarloSummary

logger = logging.getLogger(__name__)

CONFIDENCE = 0.99
Z_CONFIDENCE = float(norm.ppf(0.5 + CONFIDENCE / 2))


def make_rng(master_seed: int, index: Optional[int] = None) -> np.random.Generator:
    """Counter-based generator for a replicate stream"""
    if index is None:
        seq = np.random.SeedSequence(master_seed)
    else:
        seq = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


def as_generator(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(int(seed))


def _run_replicate(runner: Callable[[np.random.Generator], np.ndarray], master_seed: int, index: int):
    try:
        return np.asarray(runner(make_rng(master_seed, index)), dtype=float)
    except SchedulingError as e:
        raise ReplicateError(f"replicate {index} failed: {e}", index=index) from e


def run_replicates(runner: Callable[[np.random.Generator], np.ndarray], N: int, master_seed: int,
                   n_jobs: int = 1) -> np.ndarray:
    """Evaluate runner once per replicate; rows are in replicate-index order"""
    if N < 1:
        raise InvalidSpecError(f"need at least one replicate, got {N}")
    logger.debug(f"Running {N} replicates on {n_jobs} worker(s)")
    rows = Parallel(n_jobs=n_jobs)(delayed(_run_replicate)(runner, master_seed, i) for i in range(N))
    return np.stack(rows)


def summarize(values: np.ndarray, z: float = Z_CONFIDENCE) -> MonteCarloSummary:
    """Column-wise mean, unbiased variance, standard error and CI half-width"""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.ndim > 2:
        values = values.reshape(values.shape[0], -1)
    N = values.shape[0]
    mean = np.array([math.fsum(col) for col in values.T]) / N
    if N < 2:
        nan = np.full(mean.shape, np.nan)
        return MonteCarloSummary(mean=mean, variance=nan, ci_half=nan.copy(), se=nan.copy(), n=N)
    dev = values - mean
    variance = np.array([math.fsum(col) for col in (dev * dev).T]) / (N - 1)
    se = np.sqrt(variance / N)
    return MonteCarloSummary(mean=mean, variance=variance, ci_half=z * se, se=se, n=N)


def monte_carlo(runner: Callable[[np.random.Generator], np.ndarray], N: int, master_seed: int,
                n_jobs: int = 1, z: float = Z_CONFIDENCE) -> MonteCarloSummary:
    """
    Run N replicates and aggregate their outputs

    Args:
        runner: maps a replicate generator to an array (same shape every time)
        N: number of replicates
        master_seed: seed shared by all replicate streams
        n_jobs: joblib worker count
        z: normal quantile for the confidence half-width
    """
    values = run_replicates(runner, N, master_seed, n_jobs)
    return summarize(values, z)
