import logging

import numpy as np
from scipy.linalg import expm

from chain_model import sample_counter, validate_generator
from errors import GeneratorViolationError, InvalidSpecError, NonErgodicError
from models import ChainMatrices, ChainSpec, FrequencyReport, StationaryPolicy

logger = logging.getLogger(__name__)

NULL_SPACE_TOL = 1e-8


def closed_loop_generator(mats: ChainMatrices, policy: StationaryPolicy) -> np.ndarray:
    """M_cl = A - 1/2 sum_i B_i diag(k0^T B_i + S_i)"""
    M = mats.A + np.einsum("irc,ic->rc", mats.B, policy.K)
    check = validate_generator(M)
    if not check.passed:
        logger.error(f"Closed-loop matrix rejected: {check.violations}")
        raise GeneratorViolationError("closed-loop matrix is not a generator", violations=check.violations)
    return M


def stationary_distribution(M: np.ndarray) -> np.ndarray:
    """Solve M p = 0, 1^T p = 1 for an irreducible generator"""
    n = M.shape[0]
    s = np.linalg.svd(M, compute_uv=False)
    null_dim = int(np.sum(s <= NULL_SPACE_TOL * max(1.0, s[0])))
    if null_dim > 1:
        raise NonErgodicError(f"generator has a {null_dim}-dimensional null space")

    aug = np.vstack([M, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def mean_dynamics(M: np.ndarray, p0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Occupancy p(t) = expm(M t) p0 at each requested time"""
    return np.array([expm(M * t) @ p0 for t in np.atleast_1d(times)])


def sampling_frequencies(spec: ChainSpec, mats: ChainMatrices, policy: StationaryPolicy,
                         p_inf: np.ndarray) -> np.ndarray:
    """Long-run rate of idle -> sensor transitions per sensor"""
    if mats.spec.L != spec.L or policy.eff_rates.shape != (spec.m, spec.n) or p_inf.shape != (spec.n,):
        raise InvalidSpecError(f"policy and occupancy do not match a chain with {spec.L} sensor(s)")
    counters = [sample_counter(l) for l in range(spec.L)]
    rates = policy.eff_rates[counters, spec.idle]
    return np.maximum(rates, 0.0) * p_inf[spec.idle]


def analyze_policy(mats: ChainMatrices, policy: StationaryPolicy) -> FrequencyReport:
    M = closed_loop_generator(mats, policy)
    p_inf = stationary_distribution(M)
    f = sampling_frequencies(mats.spec, mats, policy, p_inf)
    with np.errstate(divide="ignore"):
        mean_gap = np.where(f > 0, 1.0 / np.where(f > 0, f, 1.0), np.inf)
    logger.info(f"Sampling frequencies: {np.array2string(f, precision=4)}")
    return FrequencyReport(closed_loop=M, stationary=p_inf, frequency=f, mean_gap=mean_gap)
