"""
Sensor-access chain construction

A star-shaped continuous-time Markov chain: every sensor state is connected
only to the idle node. Counters are laid out pairwise per sensor:
2l releases sensor l to idle and 2l+1 samples sensor l from idle.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from errors import ConsistencyError, InvalidSpecError
from models import ChainMatrices, ChainSpec, GeneratorCheck

logger = logging.getLogger(__name__)

GENERATOR_TOL = 1e-9


def release_counter(sensor: int) -> int:
    return 2 * sensor


def sample_counter(sensor: int) -> int:
    return 2 * sensor + 1


def counter_endpoints(L: int) -> Tuple[np.ndarray, np.ndarray]:
    """Source and target state of every counter"""
    sensors = np.arange(L)
    source = np.empty(2 * L, dtype=int)
    target = np.empty(2 * L, dtype=int)
    source[0::2], target[0::2] = sensors, L
    source[1::2], target[1::2] = L, sensors
    return source, target


def build_generators(L: int) -> np.ndarray:
    """Rank-one edge generators G_i = (e_target - e_source) e_source^T, stacked (m, n, n)"""
    if L < 1:
        raise InvalidSpecError(f"need at least one sensor, got L={L}")
    n = L + 1
    source, target = counter_endpoints(L)
    G = np.zeros((2 * L, n, n))
    idx = np.arange(2 * L)
    G[idx, target, source] = 1.0
    G[idx, source, source] = -1.0
    return G


def spec_from_rates(sample_rate, release_rate, xi, alpha: Optional[np.ndarray] = None) -> ChainSpec:
    """Build a ChainSpec from per-sensor rates; scalars broadcast over sensors"""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    L = xi.size
    sample_rate = np.broadcast_to(np.asarray(sample_rate, dtype=float), (L,))
    release_rate = np.broadcast_to(np.asarray(release_rate, dtype=float), (L,))
    mu0 = np.empty(2 * L)
    mu0[0::2] = release_rate
    mu0[1::2] = sample_rate
    if alpha is None:
        alpha = np.eye(2 * L)
    spec = ChainSpec(L=L, mu0=mu0, alpha=np.asarray(alpha, dtype=float), xi=xi)
    validate_spec(spec)
    return spec


def validate_spec(spec: ChainSpec):
    m = spec.m
    if spec.L < 1:
        raise InvalidSpecError(f"need at least one sensor, got L={spec.L}")
    if np.shape(spec.mu0) != (m,):
        raise InvalidSpecError(f"mu0 must have length {m}, got shape {np.shape(spec.mu0)}")
    if np.shape(spec.alpha) != (m, m):
        raise InvalidSpecError(f"alpha must be {m}x{m}, got shape {np.shape(spec.alpha)}")
    if np.shape(spec.xi) != (spec.L,):
        raise InvalidSpecError(f"xi must have length {spec.L}, got shape {np.shape(spec.xi)}")
    for name, arr in (("mu0", spec.mu0), ("alpha", spec.alpha), ("xi", spec.xi)):
        if not np.all(np.isfinite(arr)):
            raise InvalidSpecError(f"{name} contains non-finite entries")
    if np.any(spec.mu0 < 0):
        raise InvalidSpecError(f"base rates must be non-negative: {spec.mu0}")
    if np.any(spec.xi < 0):
        raise InvalidSpecError(f"sampling costs must be non-negative: {spec.xi}")


def build_matrices(spec: ChainSpec) -> ChainMatrices:
    """Assemble A, B_i, S and c for the stationary and finite-horizon equations

    A = sum_i mu_i0 G_i, B_i = sum_j alpha_ji G_j. The only cost-bearing
    transitions leave the idle node, so c and S are zero except in the idle
    coordinate.
    """
    validate_spec(spec)
    G = build_generators(spec.L)
    A = np.tensordot(spec.mu0, G, axes=1)
    B = np.tensordot(spec.alpha.T, G, axes=1)

    c = np.zeros(spec.n)
    c[spec.idle] = spec.xi @ spec.mu0[1::2]
    S = np.zeros((spec.m, spec.n))
    S[:, spec.idle] = spec.xi @ spec.alpha[1::2, :]

    scale = max(1.0, float(np.abs(A).max()))
    drift = float(np.abs(A.sum(axis=0)).max())
    if drift > 1e-12 * scale:
        raise ConsistencyError(f"column sums of A drift from zero by {drift:.3e}")

    logger.debug(f"Built chain matrices for L={spec.L} (n={spec.n}, m={spec.m})")
    return ChainMatrices(spec=spec, G=G, A=A, B=B, S=S, c=c)


def validate_generator(M: np.ndarray, tol: float = GENERATOR_TOL) -> GeneratorCheck:
    """Check non-negative off-diagonals and zero column sums"""
    violations = []
    off = M - np.diag(np.diag(M))
    for i, j in zip(*np.nonzero(off < -tol)):
        violations.append(f"negative rate {M[i, j]:.3e} at ({i}, {j})")
    sums = M.sum(axis=0)
    for j in np.flatnonzero(np.abs(sums) > tol):
        violations.append(f"column {j} sums to {sums[j]:.3e}")
    return GeneratorCheck(passed=not violations, violations=violations)
