"""
Optimal rate-control policies for the sensor-access chain

Finite horizon: backward RK4 integration of
    dk/dt = -c - A^T k + 1/4 sum_i (S_i^T + B_i^T k)^2,  k(T) = k_f.
Stationary: Newton's method on
    A^T k0 - rho 1 - 1/4 sum_i (S_i^T + B_i^T k0)^2 + c = 0,  1^T k0 = 0.
"""

import logging
from dataclasses import replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from chain_model import counter_endpoints
from errors import DivergenceError, GeneratorViolationError, InvalidSpecError, InvalidStateError, NoSolutionError
from models import ChainMatrices, FiniteHorizonPolicy, StationaryPolicy

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
CONTINUATION_STEP = 0.1
CONTINUATION_MIN_STEP = 1e-4


def _weighted_values(mats: ChainMatrices, k: np.ndarray) -> np.ndarray:
    """Rows k^T B_i + S_i, shape (m, n)"""
    return mats.S + np.einsum("r,irc->ic", k, mats.B)


def gain_matrix(mats: ChainMatrices, k: np.ndarray) -> np.ndarray:
    """Feedback gains u_i(x) = -1/2 (k^T B_i + S_i) x, one row per counter"""
    return -0.5 * _weighted_values(mats, k)


def effective_rates(mats: ChainMatrices, K: np.ndarray) -> np.ndarray:
    """Controlled rate of counter l when the chain sits in state j"""
    return mats.spec.mu0[:, None] + mats.spec.alpha @ K


def _k_derivative(mats: ChainMatrices, k: np.ndarray, c: np.ndarray) -> np.ndarray:
    V = _weighted_values(mats, k)
    return -c - mats.A.T @ k + 0.25 * np.sum(V ** 2, axis=0)


def solve_k_ode(mats: ChainMatrices, T: float, k_f: Optional[np.ndarray] = None,
                c_fn: Optional[Callable[[float], np.ndarray]] = None, steps: int = 10000,
                x0_mean: Optional[np.ndarray] = None) -> FiniteHorizonPolicy:
    """
    Integrate the value vector backward from T to 0 with fixed-step RK4

    Args:
        mats: chain matrices
        T: horizon
        k_f: terminal value, zeros when omitted
        c_fn: time-varying running cost c(t); mats.c when omitted
        steps: number of RK4 steps
        x0_mean: E{x(0)} used for the average cost, idle node when omitted
    """
    n = mats.spec.n
    if not T > 0:
        raise InvalidSpecError(f"horizon must be positive, got {T}")
    if steps < 1:
        raise InvalidSpecError(f"need at least one integration step, got {steps}")
    k_f = np.zeros(n) if k_f is None else np.asarray(k_f, dtype=float)
    if k_f.shape != (n,):
        raise InvalidSpecError(f"terminal value must have length {n}")
    if c_fn is None:
        c_fn = lambda t: mats.c

    times = np.linspace(0.0, T, steps + 1)
    h = T / steps
    k_traj = np.empty((steps + 1, n))
    k_traj[-1] = k_f
    k = k_f.copy()

    # reverse time s = T - t turns the terminal problem into an initial one
    def rhs(t, k):
        return -_k_derivative(mats, k, c_fn(t))

    for j in range(steps, 0, -1):
        t = times[j]
        k1 = rhs(t, k)
        k2 = rhs(t - 0.5 * h, k + 0.5 * h * k1)
        k3 = rhs(t - 0.5 * h, k + 0.5 * h * k2)
        k4 = rhs(t - h, k + h * k3)
        k = k + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(k)):
            logger.error(f"Backward integration diverged at t={times[j - 1]:.6g}")
            raise DivergenceError(f"value vector became non-finite at t={times[j - 1]:.6g}", time=times[j - 1])
        k_traj[j - 1] = k

    if x0_mean is None:
        x0_mean = np.zeros(n)
        x0_mean[mats.spec.idle] = 1.0
    cost_J = float(k_traj[0] @ x0_mean) / T
    logger.debug(f"Finite-horizon solve over T={T} with {steps} steps, J={cost_J:.6g}")
    return FiniteHorizonPolicy(times=times, k_traj=k_traj, cost_J=cost_J)


def stationarity_residual(mats: ChainMatrices, k0: np.ndarray, rho: float,
                          normalization: float = 0.0) -> np.ndarray:
    V = _weighted_values(mats, k0)
    top = mats.A.T @ k0 - rho - 0.25 * np.sum(V ** 2, axis=0) + mats.c
    return np.append(top, np.sum(k0) - normalization)


def _stationarity_jacobian(mats: ChainMatrices, k0: np.ndarray) -> np.ndarray:
    n = mats.spec.n
    V = _weighted_values(mats, k0)
    J = np.zeros((n + 1, n + 1))
    # d/dk of 1/4 sum_i V_i^2 is 1/2 sum_i diag(V_i) B_i^T
    J[:n, :n] = mats.A.T - 0.5 * np.einsum("ic,irc->cr", V, mats.B)
    J[:n, n] = -1.0
    J[n, :n] = 1.0
    return J


def _newton(mats: ChainMatrices, x: np.ndarray, tol: float, max_iter: int, normalization: float):
    """Damped Newton iteration from x; returns (x, residual norm, iterations)"""
    n = mats.spec.n

    def residual(x):
        return stationarity_residual(mats, x[:n], x[n], normalization)

    F = residual(x)
    norm = np.max(np.abs(F))
    iterations = 0
    while norm > tol and iterations < max_iter:
        try:
            dx = np.linalg.solve(_stationarity_jacobian(mats, x[:n]), F)
        except np.linalg.LinAlgError as e:
            raise NoSolutionError(f"singular Jacobian at iteration {iterations}", residual=norm) from e

        step = 1.0
        while True:
            candidate = x - step * dx
            F_new = residual(candidate)
            norm_new = np.max(np.abs(F_new))
            if norm_new < norm or step < 2.0 ** -30:
                break
            step *= 0.5
        x, F, norm = candidate, F_new, norm_new
        iterations += 1
        logger.debug(f"Newton iteration {iterations}: residual={norm:.3e} step={step:g}")

    if not np.isfinite(norm) or norm > tol:
        raise NoSolutionError(f"residual {norm:.3e} above tolerance {tol:g} after {iterations} iterations",
                              residual=norm)
    return x, float(norm), iterations


def _scaled_costs(mats: ChainMatrices, scale: float) -> ChainMatrices:
    return replace(mats, c=scale * mats.c, S=scale * mats.S)


def _negative_rates(mats: ChainMatrices, k0: np.ndarray) -> List[Tuple[int, int]]:
    """(counter, state) pairs whose controlled rate is negative where the counter can fire"""
    eff = effective_rates(mats, gain_matrix(mats, k0))
    source, _ = counter_endpoints(mats.spec.L)
    bad = np.flatnonzero(eff[np.arange(mats.spec.m), source] < -1e-9)
    return [(int(i), int(source[i])) for i in bad]


def _continuation(mats: ChainMatrices, x: np.ndarray, tol: float, max_iter: int, normalization: float):
    """
    Follow the solution from zero cost (k0 = 0, rho = 0 solves it exactly)
    up to the full cost, one Newton solve per cost level

    The step in the cost scale grows after a converged solve and is halved
    after a failed one.
    """
    scale, delta, total = 0.0, CONTINUATION_STEP, 0
    while scale < 1.0:
        target = min(1.0, scale + delta)
        try:
            x_new, norm, iterations = _newton(_scaled_costs(mats, target), x, tol, max_iter, normalization)
        except NoSolutionError as e:
            delta *= 0.5
            if delta < CONTINUATION_MIN_STEP:
                raise NoSolutionError(f"continuation stalled at cost scale {scale:.4g}: {e}",
                                      residual=e.residual) from e
            continue
        x, scale, total = x_new, target, total + iterations
        delta *= 1.5
        logger.debug(f"Continuation reached cost scale {scale:.4g} ({iterations} iterations)")
    return x, norm, total


def solve_stationary(mats: ChainMatrices, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                     normalization: float = 0.0) -> StationaryPolicy:
    """
    Solve the stationary equations for (k0, rho) by Newton's method

    Starts from k0 = 0, rho = 0 and halves the step until the residual's
    max-norm decreases. The tolerance is scaled by max(1, |c|_inf). The
    equations have several roots; when the direct solve fails or lands on a
    root whose gains drive an active rate negative, the solution is followed
    by continuation in the cost scale from the cost-free chain instead.
    Fails with NoSolutionError when no root is reached, and with
    GeneratorViolationError when the followed root still has negative rates.
    """
    n = mats.spec.n
    tol = tol * max(1.0, float(np.abs(mats.c).max()))
    start = np.zeros(n + 1)
    start[:n] = normalization / n

    direct = True
    try:
        x, norm, iterations = _newton(mats, start, tol, max_iter, normalization)
        violations = _negative_rates(mats, x[:n])
        if violations:
            direct = False
            logger.info(f"Direct Newton solve reached a root with negative rates at {violations}; "
                        f"following the cost continuation")
    except NoSolutionError as e:
        direct = False
        logger.info(f"Direct Newton solve failed ({e}); following the cost continuation")
    if not direct:
        try:
            x, norm, iterations = _continuation(mats, start, tol, max_iter, normalization)
        except NoSolutionError as e:
            logger.error(f"Stationary solve failed: {e}")
            raise
        violations = _negative_rates(mats, x[:n])

    if violations:
        logger.error(f"Optimal gains produce negative rates at {violations}")
        raise GeneratorViolationError(f"negative effective rates at (counter, state) {violations}",
                                      violations=violations)

    k0, rho = x[:n], float(x[n])
    K = gain_matrix(mats, k0)
    eff = effective_rates(mats, K)
    logger.info(f"Solved stationary policy for L={mats.spec.L}: rho={rho:.6g} in {iterations} iterations")
    return StationaryPolicy(k0=k0, rho=rho, K=K, eff_rates=eff, residual=norm, iterations=iterations)


def control_input(policy: StationaryPolicy, x: np.ndarray) -> np.ndarray:
    """Stationary rate adjustments u = K x for a unit-vector state"""
    x = np.asarray(x, dtype=float)
    n = policy.K.shape[1]
    if x.shape != (n,) or not np.all((x == 0) | (x == 1)) or x.sum() != 1:
        raise InvalidStateError(f"state must be a unit vector of length {n}, got {x}")
    return policy.K @ x
