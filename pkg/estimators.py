"""
Remote estimators fed by randomly scheduled samples and their error bounds
"""

import logging
import math
from typing import Optional, Union

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from errors import BoundInapplicableError, InvalidSpecError, NumericalError
from models import (BoundRegime, DiscretizedStep, EstimationBound, KalmanState, LinearPlant,
                    ScalarPlant)

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12


def decay_factor(rate: float, f: float) -> float:
    """exp(-rate / f), taking 1/f = inf when f = 0"""
    if f < 0:
        raise InvalidSpecError(f"sampling frequency must be non-negative, got {f}")
    if f == 0:
        return 0.0
    return math.exp(-rate / f)


def predictor_estimate(last_y, elapsed: float, plant: Union[ScalarPlant, LinearPlant],
                       step: Optional[DiscretizedStep] = None):
    """Open-loop prediction from the last sample; step reuses a precomputed transition"""
    if elapsed < 0:
        raise InvalidSpecError(f"elapsed time must be non-negative, got {elapsed}")
    if isinstance(plant, ScalarPlant):
        return math.exp(-plant.gamma * elapsed) * last_y
    F = step.F if step is not None else expm(plant.A * elapsed)
    return F @ last_y


def variance_envelope(t: float, c1: float, c2: float, gamma: float) -> float:
    """Solution of dg/dt = -2 gamma g + c2, g(0) = c1"""
    decay = math.exp(-2.0 * gamma * t)
    return c1 * decay + (c2 / (2.0 * gamma)) * (1.0 - decay)


def bound_scalar_estimation(gamma: float, sigma: float, eta: float, f: float) -> EstimationBound:
    """
    Upper bound on the stationary mean-square estimation error of a scalar plant

    The low-noise form applies when eta^2 <= sigma^2 / (2 gamma), where the
    error envelope is concave in the gap; otherwise the looser high-noise form.
    """
    if not gamma > 0:
        raise InvalidSpecError(f"gamma must be positive, got {gamma}")
    decay = decay_factor(2.0 * gamma, f)
    stationary = sigma ** 2 / (2.0 * gamma)
    inputs = {"gamma": gamma, "sigma": sigma, "eta": eta, "f": f}
    if eta <= sigma / math.sqrt(2.0 * gamma):
        value = eta ** 2 * decay + stationary * (1.0 - decay)
        return EstimationBound(value=value, regime=BoundRegime.LOW_NOISE, inputs=inputs)
    value = eta ** 2 + stationary * (1.0 - decay)
    return EstimationBound(value=value, regime=BoundRegime.HIGH_NOISE, inputs=inputs)


def bound_state_estimation(plant: LinearPlant, f: float, refined: bool = False) -> EstimationBound:
    """Bound on E{|z - z_hat|^2} for a vector plant with lambda_bar < 0"""
    if plant.lambda_bar >= 0:
        raise BoundInapplicableError(f"bound needs lambda_bar < 0, got {plant.lambda_bar:.6g}")
    rate = abs(plant.lambda_bar)
    decay = decay_factor(rate, f)
    noise = float(np.trace(plant.R))
    drive = float(np.trace(plant.H.T @ plant.H)) / rate
    inputs = {"lambda_bar": plant.lambda_bar, "trace_R": noise, "f": f}
    if refined and noise <= drive:
        return EstimationBound(value=noise * decay + drive * (1.0 - decay),
                               regime=BoundRegime.MATRIX_REFINED, inputs=inputs)
    return EstimationBound(value=noise + drive * (1.0 - decay), regime=BoundRegime.MATRIX, inputs=inputs)


def kalman_prior(plant: LinearPlant) -> KalmanState:
    """Zero mean with the stationary covariance A P + P A^T + H H^T = 0"""
    P = solve_continuous_lyapunov(plant.A, -plant.H @ plant.H.T)
    return KalmanState(x_hat=np.zeros(plant.dim), P=(P + P.T) / 2.0, t=0.0)


def kalman_step(state: KalmanState, step: DiscretizedStep, C: np.ndarray, R: np.ndarray,
                y: np.ndarray) -> KalmanState:
    """Predict over step.dt, then a Joseph-form measurement update"""
    x_pred = step.F @ state.x_hat
    P_pred = step.F @ state.P @ step.F.T + step.Q

    S = C @ P_pred @ C.T + R
    S = (S + S.T) / 2.0
    if np.linalg.eigvalsh(S).min() < SINGULAR_TOL:
        logger.error(f"Innovation covariance is singular at t={state.t + step.dt:.6g}")
        raise NumericalError("innovation covariance is singular")
    gain = np.linalg.solve(S, C @ P_pred).T

    x_new = x_pred + gain @ (np.atleast_1d(y) - C @ x_pred)
    I_KC = np.eye(len(x_new)) - gain @ C
    P_new = I_KC @ P_pred @ I_KC.T + gain @ R @ gain.T
    P_new = (P_new + P_new.T) / 2.0
    if np.linalg.eigvalsh(P_new).min() < -SINGULAR_TOL * max(1.0, float(np.abs(P_new).max())):
        raise NumericalError("posterior covariance lost positive semidefiniteness")
    return KalmanState(x_hat=x_new, P=P_new, t=state.t + step.dt)


def kalman_intersample_bound(P_trace: float, plant: LinearPlant, gap: float) -> EstimationBound:
    """Conditional bound for the prediction error across one observed gap"""
    if plant.lambda_bar >= 0:
        raise BoundInapplicableError(f"bound needs lambda_bar < 0, got {plant.lambda_bar:.6g}")
    rate = abs(plant.lambda_bar)
    saturation = 0.0 if math.isinf(gap) else math.exp(-rate * gap)
    drive = float(np.trace(plant.H.T @ plant.H)) / rate
    return EstimationBound(value=P_trace + drive * (1.0 - saturation),
                           regime=BoundRegime.KALMAN_CONDITIONAL,
                           inputs={"trace_P": P_trace, "gap": gap, "lambda_bar": plant.lambda_bar})
