"""
Stochastic plants observed by the sensors

Scalar Ornstein-Uhlenbeck plants and linear time-invariant vector plants,
their exact transitions over arbitrary intervals and noisy measurements.
"""

import logging
import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm

from errors import InvalidSpecError, NumericalError
from models import DiscretizedStep, LinearPlant, ScalarPlant

logger = logging.getLogger(__name__)

GRAVITY = 9.8
PSD_TOL = 1e-12


def water_tank_gamma(outlet: float, section: float, level: float, gravity: float = GRAVITY) -> float:
    """Linearized outflow rate of a gravity-drained tank around a level"""
    if outlet <= 0 or section <= 0 or level <= 0 or gravity <= 0:
        raise InvalidSpecError(f"tank parameters must be positive: outlet={outlet}, section={section}, "
                               f"level={level}, gravity={gravity}")
    return (outlet / section) * math.sqrt(gravity / (2.0 * level))


def two_tank_matrix(top: Sequence[float], bottom: Sequence[float], gravity: float = GRAVITY) -> np.ndarray:
    """Serially connected tanks, top drains into bottom; each given as (outlet, section, level)"""
    g_top = water_tank_gamma(*top, gravity=gravity)
    g_bottom = water_tank_gamma(*bottom, gravity=gravity)
    return np.array([[-g_top, 0.0], [g_top, -g_bottom]])


def linear_plant(A, H=None, C=None, R=None, require_stable: bool = True) -> LinearPlant:
    """
    Build a LinearPlant, filling identity H and C and zero R when omitted

    lambda_bar is the largest eigenvalue of A + A^T; plants with
    lambda_bar >= 0 are rejected unless require_stable is False.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise InvalidSpecError(f"A must be square, got shape {A.shape}")
    H = np.eye(d) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
    C = np.eye(d) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    if H.shape[0] != d or C.shape[1] != d:
        raise InvalidSpecError(f"H must have {d} rows and C {d} columns (got {H.shape}, {C.shape})")
    R = np.zeros((C.shape[0], C.shape[0])) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape != (C.shape[0], C.shape[0]):
        raise InvalidSpecError(f"R must be {C.shape[0]}x{C.shape[0]}, got {R.shape}")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() < -PSD_TOL:
        raise InvalidSpecError("R must be symmetric positive semidefinite")

    lambda_bar = float(np.linalg.eigvalsh(A + A.T).max())
    if require_stable and lambda_bar >= 0:
        raise InvalidSpecError(f"A + A^T must be negative definite, largest eigenvalue is {lambda_bar:.6g}")
    return LinearPlant(A=A, H=H, C=C, R=R, lambda_bar=lambda_bar)


def exact_scalar_step(z, dt: float, plant: ScalarPlant, noise):
    """Exact OU transition over dt; z and noise may be arrays"""
    decay = math.exp(-plant.gamma * dt)
    spread = math.sqrt(plant.sigma ** 2 * (1.0 - decay * decay) / (2.0 * plant.gamma))
    return decay * z + spread * noise


def discretize_linear(plant: LinearPlant, dt: float) -> DiscretizedStep:
    """
    Exact transition F = expm(A dt) and process noise Q via Van Loan's method

    expm([[A, H H^T], [0, -A^T]] dt) = [[F, Phi12], [0, F^-T]] and
    Q = Phi12 F^T.
    """
    if dt < 0:
        raise InvalidSpecError(f"step must be non-negative, got {dt}")
    d = plant.dim
    M = np.block([[plant.A, plant.H @ plant.H.T], [np.zeros((d, d)), -plant.A.T]])
    phi = expm(M * dt)
    F = phi[:d, :d]
    Q = phi[:d, d:] @ F.T
    return DiscretizedStep(dt=dt, F=F, Q=(Q + Q.T) / 2.0)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Square root S with S S^T = M, clipping round-off negative eigenvalues"""
    M = (M + M.T) / 2.0
    w, V = np.linalg.eigh(M)
    if w.size and w.min() < -PSD_TOL * max(1.0, float(np.abs(w).max())):
        raise NumericalError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def exact_vector_step(z: np.ndarray, step: DiscretizedStep, noise: np.ndarray,
                      root: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact transition over step.dt; root is a cached psd_sqrt(step.Q)"""
    root = psd_sqrt(step.Q) if root is None else root
    return step.F @ z + root @ noise


def measure(z: Union[float, np.ndarray], noise, plant: Union[ScalarPlant, LinearPlant],
            C: Optional[np.ndarray] = None):
    """Noisy sample y = C z + chol(R) n (scalar plants: y = z + eta n)"""
    if isinstance(plant, ScalarPlant):
        return z + plant.eta * noise
    C = plant.C if C is None else C
    z = np.asarray(z, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if z.shape != (plant.dim,) or noise.shape != (C.shape[0],):
        raise InvalidSpecError(f"measurement expects state of length {plant.dim} and noise of length {C.shape[0]}")
    return C @ z + psd_sqrt(plant.R) @ noise


def time_grid(horizon: float, grid_dt: float) -> np.ndarray:
    """Uniform grid from 0 to horizon inclusive"""
    if not grid_dt > 0 or not horizon > 0:
        raise InvalidSpecError(f"need positive horizon and grid step, got {horizon} and {grid_dt}")
    return np.linspace(0.0, horizon, int(round(horizon / grid_dt)) + 1)
