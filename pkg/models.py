from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from errors import InvalidSpecError


@dataclass
class ChainSpec:
    """Controlled sensor-access chain: L sensors plus one idle node

    Counter 2l releases sensor l back to idle, counter 2l+1 hands the
    channel from idle to sensor l.
    """
    L: int
    mu0: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray

    @property
    def n(self) -> int:
        return self.L + 1

    @property
    def m(self) -> int:
        return 2 * self.L

    @property
    def idle(self) -> int:
        return self.L


@dataclass
class ChainMatrices:
    """Generators and cost matrices derived from a ChainSpec"""
    spec: ChainSpec
    G: np.ndarray  # (m, n, n)
    A: np.ndarray
    B: np.ndarray  # (m, n, n)
    S: np.ndarray  # (m, n)
    c: np.ndarray


@dataclass
class GeneratorCheck:
    passed: bool
    violations: List[str] = field(default_factory=list)


@dataclass
class FiniteHorizonPolicy:
    """Backward solution k(t) on an increasing grid ending at the horizon"""
    times: np.ndarray
    k_traj: np.ndarray  # (len(times), n)
    cost_J: float


@dataclass
class StationaryPolicy:
    k0: np.ndarray
    rho: float
    K: np.ndarray  # (m, n) gain matrix
    eff_rates: np.ndarray  # (m, n) mu0 + alpha @ K
    residual: float = 0.0
    iterations: int = 0


@dataclass
class FrequencyReport:
    closed_loop: np.ndarray
    stationary: np.ndarray
    frequency: np.ndarray
    mean_gap: np.ndarray


@dataclass
class SamplingTrace:
    """Sampling instants per sensor plus the jump path that produced them"""
    horizon: float
    events: List[np.ndarray]
    path_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    path_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def L(self) -> int:
        return len(self.events)

    @property
    def final_state(self) -> Optional[int]:
        if len(self.path_states) == 0:
            return None
        return int(self.path_states[-1])


@dataclass
class IntersampleStats:
    gaps: np.ndarray
    p_lt_rho: float
    exp_moment: float


@dataclass
class ScalarPlant:
    """dz = -gamma z dt + sigma dw, measured as y = z + eta n"""
    gamma: float
    sigma: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidSpecError(f"gamma must be positive, got {self.gamma}")
        if self.sigma < 0 or self.eta < 0:
            raise InvalidSpecError(f"noise levels must be non-negative (sigma={self.sigma}, eta={self.eta})")


@dataclass
class LinearPlant:
    """dz = A z dt + H dw, measured as y = C z + chol(R) n"""
    A: np.ndarray
    H: np.ndarray
    C: np.ndarray
    R: np.ndarray
    lambda_bar: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass
class DiscretizedStep:
    dt: float
    F: np.ndarray
    Q: np.ndarray


@dataclass
class KalmanState:
    x_hat: np.ndarray
    P: np.ndarray
    t: float = 0.0


class BoundRegime(Enum):
    LOW_NOISE = "low-noise"
    HIGH_NOISE = "high-noise"
    MATRIX = "matrix"
    MATRIX_REFINED = "matrix-refined"
    KALMAN_CONDITIONAL = "kalman-conditional"
    PULSE = "pulse"
    EXPONENTIAL = "exponential"


@dataclass
class EstimationBound:
    value: float
    regime: BoundRegime
    inputs: Dict[str, float] = field(default_factory=dict)


class ControllerKind(Enum):
    IMPULSIVE = "impulsive"
    PULSE = "pulse"
    EXPONENTIAL = "exponential"
    PI = "pi"


@dataclass
class ControllerSpec:
    kind: ControllerKind
    rho: Optional[float] = None
    theta: Optional[float] = None
    kp: Optional[float] = None
    ki: Optional[float] = None

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass
class StepDisturbance:
    sensor: int
    amplitude: float
    start: float


@dataclass
class ClosedLoopPath:
    """State and control at grid and event instants; on_grid marks grid rows"""
    times: np.ndarray
    state: np.ndarray
    control: np.ndarray
    on_grid: np.ndarray


@dataclass
class MonteCarloSummary:
    mean: np.ndarray
    variance: np.ndarray
    ci_half: np.ndarray
    se: np.ndarray
    n: int


@dataclass
class ErrorCurve:
    sensor: int
    label: str
    times: np.ndarray
    mean_sq: np.ndarray
    ci_half: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    warmup: float = 0.0
    violations: int = 0


@dataclass
class BoundReport:
    scenario: str
    passed: bool
    frequencies: Dict[str, Any] = field(default_factory=dict)
    bounds: Dict[str, float] = field(default_factory=dict)
    curves: List[ErrorCurve] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
