from typing import List, Optional


class SchedulingError(Exception):
    """Base class for every failure raised by the scheduling toolkit"""


class InvalidSpecError(SchedulingError, ValueError):
    """A chain, plant, controller or scenario description is malformed"""


class InvalidStateError(SchedulingError, ValueError):
    """A chain state is not a unit vector of the right dimension"""


class ConsistencyError(SchedulingError):
    """Internal construction produced an object that breaks its own invariants"""


class DivergenceError(SchedulingError):
    """Backward integration produced non-finite values"""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time


class NoSolutionError(SchedulingError):
    """The stationary equations could not be solved"""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class GeneratorViolationError(SchedulingError):
    """A controlled rate matrix is not a valid generator"""

    def __init__(self, message: str, violations: Optional[List] = None):
        super().__init__(message)
        self.violations = violations or []


class NonErgodicError(SchedulingError):
    """The closed-loop chain has more than one stationary distribution"""


class AbsorbingStateError(SchedulingError):
    """The simulated chain entered a state it cannot leave"""

    def __init__(self, message: str, state: Optional[int] = None):
        super().__init__(message)
        self.state = state


class InsufficientDataError(SchedulingError):
    """Too few sampling events to compute the requested statistic"""


class NumericalError(SchedulingError):
    """A covariance or innovation matrix lost positive (semi)definiteness"""


class BoundInapplicableError(SchedulingError):
    """The plant is outside the class a bound covers"""


class BoundDivergesError(SchedulingError):
    """The bound's denominator is not positive"""


class ReplicateError(SchedulingError):
    """A Monte Carlo replicate failed"""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class ScenarioError(SchedulingError):
    """A scenario run failed; wraps the underlying SchedulingError"""

    def __init__(self, message: str, scenario: str):
        super().__init__(message)
        self.scenario = scenario
