from typing import Optional


class KkSimError(Exception):
    """Base class for all toolkit errors"""


class ConfigError(KkSimError, ValueError):
    """Scenario or parameter validation failed"""


class ContractViolation(KkSimError, ValueError):
    """An operation was called outside its preconditions"""


class AliasingError(ContractViolation):
    """Downsampling would fold out-of-band energy back into the band"""

    def __init__(self, message: str, aliased_fraction: float):
        super().__init__(f"{message} (aliased fraction {aliased_fraction:.3e})")
        self.aliased_fraction = aliased_fraction


class DegenerateTrajectoryError(ContractViolation):
    """A trajectory passes through (or numerically at) the origin"""


class IllConditionedError(KkSimError, RuntimeError):
    """A least-squares estimate is too poorly conditioned to invert"""

    def __init__(self, message: str, condition_number: Optional[float] = None):
        super().__init__(message)
        self.condition_number = condition_number


class ConvergenceError(KkSimError, RuntimeError):
    """Split-step self check disagreed with the halved-step solution"""

    def __init__(self, message: str, relative_change: float):
        super().__init__(f"{message} (relative change {relative_change:.3e})")
        self.relative_change = relative_change


class ResultsIOError(KkSimError, OSError):
    """Writing a result artifact failed"""

    def __init__(self, path: str, reason: str):
        super().__init__(f"Failed to write {path}: {reason}")
        self.path = path
