"""Exception hierarchy shared by every geum module."""


class GeumError(Exception):
    """Base class for all library errors."""


class ConfigurationError(GeumError, ValueError):
    """Invalid dimensions, malformed scenario files, empty constraint sets."""


class DomainError(GeumError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalDegeneracyError(GeumError, ArithmeticError):
    """A matrix that must be invertible is (numerically) singular."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class SimulationBlowupError(GeumError, ArithmeticError):
    """NaN or overflow encountered along a simulated path."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class BackendError(GeumError, ArithmeticError):
    """The conditional-expectation backend cannot produce a projection."""


class QuadraticBlowupError(GeumError, ArithmeticError):
    """Truncation clamps bound on too many cells of a backward solve."""


class InadmissibleStrategyError(GeumError, ValueError):
    """A strategy produced a -inf utility (nonpositive consumption for log/power)."""


class UsageError(GeumError, ValueError):
    """Objects that must share an ensemble or grid do not."""
