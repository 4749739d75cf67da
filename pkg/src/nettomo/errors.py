class NettomoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NettomoError, ValueError):
    """Bad configuration: unknown node, pair, key or out-of-range setting."""


class ContractError(NettomoError, ValueError):
    """Inputs violate a function precondition (shape or domain mismatch)."""


class InfeasibleObservationError(NettomoError):
    """No nonnegative traffic reproduces the observations."""


class BudgetExceededError(NettomoError):
    """Exact enumeration would exceed the configured budget."""


class CalibrationError(NettomoError):
    """Threshold calibration cannot be performed on the given sample."""


class EstimationError(NettomoError):
    """An estimator failed to produce a rate estimate."""
