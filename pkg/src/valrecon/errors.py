"""Exception types shared across the package."""


class ValreconError(Exception):
    pass


class ConfigurationError(ValreconError, ValueError):
    """Invalid market, policy or run configuration."""


class DegenerateHourError(ValreconError, ValueError):
    """An hour with zero imbalance incentive; callers skip it."""


class CoherenceError(ValreconError, ValueError):
    pass


class DataError(ValreconError, ValueError):
    """Input data failed validation. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class NonConvergenceError(ValreconError, RuntimeError):
    def __init__(self, message, loss_trace=None):
        super().__init__(message)
        self.loss_trace = list(loss_trace or [])


class TrainingDivergenceError(ValreconError, RuntimeError):
    def __init__(self, message, epoch=None, trace=None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch
        self.trace = list(trace or [])
