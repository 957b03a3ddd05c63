"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """Invalid configuration: unknown keys, malformed values, bad combinations."""


class AssumptionViolation(ConfigurationError):
    """A structural assumption on the model (bounds, growth, positivity) fails."""


class PreconditionError(ConfigurationError):
    """An operation was invoked with inputs outside its stated preconditions."""


class SolverError(Exception):
    """Iterative solve failed to converge; carries the residual history."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class StepFailure(Exception):
    """Time step could not be completed; carries the last good state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
