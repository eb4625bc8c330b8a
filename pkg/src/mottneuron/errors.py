"""Exception types shared across the package."""


class MottNeuronError(Exception):
    """Base class for all package errors."""


class DomainError(MottNeuronError, ValueError):
    """An argument is outside the physical domain of a device function."""


class ConfigurationError(MottNeuronError, ValueError):
    """Inconsistent circuit topology, bad config file, or invalid parameter set."""


class StimulusParseError(ConfigurationError):
    """Protocol text failed to parse. Carries line/column context."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class SolverError(MottNeuronError, RuntimeError):
    """Integration failed. Carries the last state for diagnostics."""

    def __init__(self, message, t=None, state=None):
        self.t = t
        self.state = state
        if t is not None:
            message = f"{message} at t={t:.6e} s"
        super().__init__(message)


class StiffnessError(SolverError):
    """Step size underflowed the configured minimum."""


class NumericalError(SolverError):
    """NaN or Inf encountered during right-hand-side evaluation."""


class ConvergenceError(MottNeuronError, RuntimeError):
    """A relaxation or fixed-point search did not converge within its budget."""

    def __init__(self, message, last_value=None):
        self.last_value = last_value
        super().__init__(message)
