"""Exception hierarchy shared across the package."""


class StampError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StampError, ValueError):
    """Array or layout sizes do not match."""


class ParameterError(StampError, ValueError):
    """A scalar parameter is outside its valid range."""


class EvaluationError(StampError, ArithmeticError):
    """A traced program produced a non-finite intermediate value.

    ``primitive`` names the offending operation and ``step`` is its index in
    evaluation order (``-1`` when the location could not be recovered).
    """

    def __init__(self, message, primitive=None, step=-1):
        super().__init__(message)
        self.primitive = primitive
        self.step = step


class SimulationError(EvaluationError):
    """Non-finite force or state inside a physics rollout."""

    def __init__(self, message, body=None, time_index=-1):
        super().__init__(message, primitive="force", step=time_index)
        self.body = body
        self.time_index = time_index


class IterationError(StampError, ArithmeticError):
    """An inference iteration hit a non-finite density or gradient."""

    def __init__(self, message, particle=None, iteration=None):
        super().__init__(message)
        self.particle = particle
        self.iteration = iteration


class WeightError(IterationError):
    """Importance weight undefined (zero discrete probability)."""


class FitError(StampError, ArithmeticError):
    """Regression normal equations are singular."""


class ConfigError(StampError, ValueError):
    """Configuration failed validation; ``pointer`` is a JSON pointer."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class UnknownIdError(StampError, KeyError):
    """Lookup of a body, wall or action id failed."""
