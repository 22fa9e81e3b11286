"""Exception types shared across the pipeline.

Every stage raises subclasses of :class:`EntrometerError` so the CLI can
tag failures with the stage that produced them.
"""


class EntrometerError(Exception):
    """Base class for all pipeline errors."""


class ParseError(EntrometerError):
    """A raw input row could not be parsed.

    Carries the 1-based line number of the offending row.
    """

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyInputError(EntrometerError):
    """No usable data after parsing or stripping."""


class InsufficientDataError(EntrometerError):
    """Not enough observations for the requested operation."""


class DegenerateInputError(EntrometerError):
    """Input carries no usable variation (all identical, zero profile, ...)."""


class FitFailureError(EntrometerError):
    """A model fit did not converge or produced invalid parameters."""


class OptimizationError(EntrometerError):
    """A scalar optimization failed to produce a finite objective."""


class NumericalError(EntrometerError):
    """A numeric evaluation produced a non-finite value."""
