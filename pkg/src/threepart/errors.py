"""Exception hierarchy shared across the package.

Validation of plain arguments raises ValueError; these classes cover
domain failures that callers (and the CLI exit-code mapping) need to
tell apart.
"""


class ThreePartError(Exception):
    """Base class for package-specific errors."""


class DataError(ThreePartError):
    """Input data violates an integrity rule (bad outcomes, negative quantities...)."""


class SchemaError(DataError):
    """Input does not match the declared column spec (missing column, unknown category)."""


class PipelineError(ThreePartError):
    """A data-pipeline step cannot proceed (e.g. empty donor pool)."""


class NumericalError(ThreePartError):
    """A numerical step failed (singular system, non-positive Schur complement)."""


class DecompositionError(NumericalError):
    """A matrix factorization failed (non-SPD input)."""


class DegenerateTailError(NumericalError):
    """A truncation interval carries mass below floating-point resolution."""


class ChainError(NumericalError):
    """A Gibbs step failed mid-chain; carries the iteration index and a state dump."""

    def __init__(self, message, iteration=None, state=None):
        super().__init__(message)
        self.iteration = iteration
        self.state = state or {}
