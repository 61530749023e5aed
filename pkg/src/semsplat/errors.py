"""Exception hierarchy shared across the package.

CLI exit codes map onto these: usage problems exit 1, data/validation
problems exit 2, numeric failures exit 3.
"""


class SemsplatError(Exception):
    """Base class for all package errors."""


class ValidationError(SemsplatError, ValueError):
    """An invariant or precondition on in-memory data was violated."""


class UnknownLabelError(SemsplatError, KeyError):
    """A query named a label that the dictionary does not contain."""

    def __str__(self):  # KeyError quotes its message; keep it readable
        return self.args[0] if self.args else ""


class NumericalError(SemsplatError, ArithmeticError):
    """A numeric failure (non-finite loss, degenerate optimization state)."""


class ContainerError(SemsplatError):
    """Base class for on-disk container problems."""


class BadMagicError(ContainerError):
    """The file does not start with the expected magic bytes."""


class TruncatedError(ContainerError):
    """The file ended before the declared payload was complete."""


class DimensionError(ContainerError):
    """Declared dimensions are zero, absurdly large, or inconsistent."""
