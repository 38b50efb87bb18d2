"""Exception hierarchy shared across the package.

Two broad failure classes matter to callers: bad inputs (malformed files,
schema violations, contract breaches) and numerical degeneracies (zero
bandwidth, non-PSD matrices, undefined scores). The CLI maps them to
distinct exit codes.
"""


class UnidimError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(UnidimError):
    """Malformed or inconsistent input: files, schemas, shapes, arguments."""


class NumericalError(UnidimError):
    """Numerically degenerate situation that makes a result undefined."""
