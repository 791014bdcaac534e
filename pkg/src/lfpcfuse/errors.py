"""Exception hierarchy shared by the kernels, file readers and the CLI."""


class LfpcError(Exception):
    """Base class for all package errors."""


class ValidationError(LfpcError, ValueError):
    """Inputs violate a shape, range or precondition contract."""


class FormatError(ValidationError):
    """A file on disk does not match its declared format."""


class NumericalIntegrityError(LfpcError, ArithmeticError):
    """A computation produced non-finite values or failed an oracle check."""
