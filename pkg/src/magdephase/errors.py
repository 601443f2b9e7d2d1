"""Exception hierarchy shared by all modules."""


class MagDephaseError(Exception):
    """Base class for every error raised by this package."""


class SingularityError(MagDephaseError, ValueError):
    """Field evaluated on (or too close to) a current filament."""


class InsideBodyError(MagDephaseError, ValueError):
    """Field evaluated inside a magnet body."""


class FieldZeroError(MagDephaseError, ValueError):
    """Gradient of |B| requested where |B| vanishes."""


class ConvergenceError(MagDephaseError, RuntimeError):
    """A quadrature or optimizer failed to reach its tolerance."""


class ConfigError(MagDephaseError, ValueError):
    """Malformed or invalid run configuration.

    ``line``/``column`` are 1-based when the error can be located in the
    source text, ``field`` names the offending key for validation errors.
    """

    def __init__(self, message, line=None, column=None, field=None):
        self.line = line
        self.column = column
        self.field = field
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        elif field is not None:
            where = f" [{field}]"
        super().__init__(f"{message}{where}")


class DataError(MagDephaseError, ValueError):
    """Malformed CSV input or inconsistent dataset."""
