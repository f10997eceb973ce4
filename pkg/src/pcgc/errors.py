"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1,
``DataError`` subclasses exit 2, ``CorruptionError`` subclasses exit 3.
"""


class PcgcError(Exception):
    """Base class for all package errors."""


class DataError(PcgcError):
    """Invalid or inconsistent input data (exit code 2)."""


class ParseError(DataError):
    """A file could not be parsed; message names the offending content."""


class SchemaError(DataError):
    """A file parsed but violates the expected schema."""


class ShapeError(DataError):
    """Array/tensor shapes are incompatible with the requested operation."""


class CorruptionError(PcgcError):
    """A binary stream is truncated, inconsistent, or fails checks (exit code 3)."""


class ModelMismatchError(CorruptionError):
    """A bitstream or checkpoint does not match the supplied model."""
