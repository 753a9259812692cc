"""Exception types shared across the library.

The CLI maps these onto distinct exit codes, so keep the hierarchy flat
and explicit rather than reusing ValueError everywhere.
"""


class RfExplainError(Exception):
    """Base class for all library errors."""


class SchemaError(RfExplainError):
    """A column, header, or feature layout does not match expectations."""


class ParseError(RfExplainError):
    """A cell could not be parsed; carries row/column location."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column!r})" if column is not None else ")")
        super().__init__(message + loc)


class FormatError(RfExplainError):
    """A binary file does not follow its declared format."""


class ConsistencyError(RfExplainError):
    """Two inputs that must agree (e.g. image/label counts) do not."""


class NoOutOfBagError(RfExplainError):
    """A training instance is in-bag for every tree; Eq.-style OOB machinery undefined."""


class EmptyReferenceError(RfExplainError):
    """The reference set for a search is empty."""


class NoCounterfactualError(RfExplainError):
    """No reference point satisfies the utility/flip constraint."""


class DegenerateInputError(RfExplainError):
    """Input is degenerate for the requested computation (e.g. all-infinite distances)."""


class ConfigError(RfExplainError):
    """A run configuration is invalid or incomplete."""
