"""Exception hierarchy shared by the library and the command line tool.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError (and
subclasses) -> 2, NumericError -> 3.  ShapeError signals a violated
call contract between library components; the CLI treats it as a data
problem because it only arises there from inconsistent inputs (e.g. a
checkpoint whose item count does not match the corpus).
"""


class MultvaeError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(MultvaeError):
    """Unknown key, missing required key, or unparsable config value."""


class DataError(MultvaeError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A line of an input file could not be parsed.

    Carries the 1-based line number so the CLI can point at the
    offending record.
    """

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyCorpusError(DataError):
    """Filtering or splitting left no interactions behind."""


class CorruptCheckpointError(DataError):
    """A checkpoint file failed its magic, version, or CRC validation."""


class ShapeError(MultvaeError):
    """An array argument has the wrong shape for the requested operation."""


class NumericError(MultvaeError):
    """A non-finite value appeared where a finite one is required."""
