"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class MemQfcError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MemQfcError, ValueError):
    """An argument lies outside the domain of a formula."""


class ConfigError(MemQfcError, ValueError):
    """Invalid scenario, parameter set or option combination.

    ``line`` is the 1-based line in the offending file when known.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class StreamFormatError(ConfigError):
    """A tag-stream file could not be parsed.  ``offset`` is a byte offset."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None,
                 offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message, line=line, path=path)


class EmptyStreamsError(ConfigError):
    """A simulation was requested with nothing to simulate."""


class NumericalError(MemQfcError, ArithmeticError):
    """A numerical procedure failed to produce a finite answer."""


class InfiniteEstimateError(NumericalError):
    """A ratio estimator has a zero denominator.

    The raw counts are attached so callers can still report them.
    """

    def __init__(self, message: str, n_coincidences: int = 0, n_accidentals: int = 0):
        super().__init__(message)
        self.n_coincidences = n_coincidences
        self.n_accidentals = n_accidentals


class NoMaximumError(NumericalError):
    """A maximization problem has no interior maximum."""


class FitError(NumericalError):
    """Least squares did not converge; ``best`` holds the best point found."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
