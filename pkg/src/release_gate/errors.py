"""Exception types raised across the package."""

from __future__ import annotations


class ReleaseGateError(Exception):
    """Base class for all errors raised by release_gate."""


class IntervalError(ReleaseGateError, ValueError):
    pass


class DatasetError(ReleaseGateError, ValueError):
    """Malformed or out-of-order dataset content; ``row`` is 1-based incl. header."""

    def __init__(self, message: str, row: int | None = None) -> None:
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


class ConfigError(ReleaseGateError, ValueError):
    pass


class NoVarianceError(ReleaseGateError, ValueError):
    """Every feature column is constant, so nothing can be standardized."""


class CollectionError(ReleaseGateError):
    """A metrics source failed; ``source`` names it."""

    def __init__(self, source: str, message: str) -> None:
        self.source = source
        super().__init__(f"{source}: {message}")


class SourceUnavailableError(CollectionError):
    pass


class PayloadError(CollectionError):
    pass
