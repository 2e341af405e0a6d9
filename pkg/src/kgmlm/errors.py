"""Shared exception hierarchy.

Stage-specific errors live next to the code that raises them; everything
derives from :class:`KgmlmError` so the CLI can map failures to exit codes.
"""


class KgmlmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(KgmlmError):
    """Invalid configuration or command usage (CLI exit code 1)."""


class MissingArtifactError(KgmlmError):
    """A required input file for a pipeline stage does not exist."""


class EmptyCorpusError(KgmlmError):
    """An operation that needs at least one sequence received none."""
