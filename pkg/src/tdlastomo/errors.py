"""Exception hierarchy shared by the package and mapped to CLI exit codes."""


class TomographyError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigurationError(TomographyError, ValueError):
    exit_code = 2


class GeometryError(TomographyError, ValueError):
    exit_code = 2


class DomainError(TomographyError, ValueError):
    """A temperature (or other argument) outside the modelled range."""

    exit_code = 2


class ShapeError(TomographyError, ValueError):
    exit_code = 2


class InputError(TomographyError, ValueError):
    exit_code = 2


class ConvergenceError(TomographyError, RuntimeError):
    """Solver stopped before reaching its tolerance.

    ``iterate`` and ``gap`` carry the last primal iterate and duality-gap
    bound so callers can still inspect or use them.
    """

    exit_code = 3

    def __init__(self, message, iterate=None, gap=None):
        super().__init__(message)
        self.iterate = iterate
        self.gap = gap


class ArtifactIOError(TomographyError, OSError):
    """An input file could not be read or an artefact could not be written."""

    exit_code = 4
