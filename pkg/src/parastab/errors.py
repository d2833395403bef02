"""Exception types shared across the package."""


class ParastabError(Exception):
    """Base class for all package-specific failures."""


class MeshMismatchError(ParastabError):
    """Two objects built on different meshes were combined."""


class SingularShiftError(ParastabError):
    """The shifted operator sigma*I - A_h is singular or numerically so."""


class ConvergenceError(ParastabError):
    """An iterative method hit its cap before reaching tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BlowUpError(ParastabError):
    """A trajectory left the guard region; carries a divergence report."""

    def __init__(self, message, step, t, norm, limit):
        super().__init__(message)
        self.step = step
        self.t = t
        self.norm = norm
        self.limit = limit


class NotStabilizableError(ParastabError):
    """No stabilizing feedback gain could be constructed."""


class CapExceededError(ParastabError):
    """A configuration exceeds the desk-scale caps and no override is set."""


class ConfigError(ParastabError):
    """A configuration file failed schema or semantic validation.

    ``pointer`` is the JSON-pointer path of the offending field.
    """

    def __init__(self, message, pointer=""):
        super().__init__(message)
        self.pointer = pointer
