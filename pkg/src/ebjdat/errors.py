"""Exception hierarchy shared across the package.

Everything raised on purpose derives from EbjdatError so callers can catch
library failures without swallowing genuine bugs.
"""
from __future__ import annotations


class EbjdatError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EbjdatError):
    """Invalid configuration: bad value, unknown key, unknown kind."""


class DimensionError(EbjdatError):
    """Shape or dimensionality mismatch between arrays."""


class DomainError(EbjdatError):
    """Input violates a value constraint (label range, box, epsilon ball)."""


class NonFiniteError(EbjdatError):
    """A NaN or Inf showed up where only finite values are allowed."""


class UsageError(EbjdatError):
    """API misuse, e.g. backward on a non-scalar or on a consumed graph."""


class SamplerDivergenceError(EbjdatError):
    """Langevin chain produced a non-finite gradient."""


class AttackDivergenceError(EbjdatError):
    """Adversarial ascent produced a non-finite gradient."""


class CheckpointError(EbjdatError):
    """Checkpoint file is unreadable: bad magic, version, or truncation."""


class TrainingAborted(EbjdatError):
    """Training stopped after repeated divergent steps.

    Carries the epoch where the run collapsed so callers can report it.
    """

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training aborted at epoch {epoch}")
