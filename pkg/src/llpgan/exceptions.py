"""Exception types shared across the package."""


class LLPError(Exception):
    """Base class for every error raised by llpgan."""


class ConfigurationError(LLPError):
    """An option combination, shape, or setting that cannot be used."""


class InvalidBagError(LLPError):
    """A bag violates its contract (empty, duplicated indices, bad sizes)."""


class LabelDomainError(LLPError):
    """A label lies outside [0, K-1]."""


class NumericDomainError(LLPError):
    """Non-finite values where finite ones are required."""


class ManifestError(LLPError):
    """Base class for bag-manifest persistence failures."""


class ManifestParseError(ManifestError):
    """Malformed manifest content; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ManifestValidationError(ManifestError):
    """Manifest parsed cleanly but violates a bag invariant."""


class DatasetResolutionError(ConfigurationError):
    """A dataset name could not be resolved to data on this machine."""


class CheckpointError(LLPError):
    """Base class for checkpoint save/restore failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint file unreadable or structurally broken."""


class UndefinedPointError(LLPError):
    """Queried a support point carrying zero real mass."""


class ConvergenceError(LLPError):
    """An iterative solver missed its tolerance; carries the best iterate."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class TrainingDivergedError(LLPError):
    """A training loss went non-finite; carries a diagnostic snapshot."""

    def __init__(self, message, step=None, snapshot=None):
        super().__init__(message)
        self.step = step
        self.snapshot = snapshot
