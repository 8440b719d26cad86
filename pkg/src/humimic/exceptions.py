"""
Exception hierarchy for humimic.

Every error raised on purpose by the package derives from ``HumimicError`` so
the CLI can map failures onto exit codes in one place.
"""

from typing import Optional


class HumimicError(Exception):
    """Base class for all humimic errors."""


class ContractViolation(HumimicError, ValueError):
    """A caller broke an operation's precondition (shape, rank, scalar output)."""


# --- robot model parsing -------------------------------------------------


class ModelParseError(HumimicError):
    """Robot model description could not be turned into a kinematic tree."""

    def __init__(self, message: str, element: Optional[str] = None):
        self.element = element
        if element is not None:
            message = f"{message} (element: {element!r})"
        super().__init__(message)


class MalformedDocumentError(ModelParseError):
    pass


class MissingLinkError(ModelParseError):
    pass


class CyclicTreeError(ModelParseError):
    pass


class MissingLimitError(ModelParseError):
    pass


class UnsupportedJointError(ModelParseError):
    pass


# --- configuration -------------------------------------------------------


class ConfigError(HumimicError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


# --- optimization --------------------------------------------------------


class FitFailure(HumimicError):
    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} at iteration {iteration}")


class TrainingDivergence(HumimicError):
    def __init__(self, stage: str, index: int, detail: str = ""):
        self.stage = stage
        self.index = index
        text = f"{stage} diverged at {index}"
        if detail:
            text = f"{text}: {detail}"
        super().__init__(text)


# --- datasets and checkpoints -------------------------------------------


class DatasetError(HumimicError):
    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path is not None:
            message = f"{message}: {path}"
        super().__init__(message)


class DatasetVersionError(DatasetError):
    pass


class TruncatedArrayError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class CheckpointError(HumimicError):
    pass


# --- environment / eval --------------------------------------------------


class EnvFault(HumimicError):
    """Simulation produced a non-finite state."""


class AcceptanceFailure(HumimicError):
    """Evaluation metrics fell below the configured thresholds."""


__all__ = [
    "HumimicError",
    "ContractViolation",
    "ModelParseError",
    "MalformedDocumentError",
    "MissingLinkError",
    "CyclicTreeError",
    "MissingLimitError",
    "UnsupportedJointError",
    "ConfigError",
    "FitFailure",
    "TrainingDivergence",
    "DatasetError",
    "DatasetVersionError",
    "TruncatedArrayError",
    "ChecksumError",
    "CheckpointError",
    "EnvFault",
    "AcceptanceFailure",
]
