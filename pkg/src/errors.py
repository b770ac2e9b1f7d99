"""Exception hierarchy; every class carries the CLI exit code of its failure class."""

from src import config


class WorkbenchError(Exception):
    exit_code = 1


# ────────────────────── Configuration / data ──────────────────────


class ConfigError(WorkbenchError, ValueError):
    exit_code = config.EXIT_CONFIG


class DimensionError(WorkbenchError, ValueError):
    exit_code = config.EXIT_CONFIG


class DataError(WorkbenchError, ValueError):
    exit_code = config.EXIT_CONFIG


class SequenceTooShortError(DataError):
    pass


class NoValidSlotsError(DataError):
    pass


class DataLeakError(DataError):
    """Adaptation and evaluation slots overlap."""


# ────────────────────── Artifacts ──────────────────────


class ArtifactIOError(WorkbenchError, OSError):
    exit_code = config.EXIT_IO


class FormatError(ArtifactIOError):
    pass


class TruncatedFileError(ArtifactIOError):
    pass


class ChecksumError(ArtifactIOError):
    pass


class VersionError(ArtifactIOError):
    def __init__(self, found, expected):
        super().__init__(f"unsupported format version {found} (expected {expected})")
        self.found = found
        self.expected = expected


class MissingArtifactError(ArtifactIOError):
    pass


# ────────────────────── Numerics ──────────────────────


class NumericalError(WorkbenchError, ArithmeticError):
    exit_code = config.EXIT_NUMERICAL


class DivergenceError(NumericalError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss
