"""Exception types shared across the package."""


class CiailError(Exception):
    """Base class for all package errors."""


class DimensionError(CiailError):
    """Array shapes do not line up with the declared layer/interface widths."""


class StaleTapeError(CiailError):
    """A tape was replayed after one of its parameters was mutated."""


class TrainingDivergenceError(CiailError):
    """A non-finite quantity reached an optimizer step."""


class EpisodeFinishedError(CiailError):
    """step() was called on an environment whose episode already ended."""


class ConfigError(CiailError):
    """Invalid, unknown, or out-of-range configuration value."""


class ContractError(CiailError):
    """A caller violated an operation precondition."""


class DegenerateSettingError(CiailError):
    """A setting batch ended up with only one label class; caller should re-draw."""


class EmptyBucketError(CiailError):
    """A filtered replay-buffer sample matched no stored transitions."""


class GroundTruthLeakError(CiailError):
    """An evaluation-only ground-truth reward reached a gradient computation."""


class CheckpointError(CiailError):
    """A checkpoint or demo file is malformed or does not match the env."""


class ReportParseError(CiailError):
    """A metrics/summary CSV could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
