"""Exception taxonomy shared across the engine."""


class StepSearchError(Exception):
    """Base class for engine errors."""


class ConfigError(StepSearchError):
    """Invalid or inconsistent configuration."""


class TransportError(StepSearchError):
    """A backend request failed at the transport level after retries."""


class ProtocolError(StepSearchError):
    """A backend answered with a malformed or out-of-contract response."""


class ScriptingError(StepSearchError):
    """A strict mock was asked for a key its script does not cover."""


class StepGenerationError(StepSearchError):
    """The policy produced no usable step even after a resample."""


class ExpansionError(StepSearchError):
    """Every candidate for a tree expansion failed; the path is aborted."""


class DatasetError(StepSearchError):
    """A dataset file failed validation."""


class ResumeError(StepSearchError):
    """A resume was attempted against an incompatible run."""
