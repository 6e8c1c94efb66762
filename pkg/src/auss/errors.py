"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AussError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AussError):
    """A configuration value is missing, unknown, or out of range."""


class UnknownStudentError(AussError):
    """A student id was used that is not part of the cohort."""


class CohortFormatError(AussError):
    """A cohort interchange file is malformed.

    Carries the offending path and, when known, the 1-based line number.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


class BusCapacityError(AussError):
    """Publish rejected because the pending queue is at capacity."""


class UnknownSubscriberError(AussError):
    """Subscription attempted for a subscriber id never registered."""


class SchedulerProtocolError(AussError):
    """A scheduler-facing protocol was violated (e.g. duplicate tick delivery)."""


class PhaseDisciplineError(AussError):
    """An agent tried to publish outside its act phase."""


class AgentPhaseError(AussError):
    """An agent phase raised; identifies agent, tick, and phase."""

    def __init__(self, agent: str, tick: int, phase: str, cause: BaseException):
        self.agent = agent
        self.tick = tick
        self.phase = phase
        self.cause = cause
        super().__init__(f"agent {agent!r} failed in phase {phase!r} at tick {tick}: {cause!r}")


class UntrainedModelError(AussError):
    """Prediction requested before the model was fitted."""


class InsufficientDataError(AussError):
    """Not enough (or not varied enough) labeled data to fit a model."""


class MetricInputError(AussError):
    """Metric inputs are empty or do not line up."""


class TranscriptError(AussError):
    """A transcript file is unusable."""


class TranscriptVersionError(TranscriptError):
    """Transcript was written by an incompatible format version."""


class TranscriptChecksumError(TranscriptError):
    """Transcript content does not match its recorded checksum."""


class StageError(AussError):
    """A pipeline stage failed; names the stage and chains the cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
