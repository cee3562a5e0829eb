"""Domain error taxonomy.

Every error the library raises on purpose derives from PipelineError so
callers (and the CLI) can separate domain failures from genuine bugs.
"""


class PipelineError(Exception):
    """Base class for all domain errors raised by this package."""


# image I/O
class UnsupportedFormat(PipelineError):
    pass


class CorruptData(PipelineError):
    pass


# metric preconditions
class DimensionMismatch(PipelineError):
    pass


class ImageTooSmall(PipelineError):
    pass


class PopulationTooSmall(PipelineError):
    pass


class InconsistentMetricSets(PipelineError):
    pass


# degradation synthesis
class UnknownTask(PipelineError):
    pass


class ParamOutOfRange(PipelineError):
    pass


class TooManyTasks(PipelineError):
    pass


# tool registry
class DuplicateToolId(PipelineError):
    pass


class FrozenRegistry(PipelineError):
    pass


class UnfrozenRegistry(PipelineError):
    pass


class UnknownTool(PipelineError):
    pass


class TaskWithoutTool(PipelineError):
    pass


class ExternalToolFailure(PipelineError):
    pass


class ExternalMetricFailure(PipelineError):
    pass


# decision space
class EmptyPools(PipelineError):
    pass


class DecisionNotInSpace(PipelineError):
    pass


class EmptyPipeline(PipelineError):
    pass


# agent sessions
class BannedStep(PipelineError):
    pass


class RepeatedTask(PipelineError):
    pass


class BudgetExhausted(PipelineError):
    pass


class NothingToRollback(PipelineError):
    pass


class PolicyProtocolViolation(PipelineError):
    pass


class ResponseParseError(PipelineError):
    """Raised when a pipeline string does not match the response grammar."""

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at position {position})")
        self.position = position
