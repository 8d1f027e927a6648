"""Exception hierarchy shared across the package.

Load-time errors carry a 1-based line number pointing at the offending
input line; pipeline-level signals (NoAnswerReachable, BackendFailure)
carry enough state for callers to continue the batch.
"""

from __future__ import annotations


class KSolverError(Exception):
    """Base class for all package errors."""


class GraphLoadError(KSolverError):
    """A knowledge-graph input file failed validation."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class UnknownEntity(GraphLoadError):
    pass


class UnknownRelation(GraphLoadError):
    pass


class SelfLoop(GraphLoadError):
    pass


class MalformedLine(GraphLoadError):
    pass


class InvalidEntity(KSolverError):
    """An entity id outside the vocabulary range."""


class NotFound(KSolverError):
    """A lookup by name or id found nothing."""


class SchemaViolation(KSolverError):
    """A QA input line does not match the expected JSON schema."""

    def __init__(self, line_number: int, field: str, message: str = ""):
        self.line_number = line_number
        self.field = field
        detail = f" ({message})" if message else ""
        super().__init__(f"line {line_number}: field '{field}'{detail}")


class NoAnswerReachable(KSolverError):
    """No answer choice has any entity reachable within the hop budget.

    Carries the empty subgraph and the per-choice reachability map so the
    caller can fall back without re-extracting.
    """

    def __init__(self, instance_id: str, subgraph, reachability: dict):
        self.instance_id = instance_id
        self.subgraph = subgraph
        self.reachability = reachability
        super().__init__(f"no reachable answer entity for instance {instance_id!r}")


class EmptyNeighborList(KSolverError):
    """encode_step was handed zero neighbors."""


class NoCorrectEntity(KSolverError):
    """The keyed correct choice grounds to nothing in the subgraph."""

    def __init__(self, instance_id: str):
        self.instance_id = instance_id
        super().__init__(f"no correct-choice entity in subgraph for {instance_id!r}")


class BackendFailure(KSolverError):
    """A decision backend gave up after exhausting its retry budget."""

    def __init__(self, message: str, round_index: int | None = None, trace=None):
        self.round_index = round_index
        self.trace = trace
        super().__init__(message)


class AuthFailure(KSolverError):
    """The remote endpoint rejected the credentials (non-retryable)."""


class SchemaError(KSolverError):
    """The remote endpoint returned an unparseable response body."""


class JudgeParseError(KSolverError):
    """The remote judge replied with something other than 0 or 1."""
