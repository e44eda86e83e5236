"""Exception taxonomy shared across the service."""

from __future__ import annotations


class TurkeyError(Exception):
    """Base class for all domain and service errors."""


# --- task and plugin registry ---


class UnknownAuditorKind(TurkeyError):
    def __init__(self, kind: str):
        super().__init__(f"auditor kind not registered: {kind!r}")
        self.kind = kind


class DuplicateAuditor(TurkeyError):
    def __init__(self, kind: str):
        super().__init__(f"auditor kind listed more than once: {kind!r}")
        self.kind = kind


class InvalidStep(TurkeyError):
    """Carries every violated invariant, keyed by step id."""

    def __init__(self, violations: dict[str, list[str]]):
        lines = "; ".join(f"{sid}: {', '.join(v)}" for sid, v in violations.items())
        super().__init__(f"invalid step definition(s): {lines}")
        self.violations = violations


class EmptyTask(TurkeyError):
    def __init__(self, task_id: str):
        super().__init__(f"task {task_id!r} has no steps and cannot be published")
        self.task_id = task_id


class IllegalTransition(TurkeyError):
    def __init__(self, current: str, target: str):
        super().__init__(f"illegal status transition {current} -> {target}")
        self.current = current
        self.target = target


class DuplicateKind(TurkeyError):
    def __init__(self, kind: str):
        super().__init__(f"plugin kind already registered: {kind!r}")
        self.kind = kind


class MissingAsset(TurkeyError):
    def __init__(self, ref: str):
        super().__init__(f"asset reference does not resolve to a file: {ref!r}")
        self.ref = ref


class InvalidDescriptor(TurkeyError):
    pass


class TaskNotPublished(TurkeyError):
    def __init__(self, task_id: str):
        super().__init__(f"task {task_id!r} is not published")
        self.task_id = task_id


class TaskNotFound(TurkeyError):
    def __init__(self, task_id: str):
        super().__init__(f"task not found: {task_id!r}")
        self.task_id = task_id


# --- event log aggregation ---


class AlreadyFinalized(TurkeyError):
    pass


class NotFinalized(TurkeyError):
    pass


class EndBeforeEvents(TurkeyError):
    def __init__(self, end_ms: int, last_ms: int):
        super().__init__(f"session_end_ms {end_ms} precedes last event at {last_ms}")
        self.end_ms = end_ms
        self.last_ms = last_ms


# --- sessions and submission ---


class UnknownSession(TurkeyError):
    def __init__(self, token: str):
        super().__init__(f"unknown session token: {token!r}")
        self.token = token


class SessionClosed(TurkeyError):
    def __init__(self, token: str, state: str):
        super().__init__(f"session {token!r} is {state}, not open")
        self.token = token
        self.state = state


class DuplicateAssignment(TurkeyError):
    def __init__(self, task_id: str, assignment_id: str):
        super().__init__(
            f"a live session already exists for task {task_id!r}, assignment {assignment_id!r}"
        )
        self.task_id = task_id
        self.assignment_id = assignment_id


class MissingRequiredAnswer(TurkeyError):
    def __init__(self, step_id: str):
        super().__init__(f"required step {step_id!r} has no answer")
        self.step_id = step_id


class MalformedAnswer(TurkeyError):
    def __init__(self, step_id: str, reason: str):
        super().__init__(f"answer for step {step_id!r} is malformed: {reason}")
        self.step_id = step_id
        self.reason = reason


class DuplicateAnswer(TurkeyError):
    def __init__(self, step_id: str):
        super().__init__(f"step {step_id!r} answered more than once")
        self.step_id = step_id


class Unauthorized(TurkeyError):
    def __init__(self) -> None:
        super().__init__("missing or invalid admin token")


# --- persistence and export ---


class StorageFailure(TurkeyError):
    pass


class MalformedXml(TurkeyError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"malformed XML at line {line}: {reason}")
        self.line = line
        self.reason = reason


class SchemaViolation(TurkeyError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"export schema violation at {path}: {reason}")
        self.path = path
        self.reason = reason
