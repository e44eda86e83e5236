"""HTTP surface: task bundles, the external-HIT handshake, event ingestion,
submission, and admin CRUD.

Sessions and submitted data live in the store; open-session event logs are
in-memory and persisted atomically at submit.
"""

from __future__ import annotations

import secrets
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from fastapi import Depends, FastAPI, Request, Response
from fastapi.responses import HTMLResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import __version__
from .audit import (
    SessionEventLog,
    auditor_rows_for_log,
    events_from_wire,
    extract_fingerprint,
    finalize_log,
    validate_event,
)
from .domain import (
    OrderingMode,
    StepDefinition,
    StepKind,
    TaskDefinition,
    TaskStatus,
    builtin_registry,
    close_task,
    create_task,
    instantiate_step_order,
    publish_task,
)
from .errors import (
    AlreadyFinalized,
    DuplicateAnswer,
    DuplicateAssignment,
    DuplicateAuditor,
    DuplicateKind,
    EmptyTask,
    EndBeforeEvents,
    IllegalTransition,
    InvalidStep,
    MalformedAnswer,
    MissingAsset,
    MissingRequiredAnswer,
    SessionClosed,
    TaskNotFound,
    TaskNotPublished,
    TurkeyError,
    Unauthorized,
    UnknownAuditorKind,
    UnknownSession,
)
from .store import SessionRow, Store
from .xmlio import serialize_export

PREVIEW_ASSIGNMENT_ID = "ASSIGNMENT_ID_NOT_AVAILABLE"
MAX_TEXT_ANSWER_BYTES = 64 * 1024

_STATUS_BY_ERROR: dict[type, int] = {
    TaskNotFound: 404,
    UnknownSession: 404,
    Unauthorized: 401,
    DuplicateAssignment: 409,
    SessionClosed: 409,
    TaskNotPublished: 409,
    IllegalTransition: 409,
    AlreadyFinalized: 409,
    InvalidStep: 422,
    UnknownAuditorKind: 422,
    DuplicateAuditor: 422,
    DuplicateKind: 422,
    MissingAsset: 422,
    EmptyTask: 422,
    MissingRequiredAnswer: 422,
    MalformedAnswer: 422,
    DuplicateAnswer: 422,
    EndBeforeEvents: 422,
}


@dataclass(frozen=True)
class ServiceConfig:
    db_path: str = ":memory:"
    admin_token: str = "change-me"
    asset_roots: tuple[str, ...] = ()
    session_ttl_secs: int = 4 * 3600
    static_root: str | None = None
    fixed_time: str | None = None  # ISO timestamp pinning the clock for reproducible runs


@dataclass
class _SessionRuntime:
    log: SessionEventLog
    acks: dict[int, dict[str, Any]] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


class TurkeyService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.store = Store(config.db_path)
        self.registry = builtin_registry([Path(r) for r in config.asset_roots])
        self._runtimes: dict[str, _SessionRuntime] = {}
        self._runtimes_lock = threading.Lock()
        self._fixed_now = (
            datetime.fromisoformat(config.fixed_time) if config.fixed_time else None
        )
        if self._fixed_now is not None and self._fixed_now.tzinfo is None:
            self._fixed_now = self._fixed_now.replace(tzinfo=timezone.utc)

    def now(self) -> datetime:
        return self._fixed_now if self._fixed_now is not None else datetime.now(timezone.utc)

    def close(self) -> None:
        self.store.close()

    # --- helpers ---

    def _runtime_for(self, session: SessionRow) -> _SessionRuntime:
        with self._runtimes_lock:
            runtime = self._runtimes.get(session.token)
            if runtime is None:
                task = self.store.get_task(session.task_id)
                runtime = _SessionRuntime(
                    log=SessionEventLog(
                        session_token=session.token,
                        allowed_kinds=frozenset(task.auditors),
                        registry=self.registry,
                    )
                )
                self._runtimes[session.token] = runtime
            return runtime

    def _open_session(self, token: str) -> SessionRow:
        session = self.store.get_session(token)
        if session.state != "open":
            raise SessionClosed(token, session.state)
        return session

    def sweep_stale_sessions(self) -> int:
        return len(
            self.store.abandon_stale_sessions(self.now(), self.config.session_ttl_secs)
        )

    # --- operations backing the endpoints ---

    def task_bundle(
        self,
        task_id: str,
        *,
        assignment_id: str,
        hit_id: str,
        worker_id: str,
        turk_submit_to: str,
    ) -> dict[str, Any]:
        self.sweep_stale_sessions()
        task = self.store.get_task(task_id)
        if task.status is not TaskStatus.PUBLISHED:
            raise TaskNotPublished(task_id)

        if assignment_id == PREVIEW_ASSIGNMENT_ID:
            return self._bundle_json(task, task.step_ids(), token="", preview=True)

        token = secrets.token_hex(16)
        if not assignment_id:
            # Standalone test mode: no Turk handshake, still a live session.
            assignment_id = f"standalone-{token[:12]}"
        order = instantiate_step_order(task, token)
        self.store.create_session(
            SessionRow(
                token=token,
                task_id=task_id,
                worker_id=worker_id or "anonymous",
                assignment_id=assignment_id,
                hit_id=hit_id,
                turk_submit_to=turk_submit_to,
                step_order=order,
                started_at=self.now(),
                state="open",
            )
        )
        session = self.store.get_session(token)
        self._runtime_for(session)
        return self._bundle_json(task, order.permutation, token=token, preview=False)

    def _bundle_json(
        self, task: TaskDefinition, order: tuple[str, ...], *, token: str, preview: bool
    ) -> dict[str, Any]:
        steps_by_id = {s.step_id: s for s in task.steps}
        return {
            "task_id": task.task_id,
            "name": task.name,
            "description": task.description,
            "steps": [self._runner_step_json(steps_by_id[sid]) for sid in order],
            "auditors": [
                {
                    "kind": kind,
                    "script": f"/assets/{self.registry.auditor(kind).client_script_ref}",
                }
                for kind in sorted(task.auditors)
            ],
            "session_token": token,
            "preview": preview,
        }

    def _runner_step_json(self, step: StepDefinition) -> dict[str, Any]:
        doc = _step_json(step)
        if step.kind is StepKind.CUSTOM and step.plugin_kind:
            plugin = self.registry.step_plugin(step.plugin_kind)
            if plugin is not None:
                doc["template"] = f"/assets/{plugin.render_template_ref}"
                if plugin.client_script_ref is not None:
                    doc["script"] = f"/assets/{plugin.client_script_ref}"
        return doc

    def ingest_batch(self, token: str, batch_seq: int, raw_events: list[Any]) -> dict[str, Any]:
        session = self._open_session(token)
        runtime = self._runtime_for(session)
        with runtime.lock:
            if batch_seq in runtime.acks:
                return runtime.acks[batch_seq]
            accepted = 0
            rejected: list[dict[str, Any]] = []
            for index, event in enumerate(events_from_wire(raw_events)):
                reason = (
                    "malformed_payload"
                    if event is None
                    else validate_event(event, runtime.log)
                )
                if reason is None:
                    accepted += 1
                else:
                    rejected.append({"index": index, "reason": reason})
            ack = {"accepted": accepted, "rejected": rejected}
            runtime.acks[batch_seq] = ack
            return ack

    def submit_response(
        self,
        token: str,
        *,
        answers: list[tuple[str, Any]],
        raw_events: list[Any],
        end_ms: int,
    ) -> dict[str, Any]:
        session = self._open_session(token)
        task = self.store.get_task(session.task_id)
        runtime = self._runtime_for(session)
        with runtime.lock:
            canonical = _validate_answers(task, answers, self.registry)
            # Work on a copy: nothing observable changes unless the store
            # transaction commits.
            work = runtime.log.copy()
            for event in events_from_wire(raw_events):
                if event is not None:
                    validate_event(event, work)
            finalize_log(work)
            session_end = max(end_ms, work.last_event_ms())
            fingerprint = extract_fingerprint(work, session_end)
            rows = [
                (desc.model_label, values)
                for desc, values in auditor_rows_for_log(work, task.auditors, self.registry)
            ]
            response_pk = self.store.persist_submission(
                token,
                answers=canonical,
                auditor_rows=rows,
                fingerprint=fingerprint,
                submitted_at=self.now(),
            )
            runtime.log = work

        turk = session.turk_submit_to.rstrip("/")
        return {
            "response_pk": response_pk,
            "redirect": {
                "url": f"{turk}/mturk/externalSubmit" if turk else "",
                "fields": {
                    "assignmentId": session.assignment_id,
                    "response_pk": str(response_pk),
                },
            },
        }

    def create_task_from_spec(self, spec: "TaskSpecIn") -> str:
        steps = []
        for index, step in enumerate(spec.steps):
            try:
                kind = StepKind(step.kind)
            except ValueError:
                raise InvalidStep(
                    {step.step_id or f"s{index + 1}": [f"unknown step kind {step.kind!r}"]}
                ) from None
            steps.append(
                StepDefinition(
                    step_id=step.step_id or f"s{index + 1}",
                    kind=kind,
                    prompt=step.prompt,
                    options=tuple(step.options),
                    required=step.required,
                    plugin_kind=step.plugin_kind,
                )
            )
        try:
            ordering = OrderingMode(spec.ordering_mode)
        except ValueError:
            raise InvalidStep({"task": [f"unknown ordering_mode {spec.ordering_mode!r}"]}) from None
        task = create_task(
            self.registry,
            name=spec.name,
            description=spec.description,
            steps=steps,
            ordering_mode=ordering,
            auditors=spec.auditors,
            task_id=self.store.next_task_id(),
            created_at=self.now(),
        )
        self.store.insert_task(task)
        return task.task_id

    def set_task_status(self, task_id: str, action: str) -> dict[str, str]:
        task = self.store.get_task(task_id)
        updated = publish_task(task) if action == "publish" else close_task(task)
        self.store.update_task_status(task_id, updated.status)
        return {"task_id": task_id, "status": updated.status.value}

    def export_xml(self, task_id: str) -> bytes:
        return serialize_export(self.store.task_snapshot(task_id), self.registry)


def _step_json(step: StepDefinition) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "step_id": step.step_id,
        "kind": step.kind.value,
        "prompt": step.prompt,
        "options": list(step.options),
        "required": step.required,
    }
    if step.plugin_kind is not None:
        doc["plugin_kind"] = step.plugin_kind
    return doc


def _is_plain_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _validate_answers(task, answers, registry) -> list[tuple[str, Any]]:
    steps_by_id = {s.step_id: s for s in task.steps}
    seen: set[str] = set()
    canonical: list[tuple[str, Any]] = []
    for step_id, value in answers:
        step = steps_by_id.get(step_id)
        if step is None:
            raise MalformedAnswer(step_id, "no such step in this task")
        if step_id in seen:
            raise DuplicateAnswer(step_id)
        seen.add(step_id)
        canonical.append((step_id, _canonical_answer(step, value, registry)))
    for step in task.steps:
        if step.required and step.step_id not in seen:
            raise MissingRequiredAnswer(step.step_id)
    return canonical


def _canonical_answer(step: StepDefinition, value: Any, registry) -> Any:
    sid = step.step_id
    if step.kind is StepKind.MULTIPLE_CHOICE:
        if not _is_plain_int(value) or not 0 <= value < len(step.options):
            raise MalformedAnswer(sid, "expected one option index in range")
        return value
    if step.kind is StepKind.MULTIPLE_ANSWER:
        if not isinstance(value, list) or not all(_is_plain_int(v) for v in value):
            raise MalformedAnswer(sid, "expected a list of option indices")
        if len(set(value)) != len(value):
            raise MalformedAnswer(sid, "option indices must be distinct")
        if any(not 0 <= v < len(step.options) for v in value):
            raise MalformedAnswer(sid, "option index out of range")
        if step.required and not value:
            raise MalformedAnswer(sid, "required step needs a nonempty selection")
        return sorted(value)
    if step.kind is StepKind.TEXT_RESPONSE:
        if not isinstance(value, str):
            raise MalformedAnswer(sid, "expected a string")
        if len(value.encode("utf-8")) > MAX_TEXT_ANSWER_BYTES:
            raise MalformedAnswer(sid, "text exceeds 64 KiB")
        if step.required and value == "":
            raise MalformedAnswer(sid, "required step needs a nonempty response")
        return value
    plugin = registry.step_plugin(step.plugin_kind or "")
    if plugin is None:
        raise MalformedAnswer(sid, f"unknown plugin kind {step.plugin_kind!r}")
    if not isinstance(value, dict):
        raise MalformedAnswer(sid, "expected an object matching the answer schema")
    expected = dict(plugin.answer_schema)
    if set(value) != set(expected):
        raise MalformedAnswer(sid, f"answer fields must be exactly {sorted(expected)}")
    for name, scalar in expected.items():
        v = value[name]
        ok = (
            (scalar == "integer" and _is_plain_int(v))
            or (scalar == "float" and (_is_plain_int(v) or isinstance(v, float)))
            or (scalar == "string" and isinstance(v, str))
        )
        if not ok:
            raise MalformedAnswer(sid, f"field {name!r} must be a {scalar}")
    return {name: value[name] for name, _ in plugin.answer_schema}


# --- wire models ---


class StepIn(BaseModel):
    kind: str
    prompt: str
    step_id: str | None = None
    options: list[str] = []
    required: bool = True
    plugin_kind: str | None = None


class TaskSpecIn(BaseModel):
    name: str
    description: str = ""
    ordering_mode: str = "fixed"
    steps: list[StepIn] = []
    auditors: list[str] = []


class BatchIn(BaseModel):
    batch_seq: int
    events: list[Any] = []


class AnswerIn(BaseModel):
    step_id: str
    value: Any = None


class SubmitIn(BaseModel):
    answers: list[AnswerIn] = []
    events: list[Any] = []
    end_ms: int = 0


_RUNNER_SHELL = """<!doctype html>
<html>
<head>
<meta charset="utf-8">
<meta name="viewport" content="width=device-width, initial-scale=1">
<title>Task</title>
<link rel="stylesheet" href="/runner/runner.css">
</head>
<body>
<div id="turkey-runner" data-task-id="{task_id}">
  <noscript>This task requires JavaScript.</noscript>
</div>
<script type="module" src="/runner/runner.js"></script>
</body>
</html>
"""


def create_app(config: ServiceConfig) -> FastAPI:
    service = TurkeyService(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        service.close()

    app = FastAPI(title="turkey", version=__version__, lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(TurkeyError)
    async def turkey_error_handler(request: Request, exc: TurkeyError):
        status = _STATUS_BY_ERROR.get(type(exc), 500)
        payload: dict[str, Any] = {"error": type(exc).__name__, "detail": str(exc)}
        step_id = getattr(exc, "step_id", None)
        if step_id is not None:
            payload["step_id"] = step_id
        return JSONResponse(status_code=status, content=payload)

    def require_admin(request: Request) -> None:
        header = request.headers.get("authorization", "")
        if header != f"Bearer {service.config.admin_token}":
            raise Unauthorized()

    @app.get("/healthz")
    def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.get("/t/{task_id}")
    def get_task_page(
        task_id: str,
        request: Request,
        assignmentId: str = "",
        hitId: str = "",
        workerId: str = "",
        turkSubmitTo: str = "",
    ):
        if "application/json" in request.headers.get("accept", ""):
            return JSONResponse(
                service.task_bundle(
                    task_id,
                    assignment_id=assignmentId,
                    hit_id=hitId,
                    worker_id=workerId,
                    turk_submit_to=turkSubmitTo,
                )
            )
        return HTMLResponse(_RUNNER_SHELL.format(task_id=task_id))

    @app.post("/api/v1/tasks", status_code=201, dependencies=[Depends(require_admin)])
    def api_create_task(spec: TaskSpecIn):
        return {"task_id": service.create_task_from_spec(spec)}

    @app.get("/api/v1/tasks", dependencies=[Depends(require_admin)])
    def api_list_tasks():
        service.sweep_stale_sessions()
        return service.store.list_tasks()

    @app.post("/api/v1/tasks/{task_id}/publish", dependencies=[Depends(require_admin)])
    def api_publish(task_id: str):
        return service.set_task_status(task_id, "publish")

    @app.post("/api/v1/tasks/{task_id}/close", dependencies=[Depends(require_admin)])
    def api_close(task_id: str):
        return service.set_task_status(task_id, "close")

    @app.get("/api/v1/tasks/{task_id}/export.xml", dependencies=[Depends(require_admin)])
    def api_export(task_id: str):
        return Response(content=service.export_xml(task_id), media_type="application/xml")

    @app.get("/api/v1/registry", dependencies=[Depends(require_admin)])
    def api_registry():
        auditors = []
        for kind in sorted(service.registry.auditor_kinds()):
            desc = service.registry.auditor(kind)
            auditors.append(
                {
                    "kind": desc.kind,
                    "model_label": desc.model_label,
                    "aggregation": desc.aggregation.value,
                    "fields": [list(pair) for pair in desc.field_schema],
                }
            )
        return {
            "auditors": auditors,
            "step_kinds": sorted(
                set(service.registry.step_plugin_kinds()) | {"multiple_choice", "multiple_answer", "text_response"}
            ),
        }

    @app.post("/api/v1/sessions/{token}/events")
    def api_events(token: str, batch: BatchIn):
        return service.ingest_batch(token, batch.batch_seq, batch.events)

    @app.post("/api/v1/sessions/{token}/submit")
    def api_submit(token: str, body: SubmitIn):
        return service.submit_response(
            token,
            answers=[(a.step_id, a.value) for a in body.answers],
            raw_events=body.events,
            end_ms=body.end_ms,
        )

    @app.get("/assets/{ref:path}")
    def api_asset(ref: str):
        path = service.registry.resolve_asset(ref)
        if path is None:
            return JSONResponse(status_code=404, content={"error": "AssetNotFound"})
        media = "application/javascript" if path.suffix == ".js" else "text/html"
        return Response(content=path.read_bytes(), media_type=media)

    if config.static_root:
        static = Path(config.static_root)
        for mount in ("runner", "admin"):
            directory = static / mount
            if directory.is_dir():
                app.mount(f"/{mount}", StaticFiles(directory=directory, html=True), name=mount)

    return app
