"""Embedded transactional persistence: tasks, sessions, responses, auditor rows.

Single sqlite file behind one connection; a lock serializes transactions, so
every reader sees a consistent snapshot and writes are atomic.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

from .audit import FINGERPRINT_FIELDS, FingerprintVector, fingerprint_from_mapping
from .domain import (
    OrderingMode,
    StepDefinition,
    StepKind,
    StepOrder,
    TaskDefinition,
    TaskStatus,
)
from .errors import DuplicateAssignment, StorageFailure, TaskNotFound, UnknownSession

RESPONSE_MODEL = "survey.response"
STEP_ANSWER_MODEL = "survey.stepanswer"

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS pk_counters (
    label TEXT PRIMARY KEY,
    allocated INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
    task_id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    description TEXT NOT NULL,
    ordering_mode TEXT NOT NULL,
    status TEXT NOT NULL,
    created_at TEXT NOT NULL,
    steps_json TEXT NOT NULL,
    auditors_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
    token TEXT PRIMARY KEY,
    task_id TEXT NOT NULL REFERENCES tasks(task_id),
    worker_id TEXT NOT NULL,
    assignment_id TEXT NOT NULL,
    hit_id TEXT NOT NULL,
    turk_submit_to TEXT NOT NULL,
    seed TEXT NOT NULL,
    step_order_json TEXT NOT NULL,
    started_at TEXT NOT NULL,
    state TEXT NOT NULL
);
CREATE UNIQUE INDEX IF NOT EXISTS idx_sessions_live_assignment
    ON sessions(task_id, assignment_id) WHERE state != 'abandoned';
CREATE TABLE IF NOT EXISTS responses (
    pk INTEGER PRIMARY KEY,
    task_id TEXT NOT NULL REFERENCES tasks(task_id),
    session_token TEXT NOT NULL REFERENCES sessions(token),
    worker_id TEXT NOT NULL,
    assignment_id TEXT NOT NULL,
    hit_id TEXT NOT NULL,
    step_order_seed TEXT NOT NULL,
    answers_json TEXT NOT NULL,
    submitted_at TEXT NOT NULL,
    fingerprint_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS step_rows (
    pk INTEGER PRIMARY KEY,
    response_pk INTEGER NOT NULL REFERENCES responses(pk),
    step_id TEXT NOT NULL,
    value_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS auditor_rows (
    model TEXT NOT NULL,
    pk INTEGER NOT NULL,
    response_pk INTEGER NOT NULL REFERENCES responses(pk),
    values_json TEXT NOT NULL,
    PRIMARY KEY (model, pk)
);
"""


@dataclass(frozen=True)
class SessionRow:
    token: str
    task_id: str
    worker_id: str
    assignment_id: str
    hit_id: str
    turk_submit_to: str
    step_order: StepOrder
    started_at: datetime
    state: str


@dataclass(frozen=True)
class ResponseRow:
    pk: int
    task_id: str
    session_token: str
    worker_id: str
    assignment_id: str
    hit_id: str
    step_order_seed: int
    answers: tuple[tuple[str, Any], ...]
    submitted_at: str
    fingerprint: FingerprintVector


@dataclass(frozen=True)
class AuditorRowRecord:
    model: str
    pk: int
    general_model: int
    values: tuple[Any, ...]


@dataclass(frozen=True)
class StepRowRecord:
    pk: int
    general_model: int
    step_id: str
    value: Any


@dataclass(frozen=True)
class TaskSnapshot:
    task: TaskDefinition
    responses: tuple[ResponseRow, ...]
    step_rows: dict[int, tuple[StepRowRecord, ...]]
    auditor_rows: dict[int, tuple[AuditorRowRecord, ...]]


class Store:
    def __init__(self, path: str | Path):
        self._lock = threading.RLock()
        # Test seam: called with a label at each submit sub-step; an exception
        # raised from it must roll the whole submission back.
        self.fault_hook: Callable[[str], None] | None = None
        try:
            self._conn = sqlite3.connect(str(path), check_same_thread=False)
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA foreign_keys=ON")
            self._conn.executescript(_SCHEMA)
            self._conn.commit()
        except sqlite3.Error as exc:
            raise StorageFailure(f"cannot open store at {path}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    @contextmanager
    def _tx(self) -> Iterator[sqlite3.Cursor]:
        with self._lock:
            cur = self._conn.cursor()
            try:
                cur.execute("BEGIN IMMEDIATE")
                yield cur
                self._conn.commit()
            except BaseException:
                self._conn.rollback()
                raise
            finally:
                cur.close()

    def _fault(self, label: str) -> None:
        if self.fault_hook is not None:
            self.fault_hook(label)

    # --- primary keys ---

    def allocate_pk(self, label: str) -> int:
        """Next pk for the model label: 1 + prior allocations, atomically."""
        with self._tx() as cur:
            return self._allocate_pk_in_tx(cur, label)

    @staticmethod
    def _allocate_pk_in_tx(cur: sqlite3.Cursor, label: str) -> int:
        row = cur.execute(
            """
            INSERT INTO pk_counters (label, allocated) VALUES (?, 1)
            ON CONFLICT(label) DO UPDATE SET allocated = allocated + 1
            RETURNING allocated
            """,
            (label,),
        ).fetchone()
        return int(row[0])

    # --- tasks ---

    def next_task_id(self) -> str:
        return f"t{self.allocate_pk('turkey.task_seq')}"

    def insert_task(self, task: TaskDefinition) -> None:
        with self._tx() as cur:
            cur.execute(
                "INSERT INTO tasks VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    task.task_id,
                    task.name,
                    task.description,
                    task.ordering_mode.value,
                    task.status.value,
                    task.created_at.isoformat(),
                    json.dumps([_step_to_json(s) for s in task.steps]),
                    json.dumps(sorted(task.auditors)),
                ),
            )

    def update_task_status(self, task_id: str, status: TaskStatus) -> None:
        with self._tx() as cur:
            cur.execute(
                "UPDATE tasks SET status = ? WHERE task_id = ?", (status.value, task_id)
            )

    def get_task(self, task_id: str) -> TaskDefinition:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM tasks WHERE task_id = ?", (task_id,)
            ).fetchone()
        if row is None:
            raise TaskNotFound(task_id)
        return _task_from_row(row)

    def list_tasks(self) -> list[dict[str, Any]]:
        with self._lock:
            rows = self._conn.execute(
                """
                SELECT t.task_id, t.name, t.status,
                       (SELECT COUNT(*) FROM responses r WHERE r.task_id = t.task_id)
                FROM tasks t ORDER BY t.task_id
                """
            ).fetchall()
        return [
            {"task_id": r[0], "name": r[1], "status": r[2], "response_count": r[3]}
            for r in rows
        ]

    # --- sessions ---

    def create_session(self, session: SessionRow) -> None:
        try:
            with self._tx() as cur:
                cur.execute(
                    "INSERT INTO sessions VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (
                        session.token,
                        session.task_id,
                        session.worker_id,
                        session.assignment_id,
                        session.hit_id,
                        session.turk_submit_to,
                        str(session.step_order.seed),
                        json.dumps(list(session.step_order.permutation)),
                        session.started_at.isoformat(),
                        session.state,
                    ),
                )
        except sqlite3.IntegrityError as exc:
            raise DuplicateAssignment(session.task_id, session.assignment_id) from exc

    def get_session(self, token: str) -> SessionRow:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM sessions WHERE token = ?", (token,)
            ).fetchone()
        if row is None:
            raise UnknownSession(token)
        return SessionRow(
            token=row[0],
            task_id=row[1],
            worker_id=row[2],
            assignment_id=row[3],
            hit_id=row[4],
            turk_submit_to=row[5],
            step_order=StepOrder(permutation=tuple(json.loads(row[7])), seed=int(row[6])),
            started_at=datetime.fromisoformat(row[8]),
            state=row[9],
        )

    def abandon_stale_sessions(self, now: datetime, ttl_secs: int) -> list[str]:
        """Abandon open sessions older than the TTL; returns their tokens."""
        with self._tx() as cur:
            rows = cur.execute(
                "SELECT token, started_at FROM sessions WHERE state = 'open'"
            ).fetchall()
            stale = [
                token
                for token, started in rows
                if (now - datetime.fromisoformat(started)).total_seconds() > ttl_secs
            ]
            cur.executemany(
                "UPDATE sessions SET state = 'abandoned' WHERE token = ?",
                [(t,) for t in stale],
            )
        return stale

    # --- submission (atomic) ---

    def persist_submission(
        self,
        token: str,
        *,
        answers: Sequence[tuple[str, Any]],
        auditor_rows: Sequence[tuple[str, Sequence[tuple[Any, ...]]]],
        fingerprint: FingerprintVector,
        submitted_at: datetime,
    ) -> int:
        """Write response + step rows + auditor rows and close the session.

        The whole write is one transaction: a failure at any sub-step leaves
        the store exactly as before the call.
        """
        try:
            with self._tx() as cur:
                sess = cur.execute(
                    "SELECT task_id, worker_id, assignment_id, hit_id, seed, state"
                    " FROM sessions WHERE token = ?",
                    (token,),
                ).fetchone()
                if sess is None:
                    raise UnknownSession(token)
                task_id, worker_id, assignment_id, hit_id, seed, state = sess
                if state != "open":
                    raise StorageFailure(f"session {token!r} is {state}")

                self._fault("before_response")
                response_pk = self._allocate_pk_in_tx(cur, RESPONSE_MODEL)
                cur.execute(
                    "INSERT INTO responses VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (
                        response_pk,
                        task_id,
                        token,
                        worker_id,
                        assignment_id,
                        hit_id,
                        seed,
                        json.dumps([[sid, v] for sid, v in answers]),
                        submitted_at.isoformat(),
                        json.dumps(dict(zip(FINGERPRINT_FIELDS, fingerprint.as_row()))),
                    ),
                )
                self._fault("after_response")
                for step_id, value in answers:
                    step_pk = self._allocate_pk_in_tx(cur, STEP_ANSWER_MODEL)
                    cur.execute(
                        "INSERT INTO step_rows VALUES (?, ?, ?, ?)",
                        (step_pk, response_pk, step_id, json.dumps(value)),
                    )
                self._fault("after_step_rows")
                for model, rows in auditor_rows:
                    for values in rows:
                        row_pk = self._allocate_pk_in_tx(cur, model)
                        cur.execute(
                            "INSERT INTO auditor_rows VALUES (?, ?, ?, ?)",
                            (model, row_pk, response_pk, json.dumps(list(values))),
                        )
                self._fault("after_auditor_rows")
                cur.execute(
                    "UPDATE sessions SET state = 'submitted' WHERE token = ?", (token,)
                )
                self._fault("before_commit")
                return response_pk
        except sqlite3.Error as exc:
            raise StorageFailure(str(exc)) from exc

    # --- export reads ---

    def task_snapshot(self, task_id: str) -> TaskSnapshot:
        """One consistent read of everything the export needs for a task."""
        with self._lock:
            task_row = self._conn.execute(
                "SELECT * FROM tasks WHERE task_id = ?", (task_id,)
            ).fetchone()
            if task_row is None:
                raise TaskNotFound(task_id)
            response_rows = self._conn.execute(
                "SELECT * FROM responses WHERE task_id = ? ORDER BY pk", (task_id,)
            ).fetchall()
            pks = [r[0] for r in response_rows]
            step_rows: dict[int, tuple[StepRowRecord, ...]] = {}
            auditor_rows: dict[int, tuple[AuditorRowRecord, ...]] = {}
            for pk in pks:
                srows = self._conn.execute(
                    "SELECT pk, step_id, value_json FROM step_rows"
                    " WHERE response_pk = ? ORDER BY pk",
                    (pk,),
                ).fetchall()
                step_rows[pk] = tuple(
                    StepRowRecord(pk=r[0], general_model=pk, step_id=r[1], value=json.loads(r[2]))
                    for r in srows
                )
                arows = self._conn.execute(
                    "SELECT model, pk, values_json FROM auditor_rows"
                    " WHERE response_pk = ? ORDER BY model, pk",
                    (pk,),
                ).fetchall()
                auditor_rows[pk] = tuple(
                    AuditorRowRecord(
                        model=r[0], pk=r[1], general_model=pk, values=tuple(json.loads(r[2]))
                    )
                    for r in arows
                )
        return TaskSnapshot(
            task=_task_from_row(task_row),
            responses=tuple(_response_from_row(r) for r in response_rows),
            step_rows=step_rows,
            auditor_rows=auditor_rows,
        )

    def pk_allocation_counts(self) -> dict[str, int]:
        with self._lock:
            rows = self._conn.execute("SELECT label, allocated FROM pk_counters").fetchall()
        return {label: count for label, count in rows}


def _step_to_json(step: StepDefinition) -> dict[str, Any]:
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


def step_from_json(doc: dict[str, Any]) -> StepDefinition:
    return StepDefinition(
        step_id=doc["step_id"],
        kind=StepKind(doc["kind"]),
        prompt=doc["prompt"],
        options=tuple(doc.get("options", ())),
        required=bool(doc.get("required", True)),
        plugin_kind=doc.get("plugin_kind"),
    )


def _task_from_row(row: tuple) -> TaskDefinition:
    return TaskDefinition(
        task_id=row[0],
        name=row[1],
        description=row[2],
        ordering_mode=OrderingMode(row[3]),
        status=TaskStatus(row[4]),
        created_at=datetime.fromisoformat(row[5]),
        steps=tuple(step_from_json(doc) for doc in json.loads(row[6])),
        auditors=frozenset(json.loads(row[7])),
    )


def _response_from_row(row: tuple) -> ResponseRow:
    return ResponseRow(
        pk=row[0],
        task_id=row[1],
        session_token=row[2],
        worker_id=row[3],
        assignment_id=row[4],
        hit_id=row[5],
        step_order_seed=int(row[6]),
        answers=tuple((sid, v) for sid, v in json.loads(row[7])),
        submitted_at=row[8],
        fingerprint=fingerprint_from_mapping(json.loads(row[9])),
    )
