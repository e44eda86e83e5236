"""Tasks, steps, auditors, the plugin registry, and per-session step ordering."""

from __future__ import annotations

import json
import re
import threading
import uuid
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    DuplicateAuditor,
    DuplicateKind,
    EmptyTask,
    IllegalTransition,
    InvalidDescriptor,
    InvalidStep,
    MissingAsset,
    TaskNotPublished,
    UnknownAuditorKind,
)

SCALAR_TYPES = ("integer", "string", "float")

_KIND_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_U64 = (1 << 64) - 1

# Built-in auditor kinds ship with the package and are registered at startup.
BUILTIN_AUDITOR_KINDS = (
    "clicks_total",
    "mouse_movement",
    "focus_changes",
    "keypresses_total",
    "resizes_total",
)
BUILTIN_STEP_KINDS = ("multiple_choice", "multiple_answer", "text_response")

_PACKAGED_ASSET_ROOT = Path(__file__).resolve().parent / "assets"


class OrderingMode(str, Enum):
    FIXED = "fixed"
    RANDOMIZED = "randomized"


class TaskStatus(str, Enum):
    DRAFT = "draft"
    PUBLISHED = "published"
    CLOSED = "closed"


# The only legal lifecycle moves; anything else raises IllegalTransition.
ALLOWED_TRANSITIONS = {
    (TaskStatus.DRAFT, TaskStatus.PUBLISHED),
    (TaskStatus.PUBLISHED, TaskStatus.CLOSED),
}


class StepKind(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    MULTIPLE_ANSWER = "multiple_answer"
    TEXT_RESPONSE = "text_response"
    CUSTOM = "custom"


class Aggregation(str, Enum):
    COUNTER = "counter"
    EVENT_LIST = "event_list"


@dataclass(frozen=True)
class StepDefinition:
    step_id: str
    kind: StepKind
    prompt: str
    options: tuple[str, ...] = ()
    required: bool = True
    plugin_kind: str | None = None


@dataclass(frozen=True)
class TaskDefinition:
    task_id: str
    name: str
    description: str
    steps: tuple[StepDefinition, ...]
    ordering_mode: OrderingMode
    auditors: frozenset[str]
    status: TaskStatus
    created_at: datetime

    def step_ids(self) -> tuple[str, ...]:
        return tuple(s.step_id for s in self.steps)


@dataclass(frozen=True)
class AuditorDescriptor:
    """Registry entry for one auditor plugin.

    field_schema lists the exported per-row payload fields; the general_model
    link column is implicit and always precedes them in the export.
    """

    kind: str
    model_label: str
    field_schema: tuple[tuple[str, str], ...]
    aggregation: Aggregation
    client_script_ref: str
    client_template_ref: str | None = None


@dataclass(frozen=True)
class StepPluginDescriptor:
    kind: str
    answer_schema: tuple[tuple[str, str], ...]
    template_fields: tuple[str, ...]
    render_template_ref: str
    client_script_ref: str | None = None


@dataclass(frozen=True)
class StepOrder:
    permutation: tuple[str, ...]
    seed: int


def validate_step(step: StepDefinition) -> list[str]:
    """Return every violated invariant for the step; empty list means valid."""
    violations: list[str] = []
    if not step.prompt:
        violations.append("prompt must be nonempty")
    if step.kind in (StepKind.MULTIPLE_CHOICE, StepKind.MULTIPLE_ANSWER):
        if len(step.options) < 2:
            violations.append(f"{step.kind.value} requires at least 2 options")
    else:
        if step.options:
            violations.append(f"{step.kind.value} requires an empty options list")
    if len(set(step.options)) != len(step.options):
        violations.append("option strings must be distinct")
    if step.kind is StepKind.CUSTOM:
        if not step.plugin_kind:
            violations.append("custom step requires a plugin_kind")
    elif step.plugin_kind is not None:
        violations.append("plugin_kind is only valid for custom steps")
    return violations


class PluginRegistry:
    """Auditor and step plugin descriptors, keyed by kind.

    Mutation is serialized; lookups are safe to run concurrently.
    """

    def __init__(self, asset_roots: Sequence[Path | str] = ()):
        self._lock = threading.Lock()
        self._auditors: dict[str, AuditorDescriptor] = {}
        self._step_plugins: dict[str, StepPluginDescriptor] = {}
        roots = [Path(r) for r in asset_roots]
        roots.append(_PACKAGED_ASSET_ROOT)
        self._asset_roots = tuple(roots)

    @property
    def asset_roots(self) -> tuple[Path, ...]:
        return self._asset_roots

    def resolve_asset(self, ref: str) -> Path | None:
        """First existing file for a relative ref, searching user roots first."""
        if not ref or Path(ref).is_absolute() or ".." in Path(ref).parts:
            return None
        for root in self._asset_roots:
            candidate = root / ref
            if candidate.is_file():
                return candidate
        return None

    def auditor(self, kind: str) -> AuditorDescriptor | None:
        return self._auditors.get(kind)

    def auditor_by_model(self, model_label: str) -> AuditorDescriptor | None:
        for desc in self._auditors.values():
            if desc.model_label == model_label:
                return desc
        return None

    def step_plugin(self, kind: str) -> StepPluginDescriptor | None:
        return self._step_plugins.get(kind)

    def auditor_kinds(self) -> tuple[str, ...]:
        return tuple(self._auditors)

    def step_plugin_kinds(self) -> tuple[str, ...]:
        return tuple(self._step_plugins)

    def register_auditor(self, desc: AuditorDescriptor) -> AuditorDescriptor:
        _check_field_schema(desc.field_schema)
        if not _KIND_RE.match(desc.kind):
            raise InvalidDescriptor(f"auditor kind must be snake_case: {desc.kind!r}")
        if "." not in desc.model_label:
            raise InvalidDescriptor(f"model_label must be dotted: {desc.model_label!r}")
        if any(name == "general_model" for name, _ in desc.field_schema):
            raise InvalidDescriptor("general_model is implicit and must not be declared")
        if desc.aggregation is Aggregation.COUNTER and len(desc.field_schema) != 1:
            raise InvalidDescriptor("counter auditors have exactly one payload field")
        with self._lock:
            if desc.kind in self._auditors or desc.kind in self._step_plugins:
                raise DuplicateKind(desc.kind)
            if self.auditor_by_model(desc.model_label) is not None:
                raise DuplicateKind(desc.model_label)
            self._check_asset(desc.client_script_ref)
            if desc.client_template_ref is not None:
                self._check_asset(desc.client_template_ref)
            self._auditors[desc.kind] = desc
        return desc

    def register_step_plugin(self, desc: StepPluginDescriptor) -> StepPluginDescriptor:
        _check_field_schema(desc.answer_schema)
        if not _KIND_RE.match(desc.kind):
            raise InvalidDescriptor(f"step kind must be snake_case: {desc.kind!r}")
        if not desc.answer_schema:
            raise InvalidDescriptor("answer_schema must be nonempty")
        with self._lock:
            if desc.kind in self._step_plugins or desc.kind in self._auditors:
                raise DuplicateKind(desc.kind)
            self._check_asset(desc.render_template_ref)
            if desc.client_script_ref is not None:
                self._check_asset(desc.client_script_ref)
            self._step_plugins[desc.kind] = desc
        return desc

    def load_manifests(self, root: Path | str) -> list[str]:
        """Register every plugin manifest under <root>/plugins/*.json.

        Each manifest is one JSON document per plugin; see README for the
        field list. Returns the registered kinds in load order.
        """
        plugin_dir = Path(root) / "plugins"
        registered: list[str] = []
        if not plugin_dir.is_dir():
            return registered
        for path in sorted(plugin_dir.glob("*.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            kind = descriptor_from_manifest(self, doc)
            registered.append(kind)
        return registered

    def _check_asset(self, ref: str) -> None:
        if self.resolve_asset(ref) is None:
            raise MissingAsset(ref)


def _check_field_schema(schema: Iterable[tuple[str, str]]) -> None:
    seen: set[str] = set()
    for name, scalar in schema:
        if not _KIND_RE.match(name):
            raise InvalidDescriptor(f"field name must be snake_case: {name!r}")
        if scalar not in SCALAR_TYPES:
            raise InvalidDescriptor(f"unknown scalar type {scalar!r} for field {name!r}")
        if name in seen:
            raise InvalidDescriptor(f"duplicate field name {name!r}")
        seen.add(name)


def descriptor_from_manifest(registry: PluginRegistry, doc: dict) -> str:
    kind_of = doc.get("type")
    if kind_of == "auditor":
        desc = AuditorDescriptor(
            kind=doc["kind"],
            model_label=doc["model_label"],
            field_schema=tuple((n, t) for n, t in doc["field_schema"]),
            aggregation=Aggregation(doc["aggregation"]),
            client_script_ref=doc["client_script_ref"],
            client_template_ref=doc.get("client_template_ref"),
        )
        registry.register_auditor(desc)
        return desc.kind
    if kind_of == "step":
        sdesc = StepPluginDescriptor(
            kind=doc["kind"],
            answer_schema=tuple((n, t) for n, t in doc["answer_schema"]),
            template_fields=tuple(doc.get("template_fields", ())),
            render_template_ref=doc["render_template_ref"],
            client_script_ref=doc.get("client_script_ref"),
        )
        registry.register_step_plugin(sdesc)
        return sdesc.kind
    raise InvalidDescriptor(f"manifest type must be 'auditor' or 'step', got {kind_of!r}")


def builtin_auditor_descriptors() -> tuple[AuditorDescriptor, ...]:
    return (
        AuditorDescriptor(
            kind="clicks_total",
            model_label="survey.auditorclickstotaldata",
            field_schema=(("count", "integer"),),
            aggregation=Aggregation.COUNTER,
            client_script_ref="auditors/clicks_total.js",
        ),
        AuditorDescriptor(
            kind="mouse_movement",
            model_label="survey.auditormousemovementdata",
            field_schema=(("t_ms", "integer"), ("x", "integer"), ("y", "integer")),
            aggregation=Aggregation.EVENT_LIST,
            client_script_ref="auditors/mouse_movement.js",
        ),
        AuditorDescriptor(
            kind="focus_changes",
            model_label="survey.auditorfocuschangesdata",
            field_schema=(("t_ms", "integer"), ("state", "string")),
            aggregation=Aggregation.EVENT_LIST,
            client_script_ref="auditors/focus_changes.js",
        ),
        AuditorDescriptor(
            kind="keypresses_total",
            model_label="survey.auditorkeypressestotaldata",
            field_schema=(("count", "integer"),),
            aggregation=Aggregation.COUNTER,
            client_script_ref="auditors/keypresses_total.js",
        ),
        AuditorDescriptor(
            kind="resizes_total",
            model_label="survey.auditorresizestotaldata",
            field_schema=(("count", "integer"),),
            aggregation=Aggregation.COUNTER,
            client_script_ref="auditors/resizes_total.js",
        ),
    )


def builtin_step_descriptors() -> tuple[StepPluginDescriptor, ...]:
    return (
        StepPluginDescriptor(
            kind="multiple_choice",
            answer_schema=(("choice", "integer"),),
            template_fields=("prompt", "options"),
            render_template_ref="steps/multiple_choice.html",
        ),
        StepPluginDescriptor(
            kind="multiple_answer",
            answer_schema=(("choices", "string"),),
            template_fields=("prompt", "options"),
            render_template_ref="steps/multiple_answer.html",
        ),
        StepPluginDescriptor(
            kind="text_response",
            answer_schema=(("text", "string"),),
            template_fields=("prompt",),
            render_template_ref="steps/text_response.html",
        ),
    )


def builtin_registry(asset_roots: Sequence[Path | str] = ()) -> PluginRegistry:
    """Fresh registry with the built-in auditors and step kinds pre-registered."""
    registry = PluginRegistry(asset_roots)
    for desc in builtin_auditor_descriptors():
        registry.register_auditor(desc)
    for sdesc in builtin_step_descriptors():
        registry.register_step_plugin(sdesc)
    for root in asset_roots:
        registry.load_manifests(root)
    return registry


def create_task(
    registry: PluginRegistry,
    *,
    name: str,
    description: str = "",
    steps: Sequence[StepDefinition],
    ordering_mode: OrderingMode = OrderingMode.FIXED,
    auditors: Sequence[str] = (),
    task_id: str | None = None,
    created_at: datetime | None = None,
) -> TaskDefinition:
    """Build a draft task, preserving the authored step order."""
    seen_auditors: set[str] = set()
    for kind in auditors:
        if kind in seen_auditors:
            raise DuplicateAuditor(kind)
        seen_auditors.add(kind)
        if registry.auditor(kind) is None:
            raise UnknownAuditorKind(kind)

    violations: dict[str, list[str]] = {}
    seen_steps: set[str] = set()
    for step in steps:
        step_violations = validate_step(step)
        if step.step_id in seen_steps:
            step_violations = step_violations + ["duplicate step_id"]
        seen_steps.add(step.step_id)
        if (
            step.kind is StepKind.CUSTOM
            and step.plugin_kind
            and registry.step_plugin(step.plugin_kind) is None
        ):
            step_violations = step_violations + [f"unknown plugin kind {step.plugin_kind!r}"]
        if step_violations:
            violations[step.step_id] = step_violations
    if violations:
        raise InvalidStep(violations)

    return TaskDefinition(
        task_id=task_id if task_id is not None else f"t-{uuid.uuid4().hex[:12]}",
        name=name,
        description=description,
        steps=tuple(steps),
        ordering_mode=ordering_mode,
        auditors=frozenset(auditors),
        status=TaskStatus.DRAFT,
        created_at=created_at if created_at is not None else datetime.now(timezone.utc),
    )


def _transition(task: TaskDefinition, target: TaskStatus) -> TaskDefinition:
    if (task.status, target) not in ALLOWED_TRANSITIONS:
        raise IllegalTransition(task.status.value, target.value)
    return replace(task, status=target)


def publish_task(task: TaskDefinition) -> TaskDefinition:
    """Draft -> published; the definition is immutable from here on."""
    if task.status is TaskStatus.DRAFT and not task.steps:
        raise EmptyTask(task.task_id)
    return _transition(task, TaskStatus.PUBLISHED)


def close_task(task: TaskDefinition) -> TaskDefinition:
    return _transition(task, TaskStatus.CLOSED)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over the raw bytes."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _U64
    return h


class SplitMix64:
    """splitmix64 sequence; the per-session shuffle stream."""

    def __init__(self, seed: int):
        self._state = seed & _U64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _U64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        return (z ^ (z >> 31)) & _U64


def instantiate_step_order(task: TaskDefinition, session_token: str) -> StepOrder:
    """Step permutation one session will see; reproducible from the stored seed.

    Fixed ordering keeps the authored order with seed 0. Randomized ordering
    seeds splitmix64 with the FNV-1a hash of the token and runs a Fisher-Yates
    shuffle from the last index down, each swap index drawn by modulo.
    """
    if task.status is not TaskStatus.PUBLISHED:
        raise TaskNotPublished(task.task_id)
    ids = list(task.step_ids())
    if task.ordering_mode is OrderingMode.FIXED:
        return StepOrder(permutation=tuple(ids), seed=0)
    seed = fnv1a64(session_token.encode("utf-8"))
    rng = SplitMix64(seed)
    for i in range(len(ids) - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        ids[i], ids[j] = ids[j], ids[i]
    return StepOrder(permutation=tuple(ids), seed=seed)
