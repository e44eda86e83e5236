"""Deterministic XML export of task data, its strict inverse parser, and CSV.

The document layout (2-space indent, one element per line, LF endings):

    <?xml version="1.0" encoding="UTF-8"?>
    <export version="1">
      <task>
        <task_id>, <name>
        <responses>
          <response>
            <model>, <pk>, <fields>, <fingerprint>, <steps>, <auditors>

Each response's auditors subtree holds one block per configured auditor kind
(blocks sorted by element name, list_items sorted by pk), with rows shaped
model / pk / fields, where fields always leads with the general_model link
back to the owning response. Step answers use the same row shape under
<steps> with model survey.stepanswer and a JSON-encoded <value>.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Iterable

from .audit import (
    FINGERPRINT_FIELDS,
    FINGERPRINT_FLOAT_FIELDS,
    FingerprintVector,
    fingerprint_from_mapping,
)
from .domain import PluginRegistry
from .errors import MalformedXml, SchemaViolation
from .store import RESPONSE_MODEL, STEP_ANSWER_MODEL, TaskSnapshot

EXPORT_VERSION = "1"
_XML_DECL = '<?xml version="1.0" encoding="UTF-8"?>'
_INT_RE = re.compile(r"^-?[0-9]+$")

_RESPONSE_FIELDS = ("worker_id", "assignment_id", "hit_id", "step_order_seed", "submitted_at")


@dataclass(frozen=True)
class ExportStepRow:
    pk: int
    general_model: int
    step_id: str
    value: Any


@dataclass(frozen=True)
class ExportAuditorRow:
    model: str
    pk: int
    general_model: int
    values: tuple[Any, ...]


@dataclass(frozen=True)
class ExportResponse:
    pk: int
    worker_id: str
    assignment_id: str
    hit_id: str
    step_order_seed: int
    submitted_at: str
    fingerprint: FingerprintVector
    steps: tuple[ExportStepRow, ...]
    auditors: tuple[tuple[str, tuple[ExportAuditorRow, ...]], ...]


@dataclass(frozen=True)
class ExportTaskBlock:
    task_id: str
    name: str
    responses: tuple[ExportResponse, ...]


@dataclass(frozen=True)
class ExportDocument:
    version: str
    task: ExportTaskBlock


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def build_document(snapshot: TaskSnapshot, registry: PluginRegistry) -> ExportDocument:
    """Assemble the export tree from one consistent store snapshot."""
    task = snapshot.task
    kinds = sorted(task.auditors)
    responses = []
    for resp in snapshot.responses:
        by_kind: dict[str, list[ExportAuditorRow]] = {kind: [] for kind in kinds}
        for row in snapshot.auditor_rows.get(resp.pk, ()):
            desc = registry.auditor_by_model(row.model)
            if desc is None:
                raise SchemaViolation(row.model, "auditor model label not registered")
            by_kind.setdefault(desc.kind, []).append(
                ExportAuditorRow(
                    model=row.model,
                    pk=row.pk,
                    general_model=row.general_model,
                    values=row.values,
                )
            )
        responses.append(
            ExportResponse(
                pk=resp.pk,
                worker_id=resp.worker_id,
                assignment_id=resp.assignment_id,
                hit_id=resp.hit_id,
                step_order_seed=resp.step_order_seed,
                submitted_at=resp.submitted_at,
                fingerprint=resp.fingerprint,
                steps=tuple(
                    ExportStepRow(
                        pk=s.pk, general_model=s.general_model, step_id=s.step_id, value=s.value
                    )
                    for s in snapshot.step_rows.get(resp.pk, ())
                ),
                auditors=tuple(
                    (kind, tuple(sorted(by_kind[kind], key=lambda r: r.pk)))
                    for kind in sorted(by_kind)
                ),
            )
        )
    return ExportDocument(
        version=EXPORT_VERSION,
        task=ExportTaskBlock(task_id=task.task_id, name=task.name, responses=tuple(responses)),
    )


# --- serialization ---


def _esc(text: str) -> str:
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
        .replace("'", "&apos;")
    )


def _fmt_value(value: Any) -> str:
    if isinstance(value, bool):
        raise SchemaViolation("value", "booleans are not exportable scalars")
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return str(value)


class _Writer:
    def __init__(self) -> None:
        self.lines: list[str] = [_XML_DECL]

    def scalar(self, depth: int, name: str, value: Any) -> None:
        text = _fmt_value(value)
        pad = "  " * depth
        if text == "":
            self.lines.append(f"{pad}<{name}/>")
        else:
            self.lines.append(f"{pad}<{name}>{_esc(text)}</{name}>")

    def open(self, depth: int, name: str, attrs: str = "") -> None:
        self.lines.append(f"{'  ' * depth}<{name}{attrs}>")

    def close(self, depth: int, name: str) -> None:
        self.lines.append(f"{'  ' * depth}</{name}>")

    def empty(self, depth: int, name: str) -> None:
        self.lines.append(f"{'  ' * depth}<{name}/>")

    def render(self) -> bytes:
        return ("\n".join(self.lines) + "\n").encode("utf-8")


def _write_row(
    w: _Writer,
    depth: int,
    model: str,
    pk: int,
    field_values: Iterable[tuple[str, Any]],
) -> None:
    w.open(depth, "list_item")
    w.scalar(depth + 1, "model", model)
    w.scalar(depth + 1, "pk", pk)
    w.open(depth + 1, "fields")
    for name, value in field_values:
        w.scalar(depth + 2, name, value)
    w.close(depth + 1, "fields")
    w.close(depth, "list_item")


def serialize_document(doc: ExportDocument, registry: PluginRegistry) -> bytes:
    """Render the export tree; identical input data yields identical bytes."""
    w = _Writer()
    w.open(0, "export", f' version="{_esc(doc.version)}"')
    w.open(1, "task")
    w.scalar(2, "task_id", doc.task.task_id)
    w.scalar(2, "name", doc.task.name)
    if not doc.task.responses:
        w.empty(2, "responses")
    else:
        w.open(2, "responses")
        for resp in doc.task.responses:
            _write_response(w, 3, resp, registry)
        w.close(2, "responses")
    w.close(1, "task")
    w.close(0, "export")
    return w.render()


def _write_response(w: _Writer, depth: int, resp: ExportResponse, registry: PluginRegistry) -> None:
    w.open(depth, "response")
    w.scalar(depth + 1, "model", RESPONSE_MODEL)
    w.scalar(depth + 1, "pk", resp.pk)
    w.open(depth + 1, "fields")
    w.scalar(depth + 2, "worker_id", resp.worker_id)
    w.scalar(depth + 2, "assignment_id", resp.assignment_id)
    w.scalar(depth + 2, "hit_id", resp.hit_id)
    w.scalar(depth + 2, "step_order_seed", resp.step_order_seed)
    w.scalar(depth + 2, "submitted_at", resp.submitted_at)
    w.close(depth + 1, "fields")
    w.open(depth + 1, "fingerprint")
    for name, value in zip(FINGERPRINT_FIELDS, resp.fingerprint.as_row()):
        w.scalar(depth + 2, name, value)
    w.close(depth + 1, "fingerprint")
    if not resp.steps:
        w.empty(depth + 1, "steps")
    else:
        w.open(depth + 1, "steps")
        for step in resp.steps:
            _write_row(
                w,
                depth + 2,
                STEP_ANSWER_MODEL,
                step.pk,
                (
                    ("general_model", step.general_model),
                    ("step_id", step.step_id),
                    ("value", canonical_json(step.value)),
                ),
            )
        w.close(depth + 1, "steps")
    if not resp.auditors:
        w.empty(depth + 1, "auditors")
    else:
        w.open(depth + 1, "auditors")
        for kind, rows in resp.auditors:
            if not rows:
                w.empty(depth + 2, kind)
                continue
            w.open(depth + 2, kind)
            for row in rows:
                desc = registry.auditor_by_model(row.model)
                if desc is None or len(desc.field_schema) != len(row.values):
                    raise SchemaViolation(row.model, "no field schema registered for model")
                names = tuple(name for name, _ in desc.field_schema)
                _write_row(
                    w,
                    depth + 3,
                    row.model,
                    row.pk,
                    [("general_model", row.general_model)] + list(zip(names, row.values)),
                )
            w.close(depth + 2, kind)
        w.close(depth + 1, "auditors")
    w.close(depth, "response")


def serialize_export(snapshot: TaskSnapshot, registry: PluginRegistry) -> bytes:
    return serialize_document(build_document(snapshot, registry), registry)


# --- parsing ---


def parse_export(data: bytes, registry: PluginRegistry) -> ExportDocument:
    """Strict inverse of serialize_document on its image.

    Unknown elements, out-of-order children, and mistyped scalars are errors.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else 0
        raise MalformedXml(line, str(exc)) from exc

    if root.tag != "export":
        raise SchemaViolation("/", f"root element must be export, got {root.tag}")
    if dict(root.attrib) != {"version": EXPORT_VERSION}:
        raise SchemaViolation("export", "export must carry exactly version=\"1\"")
    task_el = _only_child(root, "export", "task")
    children = _children(task_el, "export/task", ["task_id", "name", "responses"])
    task_id = _text(children[0])
    name = _text(children[1])
    responses_el = children[2]

    responses: list[ExportResponse] = []
    last_pk = 0
    for idx, resp_el in enumerate(list(responses_el)):
        path = f"export/task/responses/response[{idx}]"
        if resp_el.tag != "response":
            raise SchemaViolation(path, f"unexpected element {resp_el.tag}")
        _no_attrs(resp_el, path)
        resp = _parse_response(resp_el, path, registry)
        if resp.pk <= last_pk:
            raise SchemaViolation(path, "response pks must be strictly ascending")
        last_pk = resp.pk
        responses.append(resp)
    _container_text_ok(responses_el, "export/task/responses")

    return ExportDocument(
        version=EXPORT_VERSION,
        task=ExportTaskBlock(task_id=task_id, name=name, responses=tuple(responses)),
    )


def _parse_response(el: ET.Element, path: str, registry: PluginRegistry) -> ExportResponse:
    children = _children(
        el, path, ["model", "pk", "fields", "fingerprint", "steps", "auditors"]
    )
    model = _text(children[0])
    if model != RESPONSE_MODEL:
        raise SchemaViolation(f"{path}/model", f"expected {RESPONSE_MODEL}, got {model}")
    pk = _parse_int(_text(children[1]), f"{path}/pk")

    fields = _children(children[2], f"{path}/fields", list(_RESPONSE_FIELDS))
    worker_id = _text(fields[0])
    assignment_id = _text(fields[1])
    hit_id = _text(fields[2])
    seed = _parse_int(_text(fields[3]), f"{path}/fields/step_order_seed")
    submitted_at = _text(fields[4])
    try:
        datetime.fromisoformat(submitted_at)
    except ValueError as exc:
        raise SchemaViolation(f"{path}/fields/submitted_at", str(exc)) from exc

    fp_els = _children(children[3], f"{path}/fingerprint", list(FINGERPRINT_FIELDS))
    fp_values: dict[str, Any] = {}
    for fp_el, field_name in zip(fp_els, FINGERPRINT_FIELDS):
        fp_path = f"{path}/fingerprint/{field_name}"
        if field_name in FINGERPRINT_FLOAT_FIELDS:
            fp_values[field_name] = _parse_float(_text(fp_el), fp_path)
        else:
            fp_values[field_name] = _parse_int(_text(fp_el), fp_path)
    fingerprint = fingerprint_from_mapping(fp_values)

    steps = _parse_steps(children[4], f"{path}/steps", pk)
    auditors = _parse_auditors(children[5], f"{path}/auditors", pk, registry)
    return ExportResponse(
        pk=pk,
        worker_id=worker_id,
        assignment_id=assignment_id,
        hit_id=hit_id,
        step_order_seed=seed,
        submitted_at=submitted_at,
        fingerprint=fingerprint,
        steps=steps,
        auditors=auditors,
    )


def _parse_steps(el: ET.Element, path: str, response_pk: int) -> tuple[ExportStepRow, ...]:
    _container_text_ok(el, path)
    rows: list[ExportStepRow] = []
    last_pk = 0
    for idx, item in enumerate(list(el)):
        item_path = f"{path}/list_item[{idx}]"
        if item.tag != "list_item":
            raise SchemaViolation(item_path, f"unexpected element {item.tag}")
        model, pk, field_els = _parse_row_shell(item, item_path)
        if model != STEP_ANSWER_MODEL:
            raise SchemaViolation(f"{item_path}/model", f"expected {STEP_ANSWER_MODEL}")
        named = _children(field_els, f"{item_path}/fields", ["general_model", "step_id", "value"])
        general_model = _parse_int(_text(named[0]), f"{item_path}/fields/general_model")
        if general_model != response_pk:
            raise SchemaViolation(
                f"{item_path}/fields/general_model", "does not reference the owning response"
            )
        if pk <= last_pk:
            raise SchemaViolation(item_path, "list_item pks must be strictly ascending")
        last_pk = pk
        try:
            value = json.loads(_text(named[2]))
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"{item_path}/fields/value", f"invalid JSON: {exc}") from exc
        rows.append(
            ExportStepRow(pk=pk, general_model=general_model, step_id=_text(named[1]), value=value)
        )
    return tuple(rows)


def _parse_auditors(
    el: ET.Element, path: str, response_pk: int, registry: PluginRegistry
) -> tuple[tuple[str, tuple[ExportAuditorRow, ...]], ...]:
    _container_text_ok(el, path)
    blocks: list[tuple[str, tuple[ExportAuditorRow, ...]]] = []
    previous_kind = ""
    for block in list(el):
        kind = block.tag
        block_path = f"{path}/{kind}"
        _no_attrs(block, block_path)
        if kind <= previous_kind:
            raise SchemaViolation(block_path, "auditor blocks must be sorted by element name")
        previous_kind = kind
        desc = registry.auditor(kind)
        if desc is None:
            raise SchemaViolation(block_path, f"unknown auditor kind {kind!r}")
        _container_text_ok(block, block_path)
        rows: list[ExportAuditorRow] = []
        last_pk = 0
        for idx, item in enumerate(list(block)):
            item_path = f"{block_path}/list_item[{idx}]"
            if item.tag != "list_item":
                raise SchemaViolation(item_path, f"unexpected element {item.tag}")
            model, pk, field_els = _parse_row_shell(item, item_path)
            if model != desc.model_label:
                raise SchemaViolation(f"{item_path}/model", f"expected {desc.model_label}")
            expected = ["general_model"] + [n for n, _ in desc.field_schema]
            named = _children(field_els, f"{item_path}/fields", expected)
            general_model = _parse_int(_text(named[0]), f"{item_path}/fields/general_model")
            if general_model != response_pk:
                raise SchemaViolation(
                    f"{item_path}/fields/general_model", "does not reference the owning response"
                )
            if pk <= last_pk:
                raise SchemaViolation(item_path, "list_item pks must be strictly ascending")
            last_pk = pk
            values: list[Any] = []
            for value_el, (fname, scalar) in zip(named[1:], desc.field_schema):
                vpath = f"{item_path}/fields/{fname}"
                text = _text(value_el)
                if scalar == "integer":
                    values.append(_parse_int(text, vpath))
                elif scalar == "float":
                    values.append(_parse_float(text, vpath))
                else:
                    values.append(text)
            rows.append(
                ExportAuditorRow(
                    model=model, pk=pk, general_model=general_model, values=tuple(values)
                )
            )
        blocks.append((kind, tuple(rows)))
    return tuple(blocks)


def _parse_row_shell(item: ET.Element, path: str) -> tuple[str, int, ET.Element]:
    children = _children(item, path, ["model", "pk", "fields"])
    model = _text(children[0])
    pk = _parse_int(_text(children[1]), f"{path}/pk")
    return model, pk, children[2]


# --- strict walking helpers ---


def _no_attrs(el: ET.Element, path: str) -> None:
    if el.attrib:
        raise SchemaViolation(path, f"unexpected attributes {sorted(el.attrib)}")


def _container_text_ok(el: ET.Element, path: str) -> None:
    if el.text is not None and el.text.strip():
        raise SchemaViolation(path, "unexpected text content")
    for child in el:
        if child.tail is not None and child.tail.strip():
            raise SchemaViolation(path, "unexpected trailing text")


def _children(el: ET.Element, path: str, expected: list[str]) -> list[ET.Element]:
    _no_attrs(el, path)
    _container_text_ok(el, path)
    actual = [c.tag for c in el]
    if actual != expected:
        raise SchemaViolation(path, f"children must be {expected}, got {actual}")
    return list(el)


def _only_child(el: ET.Element, path: str, name: str) -> ET.Element:
    children = list(el)
    if len(children) != 1 or children[0].tag != name:
        raise SchemaViolation(path, f"exactly one <{name}> child required")
    _container_text_ok(el, path)
    return children[0]


def _text(el: ET.Element) -> str:
    if len(el):
        raise SchemaViolation(el.tag, "scalar element must not have children")
    return el.text if el.text is not None else ""


def _parse_int(text: str, path: str) -> int:
    if not _INT_RE.match(text):
        raise SchemaViolation(path, f"not an integer: {text!r}")
    return int(text)


def _parse_float(text: str, path: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise SchemaViolation(path, f"not a float: {text!r}") from exc
    if math.isnan(value) or math.isinf(value):
        raise SchemaViolation(path, f"non-finite float: {text!r}")
    return value


# --- fingerprint CSV ---


def fingerprint_csv(doc: ExportDocument) -> str:
    """Flat CSV of fingerprints, one row per response, RFC-4180 quoting."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(FINGERPRINT_FIELDS)
    for resp in doc.task.responses:
        writer.writerow(resp.fingerprint.as_row())
    return out.getvalue()
