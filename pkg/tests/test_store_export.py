import random
from datetime import datetime, timezone

import pytest

from conftest import make_task
from turkey.audit import (
    AuditEvent,
    SessionEventLog,
    auditor_rows_for_log,
    extract_fingerprint,
    finalize_log,
    validate_event,
)
from turkey.domain import (
    Aggregation,
    AuditorDescriptor,
    OrderingMode,
    StepOrder,
    builtin_registry,
    instantiate_step_order,
)
from turkey.errors import DuplicateAssignment, SchemaViolation, StorageFailure, TaskNotFound
from turkey.store import STEP_ANSWER_MODEL, SessionRow, Store
from turkey.xmlio import (
    build_document,
    fingerprint_csv,
    parse_export,
    serialize_export,
)

NOW = datetime(2026, 8, 10, 12, 0, 0, tzinfo=timezone.utc)

# Exported auditor subtree pinned for a first response with exactly 4 clicks
# and only the clicks_total auditor configured.
CLICKS_SUBTREE = """<auditors>
  <clicks_total>
    <list_item>
      <model>survey.auditorclickstotaldata</model>
      <pk>1</pk>
      <fields>
        <general_model>1</general_model>
        <count>4</count>
      </fields>
    </list_item>
  </clicks_total>
</auditors>"""


def extract_subtree(xml_bytes, opening="<auditors>"):
    lines = xml_bytes.decode("utf-8").splitlines()
    start = next(i for i, line in enumerate(lines) if line.strip() == opening)
    indent = len(lines[start]) - len(lines[start].lstrip())
    end = next(
        i for i, line in enumerate(lines[start:], start) if line.strip() == "</auditors>"
    )
    return "\n".join(line[indent:] for line in lines[start : end + 1])


def open_session(store, task, token="a" * 32, assignment="A1", worker="W1", hit="H1"):
    order = instantiate_step_order(task, token)
    store.create_session(
        SessionRow(
            token=token,
            task_id=task.task_id,
            worker_id=worker,
            assignment_id=assignment,
            hit_id=hit,
            turk_submit_to="https://workersandbox.mturk.com",
            step_order=order,
            started_at=NOW,
            state="open",
        )
    )
    return order


def build_log(task, registry, events, token="a" * 32):
    log = SessionEventLog(
        session_token=token, allowed_kinds=frozenset(task.auditors), registry=registry
    )
    for event in events:
        reason = validate_event(event, log)
        assert reason is None, reason
    return finalize_log(log)


def submit(store, registry, task, log, *, token="a" * 32, end_ms=None, answers=None):
    end = end_ms if end_ms is not None else max(log.last_event_ms(), 1000)
    fp = extract_fingerprint(log, end)
    rows = [
        (desc.model_label, values)
        for desc, values in auditor_rows_for_log(log, task.auditors, registry)
    ]
    if answers is None:
        answers = [(s.step_id, f"answer for {s.step_id}") for s in task.steps]
    return store.persist_submission(
        token, answers=answers, auditor_rows=rows, fingerprint=fp, submitted_at=NOW
    )


def clicks(n, start=10, gap=10):
    return [
        AuditEvent("clicks_total", start + i * gap, {"x_px": 5, "y_px": 6, "target": "button"})
        for i in range(n)
    ]


@pytest.fixture
def store():
    s = Store(":memory:")
    yield s
    s.close()


class TestPkAllocation:
    def test_first_allocation_is_one(self, store):
        assert store.allocate_pk("survey.auditorclickstotaldata") == 1

    def test_counter_increments(self, store):
        store.allocate_pk("survey.auditorclickstotaldata")
        store.allocate_pk("survey.auditorclickstotaldata")
        assert store.allocate_pk("survey.auditorclickstotaldata") == 3

    def test_labels_are_independent(self, store):
        store.allocate_pk("survey.auditorclickstotaldata")
        assert store.allocate_pk("survey.auditormousemovementdata") == 1


class TestPersist:
    def test_clicks_counter_row(self, store, registry):
        task = make_task(registry, auditors=("clicks_total",))
        store.insert_task(task)
        open_session(store, task)
        log = build_log(task, registry, clicks(4))
        pk = submit(store, registry, task, log)
        snap = store.task_snapshot(task.task_id)
        rows = snap.auditor_rows[pk]
        assert len(rows) == 1
        assert rows[0].model == "survey.auditorclickstotaldata"
        assert rows[0].general_model == pk
        assert rows[0].values == (4,)

    def test_zero_mouse_samples(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        open_session(store, task)
        log = build_log(task, registry, clicks(0))
        pk = submit(store, registry, task, log)
        rows = store.task_snapshot(task.task_id).auditor_rows[pk]
        models = [r.model for r in rows]
        assert models == ["survey.auditorclickstotaldata"]
        assert rows[0].values == (0,)

    def test_three_mouse_samples_three_rows(self, store, registry):
        task = make_task(registry, auditors=("mouse_movement",))
        store.insert_task(task)
        open_session(store, task)
        events = [
            AuditEvent("mouse_movement", t, {"x_px": t, "y_px": 2 * t}) for t in (5, 10, 15)
        ]
        log = build_log(task, registry, events)
        pk = submit(store, registry, task, log)
        rows = store.task_snapshot(task.task_id).auditor_rows[pk]
        assert [r.values for r in rows] == [(5, 5, 10), (10, 10, 20), (15, 15, 30)]
        assert [r.pk for r in rows] == [1, 2, 3]

    def test_duplicate_assignment_rejected(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        open_session(store, task, token="a" * 32, assignment="A1")
        with pytest.raises(DuplicateAssignment):
            open_session(store, task, token="b" * 32, assignment="A1")

    def test_abandoned_assignment_reusable(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        open_session(store, task, token="a" * 32, assignment="A1")
        stale = store.abandon_stale_sessions(
            datetime(2026, 8, 10, 17, 0, 0, tzinfo=timezone.utc), ttl_secs=3600
        )
        assert stale == ["a" * 32]
        open_session(store, task, token="b" * 32, assignment="A1")

    def test_submission_to_closed_session_fails(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        open_session(store, task)
        log = build_log(task, registry, clicks(1))
        submit(store, registry, task, log)
        with pytest.raises(StorageFailure):
            submit(store, registry, task, log)


class TestFaultInjection:
    @pytest.mark.parametrize(
        "point", ["before_response", "after_response", "after_step_rows", "after_auditor_rows", "before_commit"]
    )
    def test_rollback_leaves_no_partial_rows(self, store, registry, point):
        task = make_task(registry, auditors=("clicks_total", "mouse_movement"))
        store.insert_task(task)
        open_session(store, task)
        log = build_log(
            task,
            registry,
            clicks(3) + [AuditEvent("mouse_movement", 7, {"x_px": 1, "y_px": 2})],
        )

        def boom(label):
            if label == point:
                raise RuntimeError(f"injected at {label}")

        store.fault_hook = boom
        with pytest.raises(RuntimeError):
            submit(store, registry, task, log)
        store.fault_hook = None

        snap = store.task_snapshot(task.task_id)
        assert snap.responses == ()
        assert store.get_session("a" * 32).state == "open"
        assert store.pk_allocation_counts() == {}  # allocations rolled back too

        # A retry after the fault clears must fully succeed.
        pk = submit(store, registry, task, log)
        snap = store.task_snapshot(task.task_id)
        assert [r.pk for r in snap.responses] == [pk]
        assert len(snap.auditor_rows[pk]) == 1 + 1  # clicks counter + 1 mouse row


class TestSerialize:
    def test_fig2_subtree_byte_exact(self, store, registry):
        task = make_task(registry, auditors=("clicks_total",))
        store.insert_task(task)
        open_session(store, task)
        log = build_log(task, registry, clicks(4))
        submit(store, registry, task, log)
        xml = serialize_export(store.task_snapshot(task.task_id), registry)
        assert extract_subtree(xml) == CLICKS_SUBTREE

    def test_zero_responses_empty_element(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        xml = serialize_export(store.task_snapshot(task.task_id), registry)
        text = xml.decode("utf-8")
        assert "    <responses/>\n" in text
        parse_export(xml, registry)  # still well-formed and schema-valid

    def test_deterministic_bytes(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        open_session(store, task)
        log = build_log(task, registry, clicks(2))
        submit(store, registry, task, log)
        first = serialize_export(store.task_snapshot(task.task_id), registry)
        second = serialize_export(store.task_snapshot(task.task_id), registry)
        assert first == second

    def test_unknown_task(self, store):
        with pytest.raises(TaskNotFound):
            store.task_snapshot("nope")

    def test_two_responses_round_trip(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        open_session(store, task, token="a" * 32, assignment="A1")
        submit(store, registry, task, build_log(task, registry, clicks(2)), token="a" * 32)
        open_session(store, task, token="b" * 32, assignment="A2")
        log2 = build_log(
            task,
            registry,
            clicks(1) + [AuditEvent("mouse_movement", 3, {"x_px": 9, "y_px": 9})],
            token="b" * 32,
        )
        submit(store, registry, task, log2, token="b" * 32)

        snap = store.task_snapshot(task.task_id)
        doc = parse_export(serialize_export(snap, registry), registry)
        assert doc == build_document(snap, registry)
        assert [r.pk for r in doc.task.responses] == [1, 2]


class TestParse:
    def wrap_fig2(self):
        # The pinned fragment embedded in the document envelope.
        indented = "\n".join("        " + line for line in CLICKS_SUBTREE.splitlines())
        return (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            '<export version="1">\n'
            "  <task>\n"
            "    <task_id>t1</task_id>\n"
            "    <name>labels</name>\n"
            "    <responses>\n"
            "      <response>\n"
            "        <model>survey.response</model>\n"
            "        <pk>1</pk>\n"
            "        <fields>\n"
            "          <worker_id>W1</worker_id>\n"
            "          <assignment_id>A1</assignment_id>\n"
            "          <hit_id>H1</hit_id>\n"
            "          <step_order_seed>0</step_order_seed>\n"
            "          <submitted_at>2026-08-10T12:00:00+00:00</submitted_at>\n"
            "        </fields>\n"
            "        <fingerprint>\n"
            "          <total_time_ms>1000</total_time_ms>\n"
            "          <clicks_count>4</clicks_count>\n"
            "          <keypress_count>0</keypress_count>\n"
            "          <resize_count>0</resize_count>\n"
            "          <mouse_sample_count>0</mouse_sample_count>\n"
            "          <mouse_path_px>0.0</mouse_path_px>\n"
            "          <mouse_net_displacement_px>0.0</mouse_net_displacement_px>\n"
            "          <focus_loss_count>0</focus_loss_count>\n"
            "          <unfocused_ms>0</unfocused_ms>\n"
            "          <dwell_mean_ms>10.0</dwell_mean_ms>\n"
            "          <dwell_median_ms>10.0</dwell_median_ms>\n"
            "          <dwell_max_ms>10</dwell_max_ms>\n"
            "        </fingerprint>\n"
            "        <steps/>\n"
            + indented
            + "\n      </response>\n"
            "    </responses>\n"
            "  </task>\n"
            "</export>\n"
        )

    def test_fig2_fragment_parses_to_one_row(self, registry):
        doc = parse_export(self.wrap_fig2().encode("utf-8"), registry)
        response = doc.task.responses[0]
        blocks = dict(response.auditors)
        rows = blocks["clicks_total"]
        assert len(rows) == 1
        row = rows[0]
        assert row.model == "survey.auditorclickstotaldata"
        assert row.pk == 1
        assert row.general_model == 1
        assert row.values == (4,)

    def test_non_integer_pk_rejected(self, registry):
        bad = self.wrap_fig2().replace("<pk>1</pk>", "<pk>x</pk>", 1)
        with pytest.raises(SchemaViolation) as exc:
            parse_export(bad.encode("utf-8"), registry)
        assert "not an integer" in exc.value.reason

    def test_unknown_element_rejected(self, registry):
        bad = self.wrap_fig2().replace(
            "<worker_id>W1</worker_id>", "<worker_id>W1</worker_id>\n          <extra>1</extra>"
        )
        with pytest.raises(SchemaViolation):
            parse_export(bad.encode("utf-8"), registry)

    def test_out_of_order_children_rejected(self, registry):
        bad = self.wrap_fig2().replace(
            "          <worker_id>W1</worker_id>\n          <assignment_id>A1</assignment_id>",
            "          <assignment_id>A1</assignment_id>\n          <worker_id>W1</worker_id>",
        )
        with pytest.raises(SchemaViolation):
            parse_export(bad.encode("utf-8"), registry)

    def test_malformed_xml_carries_line(self, registry):
        from turkey.errors import MalformedXml

        with pytest.raises(MalformedXml) as exc:
            parse_export(b"<export version=\"1\">\n<task>\n", registry)
        assert exc.value.line >= 1

    def test_mismatched_general_model_rejected(self, registry):
        bad = self.wrap_fig2().replace(
            "<general_model>1</general_model>", "<general_model>2</general_model>"
        )
        with pytest.raises(SchemaViolation):
            parse_export(bad.encode("utf-8"), registry)

    def test_unsorted_auditor_blocks_rejected(self, store, registry):
        task = make_task(registry, auditors=("clicks_total", "mouse_movement"))
        store.insert_task(task)
        open_session(store, task)
        submit(store, registry, task, build_log(task, registry, clicks(1)))
        xml = serialize_export(store.task_snapshot(task.task_id), registry).decode()
        # Swap the two auditor blocks wholesale.
        swapped = xml.replace(
            "<clicks_total>", "<TMP>"
        ).replace("</clicks_total>", "</TMP>").replace(
            "<mouse_movement/>", "<clicks_total/>"
        ).replace("<TMP>", "<mouse_movement>").replace("</TMP>", "</mouse_movement>")
        with pytest.raises(SchemaViolation):
            parse_export(swapped.encode(), registry)


class TestEscaping:
    def test_metacharacters_survive_round_trip(self, store, registry):
        task = make_task(registry, auditors=("clicks_total",))
        store.insert_task(task)
        open_session(store, task)
        log = build_log(task, registry, clicks(1))
        nasty = 'quote " & <tag> \' 日本語 🦃'
        submit(
            store,
            registry,
            task,
            log,
            answers=[("s1", nasty), ("s2", [0, 2]), ("s3", 1)],
        )
        snap = store.task_snapshot(task.task_id)
        xml = serialize_export(snap, registry)
        assert b"&lt;tag&gt;" in xml
        assert b"&amp;" in xml
        doc = parse_export(xml, registry)
        values = {s.step_id: s.value for s in doc.task.responses[0].steps}
        assert values["s1"] == nasty
        assert values["s2"] == [0, 2]
        assert values["s3"] == 1


class TestRandomizedRoundTrip:
    def test_round_trip_random_tasks(self, tmp_path):
        root = tmp_path / "assets"
        (root / "auditors").mkdir(parents=True)
        (root / "auditors" / "scroll_depth.js").write_text("// js\n")
        registry = builtin_registry([root])
        registry.register_auditor(
            AuditorDescriptor(
                kind="scroll_depth",
                model_label="survey.auditorscrolldepthdata",
                field_schema=(("t_ms", "integer"), ("depth_px", "integer"), ("ratio", "float")),
                aggregation=Aggregation.EVENT_LIST,
                client_script_ref="auditors/scroll_depth.js",
            )
        )
        rng = random.Random(11)
        store = Store(":memory:")
        kinds = [
            "clicks_total",
            "mouse_movement",
            "focus_changes",
            "keypresses_total",
            "resizes_total",
            "scroll_depth",
        ]
        for round_no in range(25):
            auditors = rng.sample(kinds, rng.randint(1, len(kinds)))
            task = make_task(
                registry,
                n_steps=rng.randint(1, 4),
                ordering_mode=rng.choice(list(OrderingMode)),
                auditors=auditors,
                task_id=f"rt{round_no}",
            )
            store.insert_task(task)
            for r in range(rng.randint(0, 4)):
                token = f"{round_no:02d}{r}".ljust(32, "f")
                open_session(store, task, token=token, assignment=f"A{round_no}-{r}")
                log = SessionEventLog(
                    session_token=token,
                    allowed_kinds=frozenset(auditors),
                    registry=registry,
                )
                for _ in range(rng.randint(0, 60)):
                    kind = rng.choice(auditors)
                    t = rng.randrange(50000)
                    if kind == "clicks_total":
                        event = AuditEvent(kind, t, {"x_px": 1, "y_px": 2, "target": "q < & '"})
                    elif kind == "mouse_movement":
                        event = AuditEvent(kind, t, {"x_px": rng.randrange(999), "y_px": 3})
                    elif kind == "focus_changes":
                        event = AuditEvent(kind, t, {"state": rng.choice(["focus", "blur"])})
                    elif kind == "keypresses_total":
                        event = AuditEvent(kind, t, {})
                    elif kind == "resizes_total":
                        event = AuditEvent(kind, t, {"width_px": 10, "height_px": 20})
                    else:
                        event = AuditEvent(
                            kind, t, {"depth_px": rng.randrange(4000), "ratio": rng.random()}
                        )
                    assert validate_event(event, log) is None
                finalize_log(log)
                answers = []
                for s in task.steps:
                    answers.append(
                        (s.step_id, rng.choice(['weird "<>&\'" text', [1, 2], 0, {"k": "v"}]))
                    )
                submit_args = dict(token=token, answers=answers)
                submit(store, registry, task, log, **submit_args)
            snap = store.task_snapshot(task.task_id)
            data = serialize_export(snap, registry)
            doc = parse_export(data, registry)
            assert doc == build_document(snap, registry)
        store.close()


class TestFingerprintCsv:
    def test_header_and_rows(self, store, registry):
        task = make_task(registry)
        store.insert_task(task)
        open_session(store, task)
        submit(store, registry, task, build_log(task, registry, clicks(3)))
        doc = build_document(store.task_snapshot(task.task_id), registry)
        text = fingerprint_csv(doc)
        lines = text.split("\r\n")
        assert lines[0].startswith("total_time_ms,clicks_count,")
        assert len([l for l in lines if l]) == 2
        assert lines[1].split(",")[1] == "3"
