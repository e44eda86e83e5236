import itertools
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_steps, make_task
from turkey.domain import (
    Aggregation,
    AuditorDescriptor,
    OrderingMode,
    StepDefinition,
    StepKind,
    StepPluginDescriptor,
    TaskStatus,
    builtin_registry,
    close_task,
    create_task,
    fnv1a64,
    instantiate_step_order,
    publish_task,
    validate_step,
)
from turkey.errors import (
    DuplicateAuditor,
    DuplicateKind,
    EmptyTask,
    IllegalTransition,
    InvalidStep,
    MissingAsset,
    TaskNotPublished,
    UnknownAuditorKind,
)

# Independent reference of the pinned PRNG chain, used to freeze the golden
# permutation below and to cross-check the production implementation.
_U64 = (1 << 64) - 1


def ref_fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & _U64
    return h


def ref_splitmix64_stream(seed: int):
    state = seed & _U64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _U64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        yield (z ^ (z >> 31)) & _U64


def ref_shuffle(items, seed):
    out = list(items)
    stream = ref_splitmix64_stream(seed)
    for i in range(len(out) - 1, 0, -1):
        j = next(stream) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


# Golden fixture computed with the reference implementation above.
DEMO_SEED = 11953709441258804118
DEMO_PERMUTATION = ("s4", "s2", "s1", "s3")


class TestValidateStep:
    def test_multiple_choice_needs_two_options(self):
        step = StepDefinition("s1", StepKind.MULTIPLE_CHOICE, "pick", options=("yes",))
        violations = validate_step(step)
        assert len(violations) == 1
        assert "at least 2 options" in violations[0]

    def test_text_response_options_must_be_empty(self):
        step = StepDefinition("s1", StepKind.TEXT_RESPONSE, "say", options=("a", "b"))
        violations = validate_step(step)
        assert any("empty options" in v for v in violations)

    def test_valid_multiple_answer(self):
        step = StepDefinition("s1", StepKind.MULTIPLE_ANSWER, "tick", options=("a", "b", "c"))
        assert validate_step(step) == []

    def test_reports_every_violation_not_only_first(self):
        step = StepDefinition("s1", StepKind.MULTIPLE_CHOICE, "", options=("a", "a"))
        violations = validate_step(step)
        assert len(violations) == 2  # empty prompt + duplicate option strings

    def test_duplicate_options_rejected(self):
        step = StepDefinition("s1", StepKind.MULTIPLE_CHOICE, "pick", options=("a", "a", "b"))
        assert any("distinct" in v for v in validate_step(step))

    def test_custom_requires_plugin_kind(self):
        step = StepDefinition("s1", StepKind.CUSTOM, "do")
        assert any("plugin_kind" in v for v in validate_step(step))


class TestCreateTask:
    def test_draft_with_authored_order(self, registry):
        steps = make_steps(2)
        task = create_task(
            registry,
            name="labels",
            steps=steps,
            auditors=("clicks_total", "mouse_movement"),
        )
        assert task.status is TaskStatus.DRAFT
        assert task.step_ids() == ("s1", "s2")
        assert task.auditors == {"clicks_total", "mouse_movement"}
        assert task.task_id

    def test_duplicate_auditor(self, registry):
        with pytest.raises(DuplicateAuditor):
            create_task(
                registry,
                name="x",
                steps=make_steps(1),
                auditors=("clicks_total", "clicks_total"),
            )

    def test_unknown_auditor(self, registry):
        with pytest.raises(UnknownAuditorKind):
            create_task(registry, name="x", steps=make_steps(1), auditors=("no_such_kind",))

    def test_invalid_step_carries_violations(self, registry):
        bad = StepDefinition("s1", StepKind.MULTIPLE_CHOICE, "pick", options=("only",))
        with pytest.raises(InvalidStep) as exc:
            create_task(registry, name="x", steps=(bad,))
        assert "s1" in exc.value.violations

    def test_duplicate_step_ids_rejected(self, registry):
        steps = (
            StepDefinition("s1", StepKind.TEXT_RESPONSE, "a"),
            StepDefinition("s1", StepKind.TEXT_RESPONSE, "b"),
        )
        with pytest.raises(InvalidStep) as exc:
            create_task(registry, name="x", steps=steps)
        assert any("duplicate step_id" in v for v in exc.value.violations["s1"])


class TestLifecycle:
    def test_publish_draft(self, registry):
        task = make_task(registry, published=False)
        assert publish_task(task).status is TaskStatus.PUBLISHED

    def test_publish_empty_task(self, registry):
        task = make_task(registry, n_steps=0, published=False)
        with pytest.raises(EmptyTask):
            publish_task(task)

    def test_publish_closed_task(self, registry):
        task = close_task(make_task(registry))
        with pytest.raises(IllegalTransition):
            publish_task(task)

    def test_close_draft_is_illegal(self, registry):
        task = make_task(registry, published=False)
        with pytest.raises(IllegalTransition):
            close_task(task)

    @pytest.mark.parametrize(
        "status,op",
        [
            (TaskStatus.PUBLISHED, publish_task),
            (TaskStatus.CLOSED, publish_task),
            (TaskStatus.DRAFT, close_task),
            (TaskStatus.CLOSED, close_task),
        ],
    )
    def test_every_other_transition_raises(self, registry, status, op):
        task = make_task(registry, published=False)
        if status is TaskStatus.PUBLISHED:
            task = publish_task(task)
        elif status is TaskStatus.CLOSED:
            task = close_task(publish_task(task))
        with pytest.raises(IllegalTransition):
            op(task)


class TestRegistry:
    def test_register_custom_auditor(self, registry, tmp_path):
        (tmp_path / "auditors").mkdir()
        (tmp_path / "auditors" / "scroll_depth.js").write_text("// capture\n")
        reg = builtin_registry([tmp_path])
        desc = AuditorDescriptor(
            kind="scroll_depth",
            model_label="survey.auditorscrolldepthdata",
            field_schema=(("max_depth", "integer"),),
            aggregation=Aggregation.COUNTER,
            client_script_ref="auditors/scroll_depth.js",
        )
        reg.register_auditor(desc)
        assert reg.auditor("scroll_depth") is desc

    def test_builtin_collision(self, registry):
        desc = AuditorDescriptor(
            kind="clicks_total",
            model_label="survey.other",
            field_schema=(("count", "integer"),),
            aggregation=Aggregation.COUNTER,
            client_script_ref="auditors/clicks_total.js",
        )
        with pytest.raises(DuplicateKind):
            registry.register_auditor(desc)

    def test_missing_asset(self, registry):
        desc = AuditorDescriptor(
            kind="scroll_depth",
            model_label="survey.auditorscrolldepthdata",
            field_schema=(("max_depth", "integer"),),
            aggregation=Aggregation.COUNTER,
            client_script_ref="auditors/definitely_not_there.js",
        )
        with pytest.raises(MissingAsset):
            registry.register_auditor(desc)

    def test_step_plugin_registration(self, registry, tmp_path):
        (tmp_path / "steps").mkdir()
        (tmp_path / "steps" / "slider.html").write_text("<div></div>\n")
        reg = builtin_registry([tmp_path])
        desc = StepPluginDescriptor(
            kind="slider",
            answer_schema=(("position", "integer"),),
            template_fields=("prompt",),
            render_template_ref="steps/slider.html",
        )
        reg.register_step_plugin(desc)
        assert reg.step_plugin("slider") is desc

    def test_builtins_preregistered(self, registry):
        for kind in (
            "clicks_total",
            "mouse_movement",
            "focus_changes",
            "keypresses_total",
            "resizes_total",
        ):
            assert registry.auditor(kind) is not None
        for kind in ("multiple_choice", "multiple_answer", "text_response"):
            assert registry.step_plugin(kind) is not None

    def test_manifest_loading(self, tmp_path):
        plugin_dir = tmp_path / "plugins"
        plugin_dir.mkdir()
        (tmp_path / "auditors").mkdir()
        (tmp_path / "auditors" / "scroll_depth.js").write_text("// js\n")
        (plugin_dir / "scroll_depth.json").write_text(
            '{"type": "auditor", "kind": "scroll_depth",'
            ' "model_label": "survey.auditorscrolldepthdata",'
            ' "aggregation": "counter", "field_schema": [["max_depth", "integer"]],'
            ' "client_script_ref": "auditors/scroll_depth.js"}'
        )
        reg = builtin_registry([tmp_path])
        assert reg.auditor("scroll_depth") is not None


class TestStepOrder:
    def test_fixed_is_identity_with_seed_zero(self, registry):
        task = make_task(registry)
        order = instantiate_step_order(task, "any-token")
        assert order.permutation == ("s1", "s2", "s3")
        assert order.seed == 0

    def test_single_step_randomized(self, registry):
        task = make_task(registry, n_steps=1, ordering_mode=OrderingMode.RANDOMIZED)
        order = instantiate_step_order(task, "demo")
        assert order.permutation == ("s1",)

    def test_golden_permutation_for_demo_token(self, registry):
        # Frozen from the independent reference implementation in this file.
        assert ref_fnv1a64(b"demo") == DEMO_SEED
        assert tuple(ref_shuffle(["s1", "s2", "s3", "s4"], DEMO_SEED)) == DEMO_PERMUTATION

        task = make_task(registry, n_steps=4, ordering_mode=OrderingMode.RANDOMIZED)
        order = instantiate_step_order(task, "demo")
        assert order.seed == DEMO_SEED
        assert order.permutation == DEMO_PERMUTATION

    def test_unpublished_task_rejected(self, registry):
        task = make_task(registry, published=False)
        with pytest.raises(TaskNotPublished):
            instantiate_step_order(task, "demo")

    def test_matches_reference_chain_for_many_tokens(self, registry):
        task = make_task(registry, n_steps=6, ordering_mode=OrderingMode.RANDOMIZED)
        ids = list(task.step_ids())
        for i in range(200):
            token = f"token-{i}"
            order = instantiate_step_order(task, token)
            assert order.seed == ref_fnv1a64(token.encode())
            assert list(order.permutation) == ref_shuffle(ids, order.seed)

    @given(token=st.text(max_size=40), n=st.integers(min_value=1, max_value=8))
    @settings(max_examples=120, deadline=None)
    def test_bijection_and_determinism(self, token, n):
        registry = builtin_registry()
        task = make_task(registry, n_steps=n, ordering_mode=OrderingMode.RANDOMIZED)
        first = instantiate_step_order(task, token)
        second = instantiate_step_order(task, token)
        assert first == second
        assert sorted(first.permutation) == sorted(task.step_ids())

    @given(token=st.text(max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_fixed_identity_for_every_token(self, token):
        registry = builtin_registry()
        task = make_task(registry, n_steps=5, ordering_mode=OrderingMode.FIXED)
        assert instantiate_step_order(task, token).permutation == task.step_ids()

    def test_chi_square_uniformity_four_steps(self, registry):
        task = make_task(registry, n_steps=4, ordering_mode=OrderingMode.RANDOMIZED)
        bins = Counter(
            instantiate_step_order(task, f"tok{i}").permutation for i in range(24000)
        )
        assert len(bins) == 24
        expected = 24000 / 24
        chi2 = sum(
            (bins[perm] - expected) ** 2 / expected
            for perm in itertools.permutations(task.step_ids())
        )
        assert chi2 < 49.73  # alpha = 0.001 critical value, 23 d.o.f.

    def test_fnv_offset_basis(self):
        assert fnv1a64(b"") == 14695981039346656037
